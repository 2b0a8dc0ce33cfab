"""retok: post-hoc tokenization optimization for trained text classifiers."""

__version__ = "0.1.0"
