"""Minimal reverse-mode autodiff with the neural blocks used in this package.

Dense float64 tensors over numpy, a tape built implicitly through parent
links, and exactly the operators the BiLSTM classifier, the span tokenizer,
and the BiLSTM-CRF tagger need. No GPU, no general broadcasting beyond
numpy-compatible elementwise ops.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

# When True, every op output is checked for NaN/Inf.
DEBUG_FINITE = False

_ids = itertools.count()

WEIGHT_FORMAT_VERSION = 1


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False,
                 parents: tuple = (), backward: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        if DEBUG_FINITE and not np.all(np.isfinite(self.data)):
            raise FloatingPointError("non-finite tensor value")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward
        self._id = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if node._id in seen or not node.requires_grad:
                continue
            seen.add(node._id)
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64)
        else:
            self.grad += grad

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"


def constant(data) -> Tensor:
    return Tensor(data)


def _shape_error(op: str, *tensors: Tensor) -> ValueError:
    shapes = ", ".join(str(t.shape) for t in tensors)
    return ValueError(f"{op}: incompatible shapes {shapes}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise _shape_error("add", a, b) from None

    def bwd(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    return Tensor(data, parents=(a, b), backward=bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise _shape_error("mul", a, b) from None

    def bwd(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    return Tensor(data, parents=(a, b), backward=bwd)


def scale(a: Tensor, c: float) -> Tensor:
    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * c)

    return Tensor(a.data * c, parents=(a,), backward=bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise _shape_error("matmul", a, b)
    data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    return Tensor(data, parents=(a, b), backward=bwd)


def transpose(a: Tensor) -> Tensor:
    def bwd(g):
        if a.requires_grad:
            a.accumulate(g.T)

    return Tensor(a.data.T, parents=(a,), backward=bwd)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("concat of zero tensors")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(start, stop)
                t.accumulate(g[tuple(sl)])

    return Tensor(data, parents=tuple(tensors), backward=bwd)


def rows(a: Tensor, idx) -> Tensor:
    """Row gather (embedding lookup); backward scatters with accumulation."""
    idx = np.asarray(idx, dtype=np.intp)
    data = a.data[idx]

    def bwd(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            np.add.at(acc, idx, g)
            a.accumulate(acc)

    return Tensor(data, parents=(a,), backward=bwd)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise _shape_error("slice_cols", a)
    data = a.data[:, start:stop]

    def bwd(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            acc[:, start:stop] = g
            a.accumulate(acc)

    return Tensor(data, parents=(a,), backward=bwd)


def pick(a: Tensor, index: tuple[int, ...]) -> Tensor:
    """Single-element selection as a scalar tensor."""
    data = a.data[index]

    def bwd(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            acc[index] = g
            a.accumulate(acc)

    return Tensor(data, parents=(a,), backward=bwd)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * (1.0 - out * out))

    return Tensor(out, parents=(a,), backward=bwd)


def sigmoid(a: Tensor) -> Tensor:
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * out * (1.0 - out))

    return Tensor(out, parents=(a,), backward=bwd)


def logsigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(x)), stable for large |x|."""
    x = a.data
    out = np.where(x >= 0, -np.log1p(np.exp(-np.abs(x))),
                   x - np.log1p(np.exp(-np.abs(x))))
    sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * (1.0 - sig))

    return Tensor(out, parents=(a,), backward=bwd)


def logsumexp(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    m = np.max(a.data, axis=axis, keepdims=True)
    shifted = np.exp(a.data - m)
    total = np.sum(shifted, axis=axis, keepdims=True)
    out = m + np.log(total)
    soft = shifted / total
    if not keepdims:
        out = np.squeeze(out, axis=axis) if axis is not None else out.reshape(())

    def bwd(g):
        if a.requires_grad:
            gg = np.asarray(g)
            if not keepdims and axis is not None:
                gg = np.expand_dims(gg, axis=axis)
            a.accumulate(gg * soft)

    return Tensor(out, parents=(a,), backward=bwd)


def log_softmax(a: Tensor) -> Tensor:
    """Row-wise log softmax for a 2-D tensor."""
    if a.data.ndim != 2:
        raise _shape_error("log_softmax", a)
    m = np.max(a.data, axis=1, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g - soft * g.sum(axis=1, keepdims=True))

    return Tensor(out, parents=(a,), backward=bwd)


def tensor_sum(a: Tensor, axis: int | None = None) -> Tensor:
    data = a.data.sum(axis=axis)

    def bwd(g):
        if a.requires_grad:
            if axis is None:
                a.accumulate(np.full_like(a.data, 1.0) * g)
            else:
                a.accumulate(np.expand_dims(np.asarray(g), axis=axis)
                             * np.ones_like(a.data))

    return Tensor(data, parents=(a,), backward=bwd)


def mean(a: Tensor) -> Tensor:
    return scale(tensor_sum(a), 1.0 / a.data.size)


def stack_means(tensors: list[Tensor]) -> Tensor:
    """Mean of a list of scalar tensors."""
    if not tensors:
        raise ValueError("mean of zero tensors")
    total = tensors[0]
    for t in tensors[1:]:
        total = add(total, t)
    return scale(total, 1.0 / len(tensors))


# ---------------------------------------------------------------------------
# Parameters, initialization, optimization


class ParamSet:
    """Named parameter tensors with per-parameter Adam state."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def grad_norm(self) -> float:
        total = 0.0
        for t in self.params.values():
            if t.grad is not None:
                total += float(np.sum(t.grad * t.grad))
        return math.sqrt(total)

    def clip_grads(self, max_norm: float) -> None:
        norm = self.grad_norm()
        if norm > max_norm > 0:
            factor = max_norm / norm
            for t in self.params.values():
                if t.grad is not None:
                    t.grad *= factor

    def adam_step(self, lr: float = 1e-3, beta1: float = 0.9,
                  beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.step_count += 1
        k = self.step_count
        for name, t in self.params.items():
            g = t.grad
            if g is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= beta1
            m += (1 - beta1) * g
            v *= beta2
            v += (1 - beta2) * (g * g)
            m_hat = m / (1 - beta1 ** k)
            v_hat = v / (1 - beta2 ** k)
            t.data -= lr * m_hat / (np.sqrt(v_hat) + eps)

    def state_copy(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            if t.data.shape != state[name].shape:
                raise ValueError(f"shape mismatch for {name!r}")
            t.data[...] = state[name]

    # -- persistence: JSON manifest + little-endian float64 blob

    def save(self, manifest_path: str | Path) -> None:
        manifest_path = Path(manifest_path)
        blob_path = manifest_path.with_suffix(".bin")
        entries = []
        offset = 0
        chunks = []
        for name in sorted(self.params):
            arr = np.ascontiguousarray(self.params[name].data, dtype="<f8")
            entries.append({"name": name, "shape": list(arr.shape),
                            "dtype": "<f8", "offset": offset})
            chunks.append(arr.tobytes())
            offset += arr.nbytes
        manifest = {"version": WEIGHT_FORMAT_VERSION, "blob": blob_path.name,
                    "total_bytes": offset, "entries": entries}
        blob_path.write_bytes(b"".join(chunks))
        manifest_path.write_text(
            json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8")

    def load(self, manifest_path: str | Path) -> None:
        manifest_path = Path(manifest_path)
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        if manifest.get("version") != WEIGHT_FORMAT_VERSION:
            raise ValueError(f"unsupported weight format version "
                             f"{manifest.get('version')!r}")
        blob = (manifest_path.parent / manifest["blob"]).read_bytes()
        if len(blob) != manifest["total_bytes"]:
            raise ValueError("weight blob size mismatch (truncated file?)")
        seen = set()
        for entry in manifest["entries"]:
            name = entry["name"]
            if name not in self.params:
                raise ValueError(f"unknown parameter {name!r} in manifest")
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(blob, dtype="<f8", count=count,
                                offset=entry["offset"]).reshape(shape)
            if self.params[name].data.shape != shape:
                raise ValueError(f"shape mismatch for {name!r}")
            self.params[name].data[...] = arr
            seen.add(name)
        missing = set(self.params) - seen
        if missing:
            raise ValueError(f"manifest missing parameters: {sorted(missing)}")


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int,
           shape: tuple[int, ...] | None = None) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape or (fan_in, fan_out))


# ---------------------------------------------------------------------------
# LSTM / BiLSTM


@dataclass
class LstmParams:
    """One-direction LSTM weights; gate order along columns is i, f, g, o."""

    w_x: Tensor  # input_size x 4H
    w_h: Tensor  # H x 4H
    b: Tensor    # 1 x 4H

    @property
    def hidden(self) -> int:
        return self.w_h.data.shape[0]


def init_lstm(params: ParamSet, prefix: str, input_size: int, hidden: int,
              rng: np.random.Generator) -> LstmParams:
    w_x = params.add(f"{prefix}.w_x", xavier(rng, input_size, 4 * hidden,
                                             (input_size, 4 * hidden)))
    w_h = params.add(f"{prefix}.w_h", xavier(rng, hidden, 4 * hidden,
                                             (hidden, 4 * hidden)))
    bias = np.zeros((1, 4 * hidden))
    bias[0, hidden:2 * hidden] = 1.0  # forget-gate bias
    b = params.add(f"{prefix}.b", bias)
    return LstmParams(w_x=w_x, w_h=w_h, b=b)


def lstm_forward(params: LstmParams, inputs: Tensor,
                 direction: str = "fwd") -> list[Tensor]:
    """Run an LSTM over inputs (K x input_size); returns K hidden rows (1 x H).

    Output index k always corresponds to input index k; the backward
    direction processes the reversed sequence internally.
    """
    k = inputs.data.shape[0]
    if k == 0:
        raise ValueError("empty input sequence")
    hdim = params.hidden
    order = range(k) if direction == "fwd" else range(k - 1, -1, -1)
    xw = add(matmul(inputs, params.w_x), params.b)  # K x 4H
    h = constant(np.zeros((1, hdim)))
    c = constant(np.zeros((1, hdim)))
    outputs: list[Tensor | None] = [None] * k
    for t in order:
        z = add(rows(xw, [t]), matmul(h, params.w_h))
        i = sigmoid(slice_cols(z, 0, hdim))
        f = sigmoid(slice_cols(z, hdim, 2 * hdim))
        g = tanh(slice_cols(z, 2 * hdim, 3 * hdim))
        o = sigmoid(slice_cols(z, 3 * hdim, 4 * hdim))
        c = add(mul(f, c), mul(i, g))
        h = mul(o, tanh(c))
        outputs[t] = h
    return outputs  # type: ignore[return-value]


def bilstm_forward(fwd: LstmParams, bwd: LstmParams, inputs: Tensor) -> Tensor:
    """Position-aligned concat of forward and backward hidden states (K x 2H)."""
    hf = lstm_forward(fwd, inputs, "fwd")
    hb = lstm_forward(bwd, inputs, "bwd")
    rows_out = [concat([f, b], axis=1) for f, b in zip(hf, hb)]
    return concat(rows_out, axis=0)


@dataclass
class MlpParams:
    layers: list[tuple[Tensor, Tensor]]  # (weight, bias) per layer


def init_mlp(params: ParamSet, prefix: str, dims: list[int],
             rng: np.random.Generator) -> MlpParams:
    layers = []
    for li, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
        w = params.add(f"{prefix}.w{li}", xavier(rng, din, dout, (din, dout)))
        b = params.add(f"{prefix}.b{li}", np.zeros((1, dout)))
        layers.append((w, b))
    return MlpParams(layers=layers)


def mlp_forward(params: MlpParams, x: Tensor) -> Tensor:
    """Affine layers with tanh between them (none after the last)."""
    out = x
    for li, (w, b) in enumerate(params.layers):
        out = add(matmul(out, w), b)
        if li < len(params.layers) - 1:
            out = tanh(out)
    return out


# ---------------------------------------------------------------------------
# Linear-chain CRF over tags {B=0, I=1}

_START_MASK = np.array([[0.0, -1e4]])  # position 0 cannot be I


def crf_nll(emissions: Tensor, transitions: Tensor, gold: list[int]) -> Tensor:
    """Negative log-likelihood: log Z - score(gold), forward algorithm.

    The start is constrained to tag B, which makes the position-0 emission a
    constant offset of every valid path; it is excluded from both terms so
    its (zero) gradient is exact.
    """
    t_len = emissions.data.shape[0]
    if t_len < 1 or len(gold) != t_len:
        raise ValueError("emissions/gold length mismatch")
    if gold[0] != 0:
        raise ValueError("gold sequence must start with tag B")
    alpha = constant(_START_MASK)  # 1 x 2
    for t in range(1, t_len):
        scores = add(transpose(alpha), transitions)        # 2 x 2: prev x cur
        alpha = add(logsumexp(scores, axis=0, keepdims=True),
                    rows(emissions, [t]))
    log_z = logsumexp(alpha)
    gold_score = constant(0.0)
    for t in range(1, t_len):
        gold_score = add(gold_score, pick(transitions, (gold[t - 1], gold[t])))
        gold_score = add(gold_score, pick(emissions, (t, gold[t])))
    return sub(log_z, gold_score)


def crf_decode(emissions: np.ndarray, transitions: np.ndarray) -> list[int]:
    """Viterbi decode; always starts with B by construction."""
    t_len = emissions.shape[0]
    score = emissions[0] + _START_MASK[0]
    back = np.zeros((t_len, 2), dtype=np.intp)
    for t in range(1, t_len):
        cand = score[:, None] + transitions  # prev x cur
        back[t] = np.argmax(cand, axis=0)
        score = cand[back[t], np.arange(2)] + emissions[t]
    tags = [int(np.argmax(score))]
    for t in range(t_len - 1, 0, -1):
        tags.append(int(back[t][tags[-1]]))
    tags.reverse()
    return tags


# ---------------------------------------------------------------------------
# Gradient checking


def grad_check(build: Callable[[], Tensor], params: ParamSet,
               epsilon: float = 1e-5,
               names: Iterable[str] | None = None) -> float:
    """Max relative error between backward and central-difference gradients."""
    params.zero_grad()
    loss = build()
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("non-finite loss in grad_check")
    loss.backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in params.params.items()}
    max_err = 0.0
    for name in (names if names is not None else params.params):
        t = params.params[name]
        flat = t.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + epsilon
            hi = build().item()
            flat[idx] = orig - epsilon
            lo = build().item()
            flat[idx] = orig
            numeric = (hi - lo) / (2 * epsilon)
            denom = max(1e-8, abs(a_flat[idx]) + abs(numeric))
            max_err = max(max_err, abs(a_flat[idx] - numeric) / denom)
    params.zero_grad()
    return max_err
