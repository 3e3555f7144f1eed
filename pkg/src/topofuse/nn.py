"""Dense f64 tensors with tape-based reverse-mode differentiation, plus the
layer primitives the encoders and fusion module are built from.

Everything is float64: the models here are desk-scale, and the test suite
leans on central finite differences, which need the precision. The tape
is define-by-run; calling ``backward`` on a scalar walks the recorded
graph in reverse topological order and accumulates gradients on every
tensor that requires them. Parameters that a loss never touches simply
keep a None gradient, which optimizers treat as zero.

Matmul supports the three layouts the models use: plain 2-D, batched with
identical leading dimensions, and batched-times-2-D (the projection
pattern). Attention masking is additive negative infinity before the
softmax, so fully masked rows produce exact zeros.
"""
from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from .rng import Stream

__all__ = [
    "Tensor",
    "tensor",
    "no_grad",
    "add", "sub", "mul", "div", "neg", "matmul",
    "relu", "sigmoid", "exp", "log", "sqrt",
    "tsum", "mean", "reshape", "permute", "concat", "narrow",
    "softmax", "masked_max", "masked_mean", "im2col",
    "ParameterSet", "Linear", "MLP", "MultiHeadAttention", "Conv2d",
    "kaiming_uniform", "xavier_uniform",
    "AdamW", "cosine_lr",
    "save_tensors", "load_tensors",
]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False, parents=(), grad_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents if requires_grad else ()
        self._grad_fn = grad_fn if requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar loss")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._grad_fn is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._grad_fn(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # operator sugar
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data) -> Tensor:
    """Constant (no-grad) tensor."""
    return Tensor(data)


class no_grad:
    """Context manager suppressing tape construction (inference mode)."""

    _depth = 0

    def __enter__(self):
        no_grad._depth += 1
        return self

    def __exit__(self, *exc):
        no_grad._depth -= 1
        return False


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _out(data, parents, grad_fn) -> Tensor:
    req = no_grad._depth == 0 and any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, parents=tuple(parents), grad_fn=grad_fn)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    return _out(a.data + b.data, (a, b),
                lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _out(a.data - b.data, (a, b),
                lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _out(a.data * b.data, (a, b),
                lambda g: (_unbroadcast(g * b.data, a.data.shape),
                           _unbroadcast(g * a.data, b.data.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    return _out(a.data / b.data, (a, b),
                lambda g: (_unbroadcast(g / b.data, a.data.shape),
                           _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)))


def neg(a: Tensor) -> Tensor:
    return _out(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        return _out(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))
    if ad.ndim == bd.ndim and ad.ndim >= 3 and ad.shape[:-2] == bd.shape[:-2]:
        return _out(ad @ bd, (a, b),
                    lambda g: (g @ bd.swapaxes(-1, -2), ad.swapaxes(-1, -2) @ g))
    if ad.ndim >= 3 and bd.ndim == 2:
        k, m = bd.shape

        def back(g):
            return (g @ bd.T, ad.reshape(-1, k).T @ g.reshape(-1, m))

        return _out(ad @ bd, (a, b), back)
    raise ValueError(f"unsupported matmul layout {ad.shape} @ {bd.shape}")


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0
    return _out(np.where(keep, a.data, 0.0), (a,), lambda g: (g * keep,))


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))
    return _out(s, (a,), lambda g: (g * s * (1.0 - s),))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return _out(e, (a,), lambda g: (g * e,))


def log(a: Tensor) -> Tensor:
    return _out(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    r = np.sqrt(a.data)
    return _out(r, (a,), lambda g: (g * 0.5 / r,))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _out(data, (a,), back)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * Tensor(1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return _out(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def permute(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _out(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors)))

    return _out(data, tuple(tensors), back)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def back(g):
        out = np.zeros_like(a.data)
        out[index] = g
        return (out,)

    return _out(a.data[index], (a,), back)


def softmax(a: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Stable softmax; mask=True keeps a position, masked logits act as -inf.

    Rows with no unmasked positions yield exact zeros.
    """
    logits = a.data
    if mask is not None:
        logits = np.where(mask, logits, -np.inf)
    with np.errstate(invalid="ignore"):
        mx = np.max(logits, axis=axis, keepdims=True)
        mx = np.where(np.isfinite(mx), mx, 0.0)
        e = np.exp(logits - mx)
    s = e.sum(axis=axis, keepdims=True)
    y = np.where(s > 0, e / np.where(s == 0, 1.0, s), 0.0)

    def back(g):
        dot = np.sum(g * y, axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _out(y, (a,), back)


def masked_max(a: Tensor, valid: np.ndarray) -> Tensor:
    """Max over the length axis of (..., L, D) restricted to valid rows.

    ``valid`` is boolean (..., L). Groups with no valid rows produce zero
    vectors and pass no gradient.
    """
    masked = np.where(valid[..., None], a.data, -np.inf)
    has_any = valid.any(axis=-1)
    with np.errstate(invalid="ignore"):
        raw = masked.max(axis=-2)
    out = np.where(has_any[..., None], raw, 0.0)
    argm = np.argmax(masked, axis=-2)

    def back(g):
        gx = np.zeros_like(a.data)
        contrib = (g * has_any[..., None])[..., None, :]
        np.put_along_axis(gx, argm[..., None, :], contrib, axis=-2)
        return (gx,)

    return _out(out, (a,), back)


def masked_mean(a: Tensor, valid: np.ndarray) -> Tensor:
    """Mean over valid rows of (..., L, D); empty groups give zero vectors."""
    counts = valid.sum(axis=-1)
    safe = np.maximum(counts, 1)
    out = (a.data * valid[..., None]).sum(axis=-2) / safe[..., None]

    def back(g):
        return ((g / safe[..., None])[..., None, :] * valid[..., None],)

    return _out(out, (a,), back)


def im2col(a: Tensor, kernel: int, stride: int) -> Tensor:
    """(B, C, H, W) -> (B, OH*OW, C*k*k) patch matrix, valid padding."""
    bsz, ch, h, w = a.data.shape
    oh = (h - kernel) // stride + 1
    ow = (w - kernel) // stride + 1
    i0 = np.repeat(np.arange(kernel), kernel)
    j0 = np.tile(np.arange(kernel), kernel)
    oi = np.repeat(np.arange(oh) * stride, ow)
    oj = np.tile(np.arange(ow) * stride, oh)
    rows = oi[:, None] + i0[None, :]
    cols = oj[:, None] + j0[None, :]
    patches = a.data[:, :, rows, cols]                       # (B, C, P, k*k)
    out = patches.transpose(0, 2, 1, 3).reshape(bsz, oh * ow, ch * kernel * kernel)

    def back(g):
        g4 = g.reshape(bsz, oh * ow, ch, kernel * kernel).transpose(0, 2, 1, 3)
        gx = np.zeros_like(a.data)
        np.add.at(gx, (np.arange(bsz)[:, None, None, None],
                       np.arange(ch)[None, :, None, None],
                       rows[None, None, :, :],
                       cols[None, None, :, :]), g4)
        return (gx,)

    return _out(out, (a,), back)


# ---------------------------------------------------------------------------
# Parameters, initialization, layers
# ---------------------------------------------------------------------------

def kaiming_uniform(stream: Stream, fan_in: int, shape) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return (stream.uniforms(shape) * 2.0 - 1.0) * bound


def xavier_uniform(stream: Stream, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return (stream.uniforms(shape) * 2.0 - 1.0) * bound


class ParameterSet:
    """Named trainable tensors with deterministic, creation-ordered init."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(array, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def state_arrays(self) -> dict:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_arrays(self, arrays: dict):
        missing = set(self._params) - set(arrays)
        if missing:
            raise ValueError(f"checkpoint missing parameters: {sorted(missing)}")
        for name, t in self._params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(
                    f"parameter {name!r} has shape {t.data.shape}, checkpoint {arr.shape}")
            t.data = arr.copy()

    def merge(self, other: "ParameterSet", prefix: str = ""):
        for name, t in other._params.items():
            key = prefix + name
            if key in self._params:
                raise ValueError(f"duplicate parameter name {key!r}")
            self._params[key] = t


class Linear:
    """Affine map; Kaiming-uniform weight, zero bias."""

    def __init__(self, params: ParameterSet, name: str, stream: Stream,
                 d_in: int, d_out: int, bias: bool = True):
        self.w = params.add(f"{name}.w", kaiming_uniform(stream.spawn(name, "w"), d_in, (d_in, d_out)))
        self.b = params.add(f"{name}.b", np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = matmul(x, self.w)
        return out + self.b if self.b is not None else out


class MLP:
    """Affine-ReLU chain; the final layer is affine only."""

    def __init__(self, params: ParameterSet, name: str, stream: Stream, dims):
        dims = list(dims)
        if len(dims) < 2:
            raise ValueError("an MLP needs at least input and output dims")
        self.layers = [
            Linear(params, f"{name}.{i}", stream, dims[i], dims[i + 1])
            for i in range(len(dims) - 1)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = relu(x)
        return x


class MultiHeadAttention:
    """Scaled dot-product attention with learned Q/K/V/O projections.

    Inputs are (B, L, dim); an optional boolean key mask (B, L_k) removes
    positions from the softmax. Xavier-uniform projections, no biases.
    """

    def __init__(self, params: ParameterSet, name: str, stream: Stream,
                 dim: int, heads: int):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.w_q = params.add(f"{name}.wq", xavier_uniform(stream.spawn(name, "q"), dim, dim, (dim, dim)))
        self.w_k = params.add(f"{name}.wk", xavier_uniform(stream.spawn(name, "k"), dim, dim, (dim, dim)))
        self.w_v = params.add(f"{name}.wv", xavier_uniform(stream.spawn(name, "v"), dim, dim, (dim, dim)))
        self.w_o = params.add(f"{name}.wo", xavier_uniform(stream.spawn(name, "o"), dim, dim, (dim, dim)))

    def _split(self, x: Tensor, bsz: int, length: int) -> Tensor:
        return permute(reshape(x, (bsz, length, self.heads, self.head_dim)), (0, 2, 1, 3))

    def __call__(self, query: Tensor, key: Tensor, value: Tensor,
                 key_mask: np.ndarray | None = None) -> Tensor:
        bsz, l_q, _ = query.shape
        l_k = key.shape[1]
        q = self._split(matmul(query, self.w_q), bsz, l_q)
        k = self._split(matmul(key, self.w_k), bsz, l_k)
        v = self._split(matmul(value, self.w_v), bsz, l_k)
        scores = matmul(q, permute(k, (0, 1, 3, 2))) * Tensor(1.0 / math.sqrt(self.head_dim))
        mask = None
        if key_mask is not None:
            mask = np.broadcast_to(key_mask[:, None, None, :], scores.shape)
        attn = softmax(scores, axis=-1, mask=mask)
        ctx = matmul(attn, v)                                  # (B, h, L_q, hd)
        ctx = reshape(permute(ctx, (0, 2, 1, 3)), (bsz, l_q, self.dim))
        return matmul(ctx, self.w_o)


class Conv2d:
    """Valid-padding convolution via im2col; Kaiming-uniform, zero bias."""

    def __init__(self, params: ParameterSet, name: str, stream: Stream,
                 c_in: int, c_out: int, kernel: int, stride: int = 1):
        self.kernel = kernel
        self.stride = stride
        self.c_out = c_out
        fan_in = c_in * kernel * kernel
        self.w = params.add(f"{name}.w",
                            kaiming_uniform(stream.spawn(name, "w"), fan_in, (fan_in, c_out)))
        self.b = params.add(f"{name}.b", np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        bsz, _, h, w = x.shape
        oh = (h - self.kernel) // self.stride + 1
        ow = (w - self.kernel) // self.stride + 1
        cols = im2col(x, self.kernel, self.stride)
        out = matmul(cols, self.w) + self.b                    # (B, P, c_out)
        return permute(reshape(out, (bsz, oh, ow, self.c_out)), (0, 3, 1, 2))


# ---------------------------------------------------------------------------
# Optimizer and schedule
# ---------------------------------------------------------------------------

class AdamW:
    """AdamW with optional per-name learning-rate scaling by prefix."""

    def __init__(self, params: ParameterSet, lr: float = 3e-4,
                 betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0,
                 lr_scales: dict | None = None):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.lr_scales = dict(lr_scales or {})
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}

    def _scale(self, name: str) -> float:
        for prefix, scale in self.lr_scales.items():
            if name.startswith(prefix):
                return scale
        return 1.0

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else 0.0
            m = self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * (g * g)
            update = (m / b1t) / (np.sqrt(v / b2t) + self.eps)
            p.data = p.data - lr * self._scale(name) * (update + self.weight_decay * p.data)

    def state_arrays(self) -> dict:
        out = {"__t__": np.array([float(self.t)])}
        for name in self.m:
            out[f"m.{name}"] = self.m[name].copy()
            out[f"v.{name}"] = self.v[name].copy()
        return out

    def load_arrays(self, arrays: dict):
        self.t = int(arrays["__t__"][0])
        for name in self.m:
            self.m[name] = np.asarray(arrays[f"m.{name}"], dtype=np.float64).copy()
            self.v[name] = np.asarray(arrays[f"v.{name}"], dtype=np.float64).copy()


def cosine_lr(base_lr: float, epoch: int, total_epochs: int, min_lr: float = 0.0) -> float:
    """Cosine annealing from base_lr at epoch 0 toward min_lr at the end."""
    if total_epochs <= 1:
        return base_lr
    t = epoch / (total_epochs - 1)
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * t))


# ---------------------------------------------------------------------------
# Checkpoint container: length-prefixed JSON header + little-endian f64 blob
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"TFT1"


def save_tensors(path, arrays: dict, meta: dict | None = None) -> None:
    entries = []
    payload = bytearray()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(np.asarray(arrays[name], dtype="<f8"))
        entries.append({"name": name, "shape": list(arr.shape), "offset": len(payload)})
        payload.extend(arr.tobytes())
    header = json.dumps({"entries": entries, "meta": meta or {}}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(bytes(payload))


def load_tensors(path):
    raw = Path(path).read_bytes()
    if raw[:4] != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[4:12])
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    payload = raw[12 + hlen:]
    arrays = {}
    for ent in header["entries"]:
        shape = tuple(ent["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = ent["offset"]
        arrays[ent["name"]] = np.frombuffer(
            payload, dtype="<f8", count=count, offset=start).reshape(shape).astype(np.float64)
    return arrays, header.get("meta", {})
