"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Everything learnable in this package is built on this module: float64
numpy-backed tensors, a Wengert-list tape recorded inside a ``with Tape()``
block, and reverse replay that visits each recorded op exactly once in
reverse topological order.  Outside a tape block every op runs pure-forward,
so inference is allocation-light and safe to call concurrently on a shared
model; training (which records a tape and mutates parameters) is
single-threaded per model instance.

Deliberately small surface: rank-0/1/2 arrays, broadcasting limited to
scalars and row-wise bias addition.  No GPU, no convolutions.
"""

from __future__ import annotations

import struct
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ParamSet",
    "Adam",
    "backward",
    "add",
    "sub",
    "neg",
    "mul",
    "div",
    "matmul",
    "relu",
    "sigmoid",
    "softplus",
    "tanh",
    "exp",
    "log",
    "absolute",
    "sin",
    "cos",
    "maximum_scalar",
    "scale",
    "sum_all",
    "mean_all",
    "softmax",
    "layer_norm",
    "concat",
    "interleave",
    "reshape",
    "cross_entropy",
    "l1_loss",
    "l2_loss",
    "sinusoidal_embed_t",
]

_EMB_BASE = 1.0e4  # geometric frequency base shared with numerics.sinusoidal_embed


# ---------------------------------------------------------------------------
# tensors and tape


class Tensor:
    """Dense float64 array plus an optional gradient accumulator.

    ``is_param`` tensors keep a persistent ``grad`` buffer (same shape,
    zeroed on creation); intermediate tensors receive gradients only
    transiently during :func:`backward`.
    """

    __slots__ = ("data", "grad", "is_param", "name", "_tracked")

    def __init__(self, data, is_param: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.is_param = bool(is_param)
        self.grad = np.zeros_like(arr) if is_param else None
        self.name = name
        self._tracked = self.is_param

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        tag = self.name or ("param" if self.is_param else "tensor")
        return f"Tensor({tag}, shape={self.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return div(self, _as_tensor(other))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _TapeNode:
    __slots__ = ("output", "inputs", "backward_fn", "op")

    def __init__(self, output: Tensor, inputs: tuple, backward_fn: Callable, op: str):
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.op = op


_tls = threading.local()


def _active_tape():
    stack = getattr(_tls, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive ops; context manager activates recording."""

    def __init__(self):
        self.nodes: list[_TapeNode] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_tls, "stack", None)
        if stack is None:
            stack = []
            _tls.stack = stack
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tls.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)


def _record(output: Tensor, inputs: tuple, backward_fn: Callable, op: str) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(i._tracked for i in inputs):
        output._tracked = True
        tape.nodes.append(_TapeNode(output, inputs, backward_fn, op))
    return output


def backward(loss: Tensor, tape: Tape, params: "ParamSet | None" = None) -> dict:
    """Reverse-replay ``tape`` from scalar ``loss``.

    Accumulates into ``param.grad`` for every parameter reachable from the
    loss (unreachable parameters are left untouched, i.e. exactly zero after
    ``zero_grads``).  Returns the full gradient map keyed by tensor identity
    so callers can also read gradients of non-parameter leaves.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    by_tensor: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        gout = grads.get(id(node.output))
        if gout is None:
            continue  # not on a path from the loss
        gins = node.backward_fn(gout)
        for inp, gin in zip(node.inputs, gins):
            if gin is None or not inp._tracked:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gin
            else:
                grads[key] = gin
                by_tensor[key] = inp
    if params is not None:
        for _, p in params.items():
            g = grads.get(id(p))
            if g is not None:
                p.grad += g.reshape(p.grad.shape)
    return {by_tensor[k]: v for k, v in grads.items()}


# ---------------------------------------------------------------------------
# parameters


class ParamSet:
    """Named parameter tensors with matching gradient accumulators."""

    MAGIC = b"GRT1"

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), is_param=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad[...] = 0.0

    def n_scalars(self) -> int:
        return sum(t.size for t in self._params.values())

    # -- flat little-endian binary checkpoint format -----------------------
    # magic "GRT1" | u32 count | per param:
    #   u32 name_len | name utf-8 | u32 rank | u32 dims[rank] | f64 payload

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.MAGIC)
            fh.write(struct.pack("<I", len(self._params)))
            for name, t in self._params.items():
                nb = name.encode("utf-8")
                fh.write(struct.pack("<I", len(nb)))
                fh.write(nb)
                dims = t.data.shape
                fh.write(struct.pack("<I", len(dims)))
                for d in dims:
                    fh.write(struct.pack("<I", d))
                fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ParamSet":
        ps = cls()
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != cls.MAGIC:
                raise ValueError(f"bad checkpoint magic {magic!r}, expected {cls.MAGIC!r}")
            (count,) = struct.unpack("<I", fh.read(4))
            for _ in range(count):
                (nlen,) = struct.unpack("<I", fh.read(4))
                name = fh.read(nlen).decode("utf-8")
                (rank,) = struct.unpack("<I", fh.read(4))
                dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
                n = int(np.prod(dims)) if rank else 1
                payload = np.frombuffer(fh.read(8 * n), dtype="<f8").astype(np.float64)
                ps.add(name, payload.reshape(dims))
        return ps

    def load_values_from(self, path) -> None:
        """Copy values from a checkpoint into this (already shaped) set."""
        other = ParamSet.load(path)
        missing = set(self._params) - set(other._params)
        if missing:
            raise ValueError(f"checkpoint is missing parameters: {sorted(missing)}")
        for name, t in self._params.items():
            src = other._params[name].data
            if src.shape != t.data.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: checkpoint {src.shape} vs model {t.data.shape}"
                )
            t.data[...] = src


class Adam:
    """Plain Adam on a ParamSet; deterministic given the gradient sequence."""

    def __init__(self, params: ParamSet, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self._m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.b1**self.t
        b2t = 1.0 - self.b2**self.t
        for name, p in self.params.items():
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def zero_grad(self) -> None:
        self.params.zero_grads()


# ---------------------------------------------------------------------------
# shape helpers


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _is_scalar(t: Tensor) -> bool:
    return t.data.ndim == 0 or t.data.size == 1


# ---------------------------------------------------------------------------
# primitive ops


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    bias_row = a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]
    if not (a.shape == b.shape or bias_row or _is_scalar(a) or _is_scalar(b)):
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)

    def bwd(g):
        ga = _unbroadcast(g, a.shape)
        gb = _unbroadcast(g, b.shape)
        return ga, gb

    return _record(out, (a, b), bwd, "add")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == () or int(np.prod(shape)) == 1:
        return np.array(g.sum()).reshape(shape)
    if g.ndim == 2 and len(shape) == 1 and g.shape[1] == shape[0]:
        return g.sum(axis=0)
    raise ValueError(f"cannot reduce gradient of shape {g.shape} to {shape}")


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,), "neg")


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, neg(_as_tensor(b)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if not (a.shape == b.shape or _is_scalar(a) or _is_scalar(b)):
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), bwd, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if not (a.shape == b.shape or _is_scalar(a) or _is_scalar(b)):
        raise ValueError(f"div: shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data / b.data)

    def bwd(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data**2), b.shape)
        return ga, gb

    return _record(out, (a, b), bwd, "div")


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c)
    return _record(out, (a,), lambda g: (g * c,), "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise ValueError(f"matmul: ranks must be 1 or 2, got {a.shape} @ {b.shape}")
    ka = a.shape[-1]
    kb = b.shape[0]
    if ka != kb:
        raise ValueError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 2:  # (k,)@(k,n) -> (n,)
            return g @ bd.T, np.outer(ad, g)
        if ad.ndim == 2 and bd.ndim == 1:  # (m,k)@(k,) -> (m,)
            return np.outer(g, bd), ad.T @ g
        if ad.ndim == 1 and bd.ndim == 1:  # (k,)@(k,) -> ()
            return g * bd, g * ad
        return g @ bd.T, ad.T @ g

    return _record(out, (a, b), bwd, "matmul")


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    mask = (a.data > 0.0).astype(np.float64)
    return _record(out, (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    from .numerics import sigmoid as _sig

    s = _sig(a.data)
    out = Tensor(s)
    return _record(out, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def softplus(a: Tensor) -> Tensor:
    out = Tensor(np.logaddexp(0.0, a.data))
    from .numerics import sigmoid as _sig

    s = _sig(a.data)
    return _record(out, (a,), lambda g: (g * s,), "softplus")


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    out = Tensor(t)
    return _record(out, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    out = Tensor(e)
    return _record(out, (a,), lambda g: (g * e,), "exp")


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    return _record(out, (a,), lambda g: (g / a.data,), "log")


def absolute(a: Tensor) -> Tensor:
    out = Tensor(np.abs(a.data))
    sign = np.sign(a.data)  # subgradient 0 at the kink
    return _record(out, (a,), lambda g: (g * sign,), "abs")


def sin(a: Tensor) -> Tensor:
    out = Tensor(np.sin(a.data))
    c = np.cos(a.data)
    return _record(out, (a,), lambda g: (g * c,), "sin")


def cos(a: Tensor) -> Tensor:
    out = Tensor(np.cos(a.data))
    s = np.sin(a.data)
    return _record(out, (a,), lambda g: (g * -s,), "cos")


def maximum_scalar(a: Tensor, c: float) -> Tensor:
    out = Tensor(np.maximum(a.data, c))
    mask = (a.data > c).astype(np.float64)
    return _record(out, (a,), lambda g: (g * mask,), "maximum_scalar")


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())
    return _record(out, (a,), lambda g: (np.full_like(a.data, float(g)),), "sum_all")


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor(a.data.mean())
    return _record(out, (a,), lambda g: (np.full_like(a.data, float(g) / n),), "mean_all")


def softmax(a: Tensor) -> Tensor:
    """Row-wise (last axis) softmax, max-subtracted for stability."""
    from .numerics import softmax as _softmax

    s = _softmax(a.data)
    out = Tensor(s)

    def bwd(g):
        if s.ndim == 1:
            dot = float(np.dot(g, s))
            return (s * (g - dot),)
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    return _record(out, (a,), bwd, "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} must be ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)

    def bwd(g):
        gxhat = g * gain.data
        gg = _unbroadcast(g * xhat, gain.shape)
        gb = _unbroadcast(g, bias.shape)
        m = (gxhat * xhat).sum(axis=-1, keepdims=True)
        s = gxhat.sum(axis=-1, keepdims=True)
        gx = inv * (gxhat - s / d - xhat * m / d)
        return gx, gg, gb

    return _record(out, (x, gain, bias), bwd, "layer_norm")


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate rank-1 tensors."""
    ts = [_as_tensor(t) for t in tensors]
    for t in ts:
        if t.data.ndim != 1:
            raise ValueError(f"concat: rank-1 tensors only, got shape {t.shape}")
    out = Tensor(np.concatenate([t.data for t in ts]))
    sizes = [t.size for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(g[offsets[i] : offsets[i + 1]] for i in range(len(ts)))

    return _record(out, tuple(ts), bwd, "concat")


def interleave(a: Tensor, b: Tensor) -> Tensor:
    """[a0, b0, a1, b1, ...] from equal-length rank-1 tensors."""
    _require_same_shape(a, b, "interleave")
    if a.data.ndim != 1:
        raise ValueError(f"interleave: rank-1 only, got {a.shape}")
    out_data = np.empty(2 * a.size)
    out_data[0::2] = a.data
    out_data[1::2] = b.data
    out = Tensor(out_data)
    return _record(out, (a, b), lambda g: (g[0::2], g[1::2]), "interleave")


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    orig = a.shape
    return _record(out, (a,), lambda g: (g.reshape(orig),), "reshape")


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """Softmax cross-entropy of a rank-1 logit vector against a class index."""
    if logits.data.ndim != 1:
        raise ValueError(f"cross_entropy: rank-1 logits only, got {logits.shape}")
    z = logits.data
    m = z.max()
    lse = m + np.log(np.exp(z - m).sum())
    out = Tensor(lse - z[target])
    p = np.exp(z - lse)

    def bwd(g):
        gz = p.copy()
        gz[target] -= 1.0
        return (gz * float(g),)

    return _record(out, (logits,), bwd, "cross_entropy")


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error against a constant target."""
    t = _as_tensor(target)
    _require_same_shape(pred, t, "l1_loss")
    return mean_all(absolute(sub(pred, t)))


def l2_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error against a constant target."""
    t = _as_tensor(target)
    _require_same_shape(pred, t, "l2_loss")
    d = sub(pred, t)
    return mean_all(mul(d, d))


def sinusoidal_embed_t(value: Tensor, dim: int) -> Tensor:
    """Differentiable sinusoidal embedding of a scalar tensor.

    Matches :func:`goalplan.numerics.sinusoidal_embed` value-for-value:
    interleaved (sin(v / w_k), cos(v / w_k)) pairs on geometric frequencies.
    """
    if dim < 2 or dim % 2 != 0:
        raise ValueError(f"embedding dim must be even and >= 2, got {dim}")
    if value.data.ndim != 0 and value.data.size != 1:
        raise ValueError(f"sinusoidal_embed_t expects a scalar, got shape {value.shape}")
    half = dim // 2
    inv_omega = _EMB_BASE ** (-2.0 * np.arange(half) / dim)
    v = reshape(value, ())
    ang = mul(_ones_times(v, half), Tensor(inv_omega))
    return interleave(sin(ang), cos(ang))


def _ones_times(v: Tensor, n: int) -> Tensor:
    """Broadcast a scalar tensor to a rank-1 vector of length n."""
    out = Tensor(np.full(n, float(v.data)))

    def bwd(g):
        return (np.array(g.sum()),)

    return _record(out, (v,), bwd, "broadcast")
