"""A small reverse-mode autodiff engine on top of numpy.

Every differentiable operation used by the model is a *primitive*: a forward
function that returns the output array together with a closure mapping the
output cotangent to input cotangents.  Primitives are looked up by name in
``PRIMITIVES`` and invoked through :func:`apply_primitive`; the convenience
functions below (``matmul``, ``tanh``, ...) are thin wrappers.

Broadcasting is deliberately narrow.  Elementwise binary primitives accept
equal shapes, a scalar operand, or an operand whose shape is a suffix of the
other one (so a bias ``[d]`` can be added to ``[B, T, d]``).
"""

from __future__ import annotations

import json
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "GraphError",
    "NumericError",
    "PRIMITIVES",
    "apply_primitive",
    "backward",
    "grad_check",
    "OptimState",
    "optimizer_step",
    "clip_grad_norm",
    "save_checkpoint",
    "load_checkpoint",
    "make_rng",
    "precision",
    "get_dtype",
]

_DTYPE = [np.float32]


def get_dtype():
    return _DTYPE[0]


@contextmanager
def precision(dtype):
    """Temporarily switch the floating dtype used for new tensors.

    float32 is the default everywhere; float64 exists for gradient checking,
    where float32 round-off would swamp a central difference.
    """
    prev = _DTYPE[0]
    _DTYPE[0] = np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE[0] = prev


def make_rng(seed) -> np.random.Generator:
    """Seeded generator; split it with ``rng.spawn(n)``."""
    return np.random.default_rng(np.random.SeedSequence(seed))


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class GraphError(RuntimeError):
    pass


class NumericError(ArithmeticError):
    """Raised when an optimizer update would write NaN/Inf into a parameter."""


class _Node:
    __slots__ = ("op", "inputs", "vjp")

    def __init__(self, op: str, inputs: tuple, vjp: Callable):
        self.op = op
        self.inputs = inputs
        self.vjp = vjp


class Tensor:
    """Dense float array that can take part in a differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f" or arr.dtype.type is not get_dtype():
            arr = arr.astype(get_dtype())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._node: _Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the data."""
        return self.data.reshape(-1)

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return multiply(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# primitive helpers


def _check_finite(op: str, arrays: Iterable[np.ndarray]):
    for a in arrays:
        if a.dtype.kind == "f" and not np.isfinite(a).all():
            raise NonFiniteError(f"{op}: non-finite value in input of shape {a.shape}")


def _suffix_broadcast(op: str, a: tuple, b: tuple) -> tuple:
    if a == b or a == () or b == ():
        return a if len(a) >= len(b) else b
    big, small = (a, b) if len(a) >= len(b) else (b, a)
    if big[len(big) - len(small):] != small:
        raise ShapeError(f"{op}: incompatible shapes {a} and {b}")
    return big


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum(), dtype=g.dtype)
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))) if lead else g


def _prim_add(a, b):
    _suffix_broadcast("add", a.shape, b.shape)
    out = a + b
    return out, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


def _prim_sub(a, b):
    _suffix_broadcast("sub", a.shape, b.shape)
    out = a - b
    return out, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))


def _prim_multiply(a, b):
    _suffix_broadcast("multiply", a.shape, b.shape)
    out = a * b
    return out, lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


def _prim_matmul(a, b):
    # a: [..., n, k]; b: [k, m] (shared) or [..., k, m] with a's leading dims
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise ShapeError(f"matmul: batch dims differ, {a.shape} and {b.shape}")
    out = a @ b

    def vjp(g):
        ga = g @ np.swapaxes(b, -1, -2)
        if b.ndim == 2:
            gb = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a, -1, -2) @ g
        return ga, gb

    return out, vjp


def _prim_concat(*xs):
    lead = xs[0].shape[:-1]
    for x in xs[1:]:
        if x.shape[:-1] != lead:
            raise ShapeError(f"concat: leading shapes differ, {[x.shape for x in xs]}")
    out = np.concatenate(xs, axis=-1)
    bounds = np.cumsum([x.shape[-1] for x in xs])[:-1]
    return out, lambda g: tuple(np.split(g, bounds, axis=-1))


def _prim_tanh(x):
    out = np.tanh(x)
    return out, lambda g: (g * (1.0 - out * out),)


def _prim_exp(x):
    out = np.exp(x)
    return out, lambda g: (g * out,)


def _prim_log(x):
    if (x <= 0).any():
        raise NonFiniteError("log: input has non-positive entries")
    out = np.log(x)
    return out, lambda g: (g / x,)


def _softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _prim_softmax(x):
    out = _softmax(x)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return out, vjp


def _prim_sum(x, axis=None):
    out = np.asarray(x.sum(axis=axis), dtype=x.dtype)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return out, vjp


def _prim_mean(x, axis=None):
    n = x.size if axis is None else x.shape[axis]
    out = np.asarray(x.mean(axis=axis), dtype=x.dtype)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).astype(x.dtype),)

    return out, vjp


def _prim_embedding(table, ids):
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise ShapeError(f"embedding: ids must be integers, got {ids.dtype}")
    if table.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding: id out of range for table {table.shape}")
    out = table[ids]

    def vjp(g):
        gt = np.zeros_like(table)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return out, vjp


def _prim_layer_norm(x, gamma, beta, eps=1e-5):
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gamma/beta {gamma.shape}/{beta.shape} vs input {x.shape}")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma + beta

    def vjp(g):
        gx_hat = g * gamma
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, (d,)), _unbroadcast(g, (d,))

    return out, vjp


_MASK_FILL = -1e9


def _prim_attention(q, k, v, mask=None):
    """softmax(q k^T / sqrt(dh) + mask) v over [B, H, T, dh] operands.

    ``mask`` is ``[B, T]`` with 1 for real keys and 0 for padding; padded keys
    receive exactly zero weight.
    """
    if q.ndim != 4 or q.shape != k.shape or k.shape != v.shape:
        raise ShapeError(f"attention: q/k/v shapes {q.shape}, {k.shape}, {v.shape}")
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = (q @ np.swapaxes(k, -1, -2)) * scale
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != (q.shape[0], q.shape[2]):
            raise ShapeError(f"attention: mask {mask.shape} vs q {q.shape}")
        scores = np.where(mask[:, None, None, :] > 0, scores, _MASK_FILL).astype(q.dtype)
    p = _softmax(scores)
    out = p @ v

    def vjp(g):
        gv = np.swapaxes(p, -1, -2) @ g
        gp = g @ np.swapaxes(v, -1, -2)
        gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True)) * scale
        gq = gs @ k
        gk = np.swapaxes(gs, -1, -2) @ q
        return gq, gk, gv

    return out, vjp


def _prim_cross_entropy(logits, targets):
    """Mean negative log-likelihood of integer targets under softmax(logits)."""
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise ShapeError(f"cross_entropy: target out of range for {logits.shape[1]} classes")
    n = logits.shape[0]
    z = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logz
    out = np.asarray(-logp[np.arange(n), targets].mean(), dtype=logits.dtype)

    def vjp(g):
        grad = np.exp(logp)
        grad[np.arange(n), targets] -= 1.0
        return (grad * (g / n),)

    return out, vjp


def _prim_reshape(x, shape):
    out = x.reshape(shape)
    return out, lambda g: (g.reshape(x.shape),)


def _prim_transpose(x, axes):
    inv = np.argsort(axes)
    return np.transpose(x, axes), lambda g: (np.transpose(g, inv),)


def _prim_select(x, index, axis=1):
    """``x.take(index, axis)`` for a single integer index (drops the axis)."""
    out = np.take(x, index, axis=axis)

    def vjp(g):
        gx = np.zeros_like(x)
        sl = [slice(None)] * x.ndim
        sl[axis] = index
        gx[tuple(sl)] = g
        return (gx,)

    return out, vjp


def _prim_clamp(x, lo, hi):
    out = np.clip(x, lo, hi)
    inside = (x >= lo) & (x <= hi)
    return out, lambda g: (g * inside,)


PRIMITIVES: dict[str, Callable] = {
    "add": _prim_add,
    "sub": _prim_sub,
    "multiply": _prim_multiply,
    "matmul": _prim_matmul,
    "concat": _prim_concat,
    "tanh": _prim_tanh,
    "exp": _prim_exp,
    "log": _prim_log,
    "softmax": _prim_softmax,
    "sum": _prim_sum,
    "mean": _prim_mean,
    "embedding": _prim_embedding,
    "layer_norm": _prim_layer_norm,
    "attention": _prim_attention,
    "cross_entropy": _prim_cross_entropy,
    "reshape": _prim_reshape,
    "transpose": _prim_transpose,
    "select": _prim_select,
    "clamp": _prim_clamp,
}


def apply_primitive(op: str, inputs: Sequence, **attrs) -> Tensor:
    """Run primitive ``op`` on tensor ``inputs`` and record it if needed.

    Keyword ``attrs`` carry non-differentiable arguments (integer ids, masks,
    axes).  The node is only recorded when an input requires grad.
    """
    try:
        fn = PRIMITIVES[op]
    except KeyError:
        raise ValueError(f"unknown primitive {op!r}") from None
    tensors = tuple(_as_tensor(x) for x in inputs)
    arrays = [t.data for t in tensors]
    _check_finite(op, arrays)
    out_arr, vjp = fn(*arrays, **attrs)
    out = Tensor(out_arr)
    if any(t.requires_grad for t in tensors):
        out.requires_grad = True
        out._node = _Node(op, tensors, vjp)
    return out


def _topo_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for parent in t._node.inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor):
    """Populate ``.grad`` on every grad-requiring leaf reachable from ``loss``.

    Leaf gradients accumulate across calls, so ``backward(a); backward(b)``
    equals ``backward(a + b)``.
    """
    if loss.shape != ():
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        raise GraphError("backward called on a tensor with no recorded graph")
    grads = {id(loss): np.ones((), dtype=loss.data.dtype)}
    for t in reversed(_topo_order(loss)):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t._node is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for parent, pg in zip(t._node.inputs, t._node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.data.dtype)
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg


# --------------------------------------------------------------------------
# convenience wrappers


def add(a, b):
    return apply_primitive("add", [a, b])


def sub(a, b):
    return apply_primitive("sub", [a, b])


def multiply(a, b):
    return apply_primitive("multiply", [a, b])


def matmul(a, b):
    return apply_primitive("matmul", [a, b])


def concat(xs):
    return apply_primitive("concat", list(xs))


def tanh(x):
    return apply_primitive("tanh", [x])


def exp(x):
    return apply_primitive("exp", [x])


def log(x):
    return apply_primitive("log", [x])


def softmax(x):
    return apply_primitive("softmax", [x])


def tsum(x, axis=None):
    return apply_primitive("sum", [x], axis=axis)


def mean(x, axis=None):
    return apply_primitive("mean", [x], axis=axis)


def embedding(table, ids):
    return apply_primitive("embedding", [table], ids=ids)


def layer_norm(x, gamma, beta, eps=1e-5):
    return apply_primitive("layer_norm", [x, gamma, beta], eps=eps)


def attention(q, k, v, mask=None):
    return apply_primitive("attention", [q, k, v], mask=mask)


def cross_entropy(logits, targets):
    return apply_primitive("cross_entropy", [logits], targets=targets)


def reshape(x, shape):
    return apply_primitive("reshape", [x], shape=tuple(shape))


def transpose(x, axes):
    return apply_primitive("transpose", [x], axes=tuple(axes))


def select(x, index, axis=1):
    return apply_primitive("select", [x], index=index, axis=axis)


def clamp(x, lo, hi):
    return apply_primitive("clamp", [x], lo=lo, hi=hi)


# --------------------------------------------------------------------------
# verification


def grad_check(f: Callable, x, h: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    ``x`` is a Tensor or a sequence of Tensors; ``f(x)`` must return a scalar
    Tensor and be deterministic (freeze any sampling by seeding inside ``f``).
    Run this under ``precision(np.float64)``.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.requires_grad = True
        t.grad = None
    loss = f(x)
    again = f(x)
    if loss.item() != again.item():
        raise GraphError("grad_check: f is not deterministic across two forward passes")
    backward(loss)
    worst = 0.0
    for t in xs:
        analytic = np.zeros(t.size) if t.grad is None else t.grad.reshape(-1).astype(np.float64)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(x).item()
            flat[i] = orig - h
            fm = f(x).item()
            flat[i] = orig
            numeric = (fp - fm) / (2 * h)
            err = abs(analytic[i] - numeric) / max(1e-8, abs(analytic[i]) + abs(numeric))
            worst = max(worst, err)
    return worst


# --------------------------------------------------------------------------
# optimization


@dataclass
class OptimState:
    """Adam state.  Slots are keyed by parameter name and carry their own
    step count, so updates on disjoint parameter sets commute."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    slots: dict = field(default_factory=dict)


def clip_grad_norm(params: Mapping[str, Tensor], max_norm: float) -> float:
    """Scale grads in place so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum())
                          for p in params.values() if p.grad is not None))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return total


def optimizer_step(params: Mapping[str, Tensor], state: OptimState):
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise GraphError(f"optimizer_step: no grad for {missing[:5]}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    updates = {}
    for name, p in params.items():
        slot = state.slots.get(name)
        if slot is None:
            slot = state.slots[name] = {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data), "t": 0}
        if slot["m"].shape != p.shape:
            raise ShapeError(f"optimizer_step: slot for {name} has shape {slot['m'].shape}, param {p.shape}")
        g = p.grad
        t = slot["t"] + 1
        m = b1 * slot["m"] + (1 - b1) * g
        v = b2 * slot["v"] + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        with np.errstate(over="ignore", invalid="ignore"):
            new = p.data - state.lr * mhat / (np.sqrt(vhat) + state.eps)
        if not np.isfinite(new).all():
            raise NumericError(f"optimizer_step: non-finite update for {name} (grad norm "
                               f"{float(np.linalg.norm(g))})")
        updates[name] = (new.astype(p.data.dtype), m, v, t)
    for name, (new, m, v, t) in updates.items():
        p = params[name]
        p.data[...] = new
        p.grad = None
        state.slots[name].update(m=m, v=v, t=t)


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(stem, params: Mapping[str, Tensor | np.ndarray]):
    """Write ``<stem>.json`` (name/shape/offset manifest) and ``<stem>.bin``.

    Offsets are byte offsets into the blob of little-endian float32 values,
    concatenated in manifest order.
    """
    stem = Path(stem)
    entries, offset = [], 0
    with open(stem.with_suffix(".bin"), "wb") as fh:
        for name, p in params.items():
            arr = np.ascontiguousarray(p.data if isinstance(p, Tensor) else p, dtype="<f4")
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            fh.write(arr.tobytes())
            offset += arr.nbytes
    stem.with_suffix(".json").write_text(json.dumps({"dtype": "<f4", "params": entries}, indent=1))


def load_checkpoint(stem) -> dict:
    stem = Path(stem)
    manifest = json.loads(stem.with_suffix(".json").read_text())
    blob = stem.with_suffix(".bin").read_bytes()
    out = {}
    for e in manifest["params"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=e["offset"])
        out[e["name"]] = arr.reshape(e["shape"]).astype(np.float32)
    return out
