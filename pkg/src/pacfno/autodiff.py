"""Dense 64-bit tensors with tape-based reverse-mode differentiation.

Every differentiable operation in the package goes through :func:`record`,
which wires the output into the graph of its inputs. :func:`backward`
linearises that graph into a :class:`Tape` (topological order) and replays
the recorded rules in reverse.

Complex arrays are allowed as intermediate values (spectra). Their gradient
follows the complex-as-two-reals convention: for ``z = x + iy`` the stored
gradient is ``dL/dx + i dL/dy``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special

__all__ = [
    "Tensor",
    "Tape",
    "BnState",
    "OptimState",
    "ShapeError",
    "GraphError",
    "NumericError",
    "tensor",
    "record",
    "backward",
    "build_tape",
    "add",
    "sub",
    "mul",
    "scale",
    "tsum",
    "mean",
    "reshape",
    "concat",
    "channel_linear",
    "linear",
    "gelu",
    "batch_norm",
    "cross_entropy",
    "conv2d_3x3",
    "avg_pool2",
    "global_avg_pool",
    "grad_check",
    "adam_step",
    "zero_grad",
]


class ShapeError(ValueError):
    """Operand extents are incompatible."""


class GraphError(RuntimeError):
    """Misuse of the differentiation graph (non-scalar loss, double backward)."""


class NumericError(FloatingPointError):
    """A non-finite value appeared while debug checking was on."""


DEBUG_FINITE = False


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """N-d array node. ``data`` is float64 (or complex128 for spectra)."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_released", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if not np.iscomplexobj(arr):
            arr = arr.astype(np.float64, copy=False)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._released = False
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return scale(self, -1.0)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad, name=name)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def record(data: np.ndarray, parents: Sequence[Tensor], rule: BackwardFn, cls=Tensor, **attrs) -> Tensor:
    """Wrap ``data`` as the output of an op on ``parents``.

    ``rule(g)`` receives the output gradient and returns one gradient (or
    None) per parent. The graph edge is only kept when a parent needs it.
    """
    if DEBUG_FINITE and not np.all(np.isfinite(data)):
        raise NumericError("non-finite value produced in forward pass")
    out = cls.__new__(cls)
    Tensor.__init__(out, data)
    for key, value in attrs.items():
        setattr(out, key, value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = rule
    return out


@dataclass
class Tape:
    """Operations reachable from a loss, inputs always before their consumers."""

    nodes: list[Tensor] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.nodes)


def build_tape(root: Tensor) -> Tape:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return Tape(order)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from ``loss``.

    Intermediate graph state is released afterwards; a second call on the
    same graph raises :class:`GraphError` (run a fresh forward instead).
    """
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._released:
        raise GraphError("graph already consumed by a previous backward; recompute the forward pass")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor that requires grad")
    tape = build_tape(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if g is not None:
                if np.iscomplexobj(g) and not np.iscomplexobj(node.data):
                    g = g.real
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if node._released:
            raise GraphError("graph already consumed by a previous backward; recompute the forward pass")
        if g is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.data.shape:
                raise ShapeError(f"backward rule produced {pg.shape} for parent of shape {parent.shape}")
            if not np.iscomplexobj(parent.data) and np.iscomplexobj(pg):
                pg = pg.real
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
        node._released = True
        node._backward = _released_rule
        node._parents = ()


def _released_rule(g):  # pragma: no cover - never reached, guarded above
    raise GraphError("graph already consumed")


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------- elementwise


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data

    def rule(g):
        ga = _unbroadcast(g * np.conj(bd), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * np.conj(ad), bd.shape) if b.requires_grad else None
        return ga, gb

    return record(ad * bd, (a, b), rule)


def scale(a: Tensor, c: float) -> Tensor:
    return record(a.data * c, (a,), lambda g: (g * c,))


def tsum(a: Tensor) -> Tensor:
    shape = a.shape
    return record(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    shape = a.shape
    return record(np.asarray(a.data.mean()), (a,), lambda g: (np.full(shape, g / n, dtype=g.dtype),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def rule(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), rule)


# ---------------------------------------------------------------- layers


def channel_linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Pointwise (1x1) channel mixing on an ``N x C x H x W`` tensor.

    ``out[n, o, h, w] = sum_i weight[o, i] * x[n, i, h, w] + bias[o]``
    """
    if x.data.ndim != 4:
        raise ShapeError(f"channel_linear expects N x C x H x W, got {x.shape}")
    c_out, c_in = weight.shape
    if x.shape[1] != c_in:
        raise ShapeError(f"channel mismatch: input has {x.shape[1]} channels, weight expects {c_in}")
    xd, wd = x.data, weight.data
    out = np.einsum("oi,nihw->nohw", wd, xd, optimize=True)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def rule(g):
        gx = np.einsum("oi,nohw->nihw", wd, g, optimize=True) if x.requires_grad else None
        gw = np.einsum("nohw,nihw->oi", g, xd, optimize=True) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return record(out, parents, rule)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Dense layer on ``N x F`` input with ``weight`` of shape ``K x F``."""
    if x.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def rule(g):
        gx = g @ wd if x.requires_grad else None
        gw = g.T @ xd if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None and bias.requires_grad else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return record(out, parents, rule)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)``; erfc keeps the far-negative tail from cancelling to zero."""
    xd = x.data
    cdf = 0.5 * special.erfc(-xd * _INV_SQRT2)
    out = xd * cdf

    def rule(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return record(out, (x,), rule)


@dataclass
class BnState:
    """Per-channel batch-norm parameters and running statistics."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, prefix: str = "bn") -> "BnState":
        return cls(
            gamma=Tensor(np.ones(channels), requires_grad=True, name=f"{prefix}.gamma"),
            beta=Tensor(np.zeros(channels), requires_grad=True, name=f"{prefix}.beta"),
            running_mean=np.zeros(channels),
            running_var=np.ones(channels),
        )

    def parameters(self) -> list[Tensor]:
        return [self.gamma, self.beta]


def batch_norm(x: Tensor, state: BnState, training: bool) -> Tensor:
    """Per-channel normalisation over (N, H, W) of an ``N x C x H x W`` tensor."""
    if x.data.ndim != 4:
        raise ShapeError(f"batch_norm expects N x C x H x W, got {x.shape}")
    n, c, h, w = x.shape
    if n == 0:
        raise ShapeError("batch_norm on an empty batch")
    gamma, beta = state.gamma, state.beta
    gd = gamma.data[None, :, None, None]
    bd = beta.data[None, :, None, None]
    xd = x.data
    if not training:
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        a = gd * inv[None, :, None, None]
        xhat = (xd - state.running_mean[None, :, None, None]) * inv[None, :, None, None]
        out = a * (xd - state.running_mean[None, :, None, None]) + bd

        def eval_rule(g):
            gx = g * a if x.requires_grad else None
            ggamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
            gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
            return gx, ggamma, gbeta

        return record(out, (x, gamma, beta), eval_rule)

    count = n * h * w
    if count < 2:
        raise ShapeError("batch_norm training needs at least two values per channel")
    mu = xd.mean(axis=(0, 2, 3))
    centered = xd - mu[None, :, None, None]
    var = (centered * centered).mean(axis=(0, 2, 3))
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = centered * inv[None, :, None, None]
    out = gd * xhat + bd
    state.running_mean = (1 - state.momentum) * state.running_mean + state.momentum * mu
    state.running_var = (1 - state.momentum) * state.running_var + state.momentum * var * count / (count - 1)

    def rule(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gd
            m1 = gxhat.mean(axis=(0, 2, 3), keepdims=True)
            m2 = (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
            gx = (gxhat - m1 - xhat * m2) * inv[None, :, None, None]
        return gx, ggamma, gbeta

    return record(out, (x, gamma, beta), rule)


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log-softmax at the labelled class."""
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy expects N x K logits, got {logits.shape}")
    n, k = logits.shape
    if n == 0:
        raise ShapeError("cross_entropy on an empty batch")
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (n,):
        raise ShapeError(f"{y.shape[0] if y.ndim else 0} labels for {n} rows")
    if np.any(y < 0) or np.any(y >= k):
        raise ValueError(f"label out of range [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    logp = z - lse[:, None]
    rows = np.arange(n)
    loss = -logp[rows, y].mean()

    def rule(g):
        p = np.exp(logp)
        p[rows, y] -= 1.0
        return (p * (g / n),)

    return record(np.asarray(loss), (logits,), rule)


def _windows3(xp: np.ndarray) -> np.ndarray:
    # xp: N x C x (H+2) x (W+2) -> N x C x H x W x 3 x 3 view
    return np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))


def conv2d_3x3(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """3x3 convolution, stride 1, zero padding 1. ``weight`` is ``O x C x 3 x 3``."""
    if x.data.ndim != 4 or weight.shape[1:] != (x.shape[1], 3, 3):
        raise ShapeError(f"conv2d_3x3: input {x.shape} incompatible with weight {weight.shape}")
    xd, wd = x.data, weight.data
    cols = _windows3(np.pad(xd, ((0, 0), (0, 0), (1, 1), (1, 1))))
    out = np.tensordot(cols, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def rule(g):
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        if x.requires_grad:
            gcols = _windows3(np.pad(g, ((0, 0), (0, 0), (1, 1), (1, 1))))
            flipped = wd[:, :, ::-1, ::-1]
            gx = np.tensordot(gcols, flipped, axes=([1, 4, 5], [0, 2, 3])).transpose(0, 3, 1, 2)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return record(np.ascontiguousarray(out), parents, rule)


def avg_pool2(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even extents, got {h}x{w}")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def rule(g):
        up = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3)
        return (up * 0.25,)

    return record(out, (x,), rule)


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def rule(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), (n, c, h, w)).copy(),)

    return record(out, (x,), rule)


# ---------------------------------------------------------------- verification


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    samples: int = 64,
    seed: int = 0,
) -> float:
    """Largest ``|analytic - central difference| / max(1, |analytic|)`` over sampled coordinates."""
    if not 1e-7 <= h <= 1e-4:
        raise ValueError("finite-difference step must lie in [1e-7, 1e-4]")
    for p in params:
        p.grad = None
    loss = f()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        size = flat.size
        picks = np.arange(size) if size <= samples else rng.choice(size, samples, replace=False)
        for idx in picks:
            orig = flat[idx]
            flat[idx] = orig + h
            up = float(f().data)
            flat[idx] = orig - h
            down = float(f().data)
            flat[idx] = orig
            numeric = (up - down) / (2 * h)
            ana = float(a.reshape(-1)[idx])
            worst = max(worst, abs(ana - numeric) / max(1.0, abs(ana)))
    for p in params:
        p.grad = None
    return worst


# ---------------------------------------------------------------- optimiser


@dataclass
class OptimState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], state: OptimState) -> None:
    """One bias-corrected Adam update using each parameter's ``.grad``.

    Parameters without a gradient are treated as having zero gradient.
    """
    if state.lr < 0:
        raise ValueError("learning rate must be non-negative")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ShapeError(f"optimizer tracks {len(state.m)} tensors, got {len(params)}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, m, v in zip(params, state.m, state.v):
        if m.shape != p.data.shape:
            raise ShapeError(f"moment buffer {m.shape} does not match parameter {p.shape}")
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.data.shape:
            raise ShapeError(f"gradient {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.lr == 0:
            continue
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
