"""Dense float32 tensor kernels with a minimal reverse-mode tape.

Every kernel is a pure function on `Tensor` values. When a `GradTape` is
active on the current thread, kernels append a backward closure to it;
otherwise they are plain numpy calls. Determinism contract: fixed iteration
order, no reduction reordering, so a seeded run is bit-reproducible.

The default dtype is float32. Passing float64 parameters propagates float64
through every kernel, which is what the finite-difference gradient tests use
(central differences at eps=1e-3 are meaningless in float32 noise).
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, NonFiniteError, ShapeError

DTYPE = np.float32

# Scan kernel outputs for NaN/Inf. On by default: non-finite values are a
# hard error everywhere in this package.
FINITE_CHECKS = True

_uid_counter = itertools.count()
_tls = threading.local()


def _active_tape():
    return getattr(_tls, "tape", None)


class Tensor:
    """A named, row-major float array. Wraps one numpy ndarray."""

    __slots__ = ("data", "name", "requires_grad", "uid")

    def __init__(self, data, name: str | None = None, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DTYPE)
        self.data = arr
        self.name = name
        self.requires_grad = requires_grad
        self.uid = next(_uid_counter)
        if FINITE_CHECKS and not _finite(arr):
            raise NonFiniteError(f"tensor {name or self.uid} contains NaN/Inf")

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={tuple(self.data.shape)}{tag})"

    # Thin operator sugar; all real work happens in the module functions.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data, name: str) -> Tensor:
    """A learnable tensor; gradients accumulate under its name."""
    return Tensor(data, name=name, requires_grad=True)


class GradTape:
    """Ordered record of primitive ops from one forward pass.

    Use as a context manager; ops executed inside record themselves. One
    training thread owns a tape — the active-tape pointer is thread-local,
    so concurrent inference threads never record.
    """

    def __init__(self):
        self._records = []  # (out_uid, inputs, backward_fn)
        self._live = set()  # uids whose gradient must be tracked

    def __enter__(self):
        if _active_tape() is not None:
            raise ContractError("a GradTape is already active on this thread")
        _tls.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _tls.tape = None
        return False

    def needs(self, t: Tensor) -> bool:
        return t.requires_grad or t.uid in self._live

    def record(self, out: Tensor, inputs: tuple, backward_fn) -> None:
        self._live.add(out.uid)
        self._records.append((out.uid, inputs, backward_fn))

    def gradients(self, loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
        """Walk the tape backward from `loss`; see module-level `backward`."""
        if loss.data.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.data.shape}")
        grad_by_uid: dict[int, np.ndarray] = {
            loss.uid: np.ones_like(loss.data)
        }
        for out_uid, inputs, backward_fn in reversed(self._records):
            g = grad_by_uid.pop(out_uid, None)
            if g is None:
                continue
            for t, ig in zip(inputs, backward_fn(g)):
                if ig is None:
                    continue
                acc = grad_by_uid.get(t.uid)
                # out-of-place: closures may hand back aliased arrays
                grad_by_uid[t.uid] = ig if acc is None else acc + ig
        out: dict[str, np.ndarray] = {}
        for name, p in params.items():
            g = grad_by_uid.get(p.uid)
            out[name] = g if g is not None else np.zeros_like(p.data)
        return out


def backward(tape: GradTape, loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss for every named parameter.

    Parameters that never touched the loss get exact zero gradients.
    """
    return tape.gradients(loss, params)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finite(data: np.ndarray) -> bool:
    # min/max propagate NaN and Inf; cheaper than isfinite().all() since
    # nothing is allocated
    if data.size == 0:
        return True
    lo, hi = data.min(), data.max()
    return bool(np.isfinite(lo)) and bool(np.isfinite(hi))


def _out(data) -> Tensor:
    if FINITE_CHECKS and not _finite(data):
        raise NonFiniteError("kernel produced NaN/Inf")
    t = Tensor.__new__(Tensor)
    t.data = data
    t.name = None
    t.requires_grad = False
    t.uid = next(_uid_counter)
    return t


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _swap(a: np.ndarray) -> np.ndarray:
    return a.swapaxes(-1, -2)


# ---------------------------------------------------------------------------
# primitive kernels
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _out(a.data + b.data)
    tape = _active_tape()
    if tape is not None:
        na, nb = tape.needs(a), tape.needs(b)
        if na or nb:
            ash, bsh = a.data.shape, b.data.shape

            def bwd(g):
                return (
                    _unbroadcast(g, ash) if na else None,
                    _unbroadcast(g, bsh) if nb else None,
                )

            tape.record(out, (a, b), bwd)
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _out(a.data - b.data)
    tape = _active_tape()
    if tape is not None:
        na, nb = tape.needs(a), tape.needs(b)
        if na or nb:
            ash, bsh = a.data.shape, b.data.shape

            def bwd(g):
                return (
                    _unbroadcast(g, ash) if na else None,
                    _unbroadcast(-g, bsh) if nb else None,
                )

            tape.record(out, (a, b), bwd)
    return out


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out = _out(-a.data)
    tape = _active_tape()
    if tape is not None and tape.needs(a):
        tape.record(out, (a,), lambda g: (-g,))
    return out


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    out = _out(a.data * b.data)
    tape = _active_tape()
    if tape is not None:
        na, nb = tape.needs(a), tape.needs(b)
        if na or nb:
            ad, bd = a.data, b.data

            def bwd(g):
                return (
                    _unbroadcast(g * bd, ad.shape) if na else None,
                    _unbroadcast(g * ad, bd.shape) if nb else None,
                )

            tape.record(out, (a, b), bwd)
    return out


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    out = _out(a.data * a.data.dtype.type(c))
    tape = _active_tape()
    if tape is not None and tape.needs(a):
        tape.record(out, (a,), lambda g: (g * g.dtype.type(c),))
    return out


def matmul(a, b) -> Tensor:
    """Matrix product; leading axes broadcast like np.matmul."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dims disagree: {a.data.shape} @ {b.data.shape}")
    with np.errstate(over="ignore"):  # overflow surfaces as NonFiniteError
        out = _out(a.data @ b.data)
    tape = _active_tape()
    if tape is not None:
        na, nb = tape.needs(a), tape.needs(b)
        if na or nb:
            ad, bd = a.data, b.data
            if ad.ndim > 2 and bd.ndim == 2:
                # flatten the batch: one big GEMM instead of many small ones,
                # and the weight gradient comes out already reduced
                k = ad.shape[-1]

                def bwd(g):
                    g2 = g.reshape(-1, g.shape[-1])
                    ga = (g2 @ bd.T).reshape(ad.shape) if na else None
                    gb = ad.reshape(-1, k).T @ g2 if nb else None
                    return ga, gb

            else:

                def bwd(g):
                    ga = _unbroadcast(g @ _swap(bd), ad.shape) if na else None
                    gb = _unbroadcast(_swap(ad) @ g, bd.shape) if nb else None
                    return ga, gb

            tape.record(out, (a, b), bwd)
    return out


def swap_last2(a) -> Tensor:
    a = _as_tensor(a)
    out = _out(_swap(a.data).copy())
    tape = _active_tape()
    if tape is not None and tape.needs(a):
        tape.record(out, (a,), lambda g: (_swap(g),))
    return out


def gelu(a) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    a = _as_tensor(a)
    x = a.data
    c = x.dtype.type(np.sqrt(2.0 / np.pi))
    k = x.dtype.type(0.044715)
    inner = c * (x + k * (x * x * x))  # x**3 is pathologically slow in numpy
    t = np.tanh(inner)
    out = _out(0.5 * x * (1.0 + t))
    tape = _active_tape()
    if tape is not None and tape.needs(a):

        def bwd(g):
            sech2 = 1.0 - t * t
            d = 0.5 * (1.0 + t) + 0.5 * x * sech2 * c * (1.0 + 3.0 * k * x * x)
            return (g * d,)

        tape.record(out, (a,), bwd)
    return out


def _shift_by_rowmax(x: np.ndarray) -> np.ndarray:
    """x minus its last-axis max, clamped: the subtraction itself can
    overflow for inputs near the float32 extremes."""
    with np.errstate(over="ignore"):
        shifted = x - x.max(axis=-1, keepdims=True)
    return np.maximum(shifted, np.finfo(x.dtype).min, out=shifted)


def softmax(a) -> Tensor:
    """Softmax over the last axis, max-subtracted for stability."""
    a = _as_tensor(a)
    x = a.data
    shifted = _shift_by_rowmax(x)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = _out(s)
    tape = _active_tape()
    if tape is not None and tape.needs(a):

        def bwd(g):
            return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

        tape.record(out, (a,), bwd)
    return out


def softmax_rows(a) -> Tensor:
    """Row-wise softmax of a 2-d matrix."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got shape {a.data.shape}")
    return softmax(a)


def log_softmax(a) -> Tensor:
    """Log-softmax over the last axis."""
    a = _as_tensor(a)
    x = a.data
    shifted = _shift_by_rowmax(x)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    out = _out(y)
    tape = _active_tape()
    if tape is not None and tape.needs(a):
        s = np.exp(y)

        def bwd(g):
            return (g - s * g.sum(axis=-1, keepdims=True),)

        tape.record(out, (a,), bwd)
    return out


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv
    out = _out(xhat * gain.data + bias.data)
    tape = _active_tape()
    if tape is not None:
        na, ng, nb = tape.needs(a), tape.needs(gain), tape.needs(bias)
        if na or ng or nb:
            gd = gain.data
            lead = tuple(range(x.ndim - 1))

            def bwd(g):
                ga = gg = gb = None
                if ng:
                    gg = (g * xhat).sum(axis=lead)
                if nb:
                    gb = g.sum(axis=lead)
                if na:
                    gx = g * gd
                    ga = inv * (
                        gx
                        - gx.mean(axis=-1, keepdims=True)
                        - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
                    )
                return ga, gg, gb

            tape.record(out, (a, gain, bias), bwd)
    return out


def embedding_lookup(table, ids: np.ndarray) -> Tensor:
    """Gather rows of `table` by integer index array."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ContractError("embedding id out of range")
    out = _out(table.data[ids])
    tape = _active_tape()
    if tape is not None and tape.needs(table):
        tshape = table.data.shape

        def bwd(g):
            gt = np.zeros(tshape, dtype=g.dtype)
            np.add.at(gt, ids.reshape(-1), g.reshape(-1, tshape[-1]))
            return (gt,)

        tape.record(out, (table,), bwd)
    return out


def sum_axis(a, axis: int, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = _out(a.data.sum(axis=axis, keepdims=keepdims))
    tape = _active_tape()
    if tape is not None and tape.needs(a):
        ashape = a.data.shape

        def bwd(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            # read-only view is fine: gradient accumulation is out-of-place
            return (np.broadcast_to(g, ashape),)

        tape.record(out, (a,), bwd)
    return out


def mean_all(a) -> Tensor:
    """Mean over every element; returns a scalar tensor."""
    a = _as_tensor(a)
    out = _out(np.asarray(a.data.mean()))
    tape = _active_tape()
    if tape is not None and tape.needs(a):
        ashape, n = a.data.shape, a.data.size

        def bwd(g):
            return (np.full(ashape, g / n, dtype=g.dtype),)

        tape.record(out, (a,), bwd)
    return out


def take_diag(a) -> Tensor:
    """Diagonal of a square matrix as a vector."""
    a = _as_tensor(a)
    if a.data.ndim != 2 or a.data.shape[0] != a.data.shape[1]:
        raise ShapeError(f"take_diag expects a square matrix, got {a.data.shape}")
    out = _out(np.diagonal(a.data).copy())
    tape = _active_tape()
    if tape is not None and tape.needs(a):
        k = a.data.shape[0]

        def bwd(g):
            ga = np.zeros((k, k), dtype=g.dtype)
            np.fill_diagonal(ga, g)
            return (ga,)

        tape.record(out, (a,), bwd)
    return out


def concat_last(parts: list) -> Tensor:
    """Concatenate along the last axis."""
    parts = [_as_tensor(p) for p in parts]
    out = _out(np.concatenate([p.data for p in parts], axis=-1))
    tape = _active_tape()
    if tape is not None:
        needs = [tape.needs(p) for p in parts]
        if any(needs):
            widths = [p.data.shape[-1] for p in parts]

            def bwd(g):
                grads, off = [], 0
                for w, need in zip(widths, needs):
                    grads.append(g[..., off : off + w] if need else None)
                    off += w
                return tuple(grads)

            tape.record(out, tuple(parts), bwd)
    return out


def dropout(a, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; draws one mask from `rng` per call."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    a = _as_tensor(a)
    if rate == 0.0:
        return a
    u = rng.random(a.data.shape, dtype=np.float32)
    keep = (u >= rate).astype(a.data.dtype)
    keep /= a.data.dtype.type(1.0 - rate)
    return mul(a, Tensor(keep))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment estimates plus the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> tuple[dict[str, Tensor], AdamState]:
    """One bias-corrected Adam update, in place on the parameter data.

    L2 decay is coupled: weight_decay * theta is added to the gradient
    before the moment updates (not decoupled AdamW).
    """
    if lr <= 0.0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if weight_decay < 0.0:
        raise ConfigError(f"weight decay must be non-negative, got {weight_decay}")
    b1, b2 = betas
    state.step += 1
    t = state.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ShapeError(f"grad/param shape mismatch for {name}")
        if weight_decay:
            g = g + weight_decay * p.data
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= (lr / c1) * m / (np.sqrt(v / c2) + eps)
        if FINITE_CHECKS and not _finite(p.data):
            raise NonFiniteError(f"parameter {name} became non-finite during adam_step")
    return params, state
