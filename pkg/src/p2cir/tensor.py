"""Dense tensors with reverse-mode autodiff, Adam, and checkpoint I/O.

Storage is float32 (reductions accumulate in float64); arrays that arrive
as float64 stay float64, which is what the finite-difference checker relies
on to probe a promoted copy of one tensor while the rest of the graph stays
in float32. A Tape records backward closures in execution order and replays
them reversed; ops record themselves only while a tape is active and the
result requires a gradient.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from scipy.special import expit


def _as_array(data, dtype) -> np.ndarray:
    if dtype is not None:
        return np.ascontiguousarray(data, dtype=dtype)
    if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
        return np.ascontiguousarray(data)
    return np.ascontiguousarray(data, dtype=np.float32)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, grad={self.requires_grad})"

    # Arithmetic sugar; the free functions carry the semantics.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tensor_sum(self, axis)

    def mean(self, axis=None):
        return tensor_mean(self, axis)

    def max(self, axis=None):
        return tensor_max(self, axis)


class Tape:
    """Ordered record of backward closures; replayed in exact reverse order."""

    _stack: list["Tape"] = []

    def __init__(self):
        self._ops: list[Callable[[], None]] = []

    # -- context management ---------------------------------------------
    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        assert Tape._stack and Tape._stack[-1] is self
        Tape._stack.pop()

    @classmethod
    def active(cls) -> "Tape | None":
        return cls._stack[-1] if cls._stack else None

    # -- recording and replay ---------------------------------------------
    def __len__(self) -> int:
        return len(self._ops)

    def record(self, fn: Callable[[], None]) -> None:
        self._ops.append(fn)

    def backward(self, root: Tensor) -> None:
        if root.data.size != 1:
            raise ValueError(f"backward needs a scalar, got shape {root.shape}")
        root.grad = np.ones_like(root.data)
        for fn in reversed(self._ops):
            fn()

    def clear(self) -> None:
        self._ops.clear()


def _accumulate(t: Tensor, g: np.ndarray, own: bool = False) -> None:
    """Add g into t.grad.

    own=True promises g is a fresh array no one else references, so the
    first accumulation may adopt it instead of copying. Callers must never
    set it for views or for the upstream gradient array itself.
    """
    if not t.requires_grad:
        return
    if t.grad is None:
        if own and g.dtype == t.data.dtype:
            t.grad = g
        else:
            t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g.astype(t.data.dtype, copy=False)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _make(out_data: np.ndarray, inputs: tuple[Tensor, ...],
          backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs),
                 dtype=out_data.dtype)
    tape = Tape.active()
    if tape is not None and out.requires_grad:
        def fn():
            if out.grad is not None:
                backward(out.grad)
        tape.record(fn)
    return out


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


# --- elementwise and linear algebra ------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    def backward(g):
        if a.requires_grad:
            ga = _unbroadcast(g, a.shape)
            _accumulate(a, ga, own=ga.base is not g and ga is not g)
        if b.requires_grad:
            gb = _unbroadcast(g, b.shape)
            _accumulate(b, gb, own=gb.base is not g and gb is not g)
    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            gb = -g
            _accumulate(b, _unbroadcast(gb, b.shape), own=gb.shape == b.shape)
    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    def backward(g):
        if a.requires_grad:
            ga = g * b.data
            _accumulate(a, _unbroadcast(ga, a.shape), own=ga.shape == a.shape)
        if b.requires_grad:
            gb = g * a.data
            _accumulate(b, _unbroadcast(gb, b.shape), own=gb.shape == b.shape)
    return _make(a.data * b.data, (a, b), backward)


def scale(a, c: float) -> Tensor:
    a = _coerce(a)
    def backward(g):
        _accumulate(a, g * c, own=True)
    return _make(a.data * c, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    def backward(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T, own=True)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g, own=True)
    return _make(a.data @ b.data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    def backward(g):
        _accumulate(x, g * mask, own=True)
    # np.maximum, unlike a mask select, lets NaN propagate to the caller.
    return _make(np.maximum(x.data, 0), (x,), backward)


def softplus(x: Tensor) -> Tensor:
    """Smooth relu; its derivative is the sigmoid."""
    out = np.logaddexp(np.zeros((), dtype=x.data.dtype), x.data)
    def backward(g):
        _accumulate(x, g * expit(x.data), own=True)
    return _make(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)
    def backward(g):
        _accumulate(x, g * y * (1 - y), own=True)
    return _make(y, (x,), backward)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    def backward(g):
        _accumulate(x, g * y, own=True)
    return _make(y, (x,), backward)


def log(x: Tensor) -> Tensor:
    def backward(g):
        _accumulate(x, g / x.data, own=True)
    return _make(np.log(x.data), (x,), backward)


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)
    def backward(g):
        _accumulate(x, g / (2 * np.maximum(y, np.finfo(y.dtype).tiny)), own=True)
    return _make(y, (x,), backward)


def square(x: Tensor) -> Tensor:
    def backward(g):
        _accumulate(x, g * 2 * x.data, own=True)
    return _make(x.data * x.data, (x,), backward)


# --- reductions ---------------------------------------------------------------

def tensor_sum(x: Tensor, axis=None) -> Tensor:
    out = x.data.sum(axis=axis, dtype=np.float64).astype(x.data.dtype)
    def backward(g):
        if axis is None:
            _accumulate(x, np.broadcast_to(g, x.shape))
        else:
            _accumulate(x, np.broadcast_to(np.expand_dims(g, axis), x.shape))
    return _make(out, (x,), backward)


def tensor_mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    out = (x.data.sum(axis=axis, dtype=np.float64) / n).astype(x.data.dtype)
    def backward(g):
        if axis is None:
            _accumulate(x, np.broadcast_to(g / n, x.shape))
        else:
            _accumulate(x, np.broadcast_to(np.expand_dims(g, axis) / n, x.shape))
    return _make(out, (x,), backward)


def tensor_max(x: Tensor, axis=None) -> Tensor:
    out = x.data.max(axis=axis)
    if axis is None:
        # Route the gradient to the first maximal element only.
        first = np.zeros_like(x.data, dtype=bool).ravel()
        first[int(np.argmax(x.data))] = True
        mask = first.reshape(x.shape)
        def backward(g):
            _accumulate(x, g * mask)
        return _make(np.asarray(out), (x,), backward)
    idx = np.argmax(x.data, axis=axis)
    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis),
                          np.expand_dims(g, axis), axis)
        _accumulate(x, gx)
    return _make(out, (x,), backward)


def l2_norm(x: Tensor) -> Tensor:
    norm = float(np.sqrt((x.data.astype(np.float64) ** 2).sum()))
    out = np.asarray(norm, dtype=x.data.dtype)
    def backward(g):
        denom = max(norm, np.finfo(np.float64).tiny)
        _accumulate(x, g * (x.data / denom))
    return _make(out, (x,), backward)


# --- indexed and structural ops -----------------------------------------------

def gather(x: Tensor, index: np.ndarray) -> Tensor:
    """Rows of x selected by index; backward scatter-adds into x."""
    index = np.asarray(index)
    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        _accumulate(x, gx, own=True)
    return _make(x.data[index], (x,), backward)


def scatter_add(x: Tensor, index: np.ndarray, num_slots: int) -> Tensor:
    """out[i] = sum of rows of x whose index equals i."""
    index = np.asarray(index)
    if x.data.ndim < 1 or len(index) != x.shape[0]:
        raise ValueError(f"scatter_add: index length {len(index)} does not "
                         f"match rows {x.shape}")
    out = np.zeros((num_slots,) + x.shape[1:], dtype=x.data.dtype)
    np.add.at(out, index, x.data)
    def backward(g):
        _accumulate(x, g[index], own=True)
    return _make(out, (x,), backward)


def scatter_max(x: Tensor, index: np.ndarray, num_slots: int,
                empty_value: float = 0.0) -> Tensor:
    """Per-slot elementwise max over rows; empty slots get empty_value.

    Gradient flows to one maximal contributor per output element.
    """
    index = np.asarray(index)
    out = np.full((num_slots,) + x.shape[1:], -np.inf, dtype=x.data.dtype)
    np.maximum.at(out, index, x.data)
    contributed = np.zeros(num_slots, dtype=bool)
    contributed[index] = True
    out[~contributed] = empty_value

    def backward(g):
        gx = np.zeros_like(x.data)
        taken = np.zeros(out.shape, dtype=bool)
        per_row = out[index]
        for pos in range(x.shape[0]):
            i = index[pos]
            hit = (x.data[pos] == per_row[pos]) & ~taken[i]
            taken[i] |= hit
            gx[pos][hit] = g[i][hit]
        _accumulate(x, gx)
    return _make(out, (x,), backward)


@dataclass(frozen=True)
class SegmentMaxPlan:
    """Precomputed structure for segment_max over a fixed edge list.

    Rows of the operand must already be grouped by segment: seg_ids is
    nondecreasing, starts marks each present segment's first row, and
    inc/inc_t hold the 0/1 incidence (num_slots x rows) used to count ties
    on the backward pass.
    """

    seg_ids: np.ndarray          # (rows,) nondecreasing
    starts: np.ndarray           # (num_present,) row index per present segment
    present: np.ndarray          # (num_slots,) bool
    num_slots: int
    inc: object                  # csr (num_slots x rows)
    inc_t: object

    @classmethod
    def build(cls, seg_ids_unsorted: np.ndarray, num_slots: int):
        import scipy.sparse as sp

        order = np.argsort(seg_ids_unsorted, kind="stable")
        seg_ids = seg_ids_unsorted[order]
        rows = len(seg_ids)
        present_ids = np.unique(seg_ids)
        starts = np.searchsorted(seg_ids, present_ids)
        present = np.zeros(num_slots, dtype=bool)
        present[present_ids] = True
        inc = sp.csr_matrix((np.ones(rows, np.float32),
                             (seg_ids, np.arange(rows))),
                            shape=(num_slots, rows))
        return order, cls(seg_ids, starts, present, num_slots, inc,
                          inc.T.tocsr())


def segment_max(x: Tensor, plan: SegmentMaxPlan,
                empty_value: float = 0.0) -> Tensor:
    """Per-segment elementwise max of pre-sorted rows; empty slots fixed.

    The gradient is split evenly among tied maximal contributors, a valid
    subgradient that keeps the backward pass fully vectorized.
    """
    out = np.full((plan.num_slots,) + x.shape[1:], empty_value,
                  dtype=x.data.dtype)
    if len(plan.starts):
        out[plan.present] = np.maximum.reduceat(x.data, plan.starts, axis=0)

    def backward(g):
        winners = (x.data == out[plan.seg_ids])
        counts = plan.inc @ winners.astype(np.float32)
        gx = np.where(winners,
                      g[plan.seg_ids] / np.maximum(counts[plan.seg_ids], 1.0),
                      0.0).astype(x.data.dtype)
        _accumulate(x, gx, own=True)
    return _make(out, (x,), backward)


def concat(tensors: Iterable[Tensor], axis: int = 1) -> Tensor:
    ts = list(tensors)
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum([0] + sizes)
    def backward(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(sl)])
    return _make(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None,
            train: bool) -> Tensor:
    """Inverted dropout; identity when eval or p == 0."""
    if not train or p <= 0.0:
        return x
    if not (0.0 <= p < 1.0):
        raise ValueError(f"dropout probability {p} outside [0, 1)")
    if rng is None:
        raise ValueError("dropout in train mode needs a generator")
    mask = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    def backward(g):
        _accumulate(x, g * mask, own=True)
    return _make(x.data * mask, (x,), backward)


def dropout_rng(seed: int, epoch: int, batch: int, layer: int) -> np.random.Generator:
    """Counter-based generator keyed by (epoch, batch, layer)."""
    from .seeding import derive_seed

    word = derive_seed(seed, "dropout", epoch, batch, layer)
    key = (np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(word))
    return np.random.Generator(np.random.Philox(key=key))


def spmm(mat, mat_t, x: Tensor) -> Tensor:
    """Multiply by a constant sparse matrix; mat_t must be its transpose.

    The forward product accumulates in float64 so the result is insensitive
    to row ordering (graph relabeling) at float32 storage precision.
    """
    if x.data.dtype == np.float32:
        out = (mat @ x.data.astype(np.float64)).astype(np.float32)
    else:
        out = mat @ x.data
    def backward(g):
        _accumulate(x, mat_t @ g, own=True)
    return _make(np.ascontiguousarray(out), (x,), backward)


# --- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class NonFiniteGradient(Exception):
    pass


_ADAM_SCRATCH: dict[tuple, np.ndarray] = {}


def _scratch(shape, dtype) -> np.ndarray:
    key = (shape, np.dtype(dtype).str)
    buf = _ADAM_SCRATCH.get(key)
    if buf is None:
        buf = _ADAM_SCRATCH[key] = np.empty(shape, dtype)
    return buf


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8,
              weight_decay: float = 0.0) -> AdamState:
    """One Adam update with bias correction and decoupled weight decay."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if not np.isfinite(g.sum()) and not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name!r} at step {t}")
        if weight_decay:
            p.data -= lr * weight_decay * p.data
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        s = _scratch(p.data.shape, p.data.dtype)
        # m = beta1*m + (1-beta1)*g, then the same shape of update for v,
        # all in place through one scratch buffer.
        m *= beta1
        np.multiply(g, 1 - beta1, out=s)
        m += s
        v *= beta2
        np.multiply(g, g, out=s)
        s *= 1 - beta2
        v += s
        np.divide(v, bc2, out=s)
        np.sqrt(s, out=s)
        s += eps
        np.divide(m, s, out=s)
        s *= lr / bc1
        p.data -= s
    return state


# --- gradient checking ----------------------------------------------------------

def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-3,
               sample: int | None = None, seed: int = 0) -> float:
    """Max relative error between tape gradients and central differences.

    The probe tensor is promoted to float64 so the finite differences are
    evaluated through a float64 path regardless of the surrounding graph.
    """
    probe = Tensor(x.data.astype(np.float64), requires_grad=True)
    with Tape() as tape:
        y = f(probe)
        tape.backward(y)
    if probe.grad is None:
        g_ad = np.zeros_like(probe.data)
    else:
        g_ad = probe.grad.copy()

    flat = probe.data.reshape(-1)
    n = flat.size
    positions = np.arange(n)
    if sample is not None and sample < n:
        positions = np.random.default_rng(seed).choice(n, size=sample, replace=False)

    worst = 0.0
    g_ad_flat = g_ad.reshape(-1)
    for pos in positions:
        orig = flat[pos]
        flat[pos] = orig + eps
        hi = f(probe).data.item()
        flat[pos] = orig - eps
        lo = f(probe).data.item()
        flat[pos] = orig
        g_fd = (hi - lo) / (2 * eps)
        denom = max(abs(g_ad_flat[pos]), abs(g_fd), 1e-6)
        worst = max(worst, abs(g_ad_flat[pos] - g_fd) / denom)
    return worst


# --- checkpoints ----------------------------------------------------------------

def save_checkpoint(path: str | Path, params: dict[str, Tensor],
                    opt_state: AdamState | None = None,
                    meta: dict | None = None) -> None:
    """Write named tensors plus optimizer state; round-trips bit-exactly."""
    arrays: dict[str, np.ndarray] = {}
    for name, p in params.items():
        arrays[f"p:{name}"] = p.data
    if opt_state is not None:
        arrays["adam:step"] = np.asarray(opt_state.step, dtype=np.int64)
        for name, m in opt_state.m.items():
            arrays[f"m:{name}"] = m
        for name, v in opt_state.v.items():
            arrays[f"v:{name}"] = v
    arrays["meta"] = np.frombuffer(
        json.dumps(meta or {}, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> tuple[dict[str, Tensor], AdamState | None, dict]:
    with np.load(path) as zf:
        params: dict[str, Tensor] = {}
        state = AdamState() if "adam:step" in zf.files else None
        meta: dict = {}
        for key in zf.files:
            if key.startswith("p:"):
                params[key[2:]] = Tensor(zf[key], requires_grad=True,
                                         dtype=zf[key].dtype)
            elif key.startswith("m:"):
                state.m[key[2:]] = zf[key]
            elif key.startswith("v:"):
                state.v[key[2:]] = zf[key]
            elif key == "adam:step":
                state.step = int(zf[key])
            elif key == "meta":
                meta = json.loads(zf[key].tobytes().decode("utf-8"))
    return params, state, meta
