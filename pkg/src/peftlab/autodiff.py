"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations executed while a :class:`Tape` is active append nodes holding a
local-derivative closure. ``backward(loss)`` walks the tape in reverse and
accumulates ``grad`` on every ``requires_grad`` tensor reachable from the
loss. A tape records in execution order, so the reverse walk is a valid
topological order by construction. Tapes are single-use.

Only the broadcasting patterns the models actually need are implemented
(bias add, row mean); everything else demands exact shape agreement.
"""

import math

import numpy as np

from . import kernels
from .errors import (
    ContractError,
    DimensionError,
    InfeasibleTargetError,
    NonFiniteError,
)

_TAPE_STACK: list["Tape"] = []


class Tensor:
    """A dense float64 value, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor contains NaN or Inf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def _acc(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of primitive operations for one forward pass."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, object]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPE_STACK.pop()

    def __len__(self) -> int:
        return len(self._nodes)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def _record(out: Tensor, backward_fn) -> Tensor:
    if _TAPE_STACK and out.requires_grad:
        tape = _TAPE_STACK[-1]
        tape._nodes.append((out, backward_fn))
        out._tape = tape
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``.

    The loss must be a scalar recorded on an active tape; the tape is
    consumed and cannot be walked twice.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise ContractError("loss was not produced under an active Tape")
    if tape._consumed:
        raise ContractError("tape already consumed by a previous backward")
    tape._consumed = True
    loss._acc(np.ones_like(loss.data))
    for out, fn in reversed(tape._nodes):
        if out.grad is not None:
            fn(out.grad)


def _requires(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, requires_grad=_requires(a, b))

    def fn(g):
        if a.requires_grad:
            a._acc(g @ b.data.T)
        if b.requires_grad:
            b._acc(a.data.T @ g)

    return _record(out, fn)


def transpose(x: Tensor) -> Tensor:
    out = Tensor(x.data.T, requires_grad=x.requires_grad)

    def fn(g):
        if x.requires_grad:
            x._acc(g.T)

    return _record(out, fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data, requires_grad=_requires(a, b))

    def fn(g):
        if a.requires_grad:
            a._acc(g)
        if b.requires_grad:
            b._acc(g)

    return _record(out, fn)


def add_n(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ContractError("add_n needs at least one tensor")
    shape = parts[0].shape
    for p in parts[1:]:
        if p.shape != shape:
            raise DimensionError(f"add_n shape mismatch: {shape} vs {p.shape}")
    out = Tensor(sum(p.data for p in parts), requires_grad=_requires(*parts))

    def fn(g):
        for p in parts:
            if p.requires_grad:
                p._acc(g)

    return _record(out, fn)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast bias add: x[..., n] + b[n]."""
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"bias shape {b.shape} does not fit {x.shape}")
    out = Tensor(x.data + b.data, requires_grad=_requires(x, b))

    def fn(g):
        if x.requires_grad:
            x._acc(g)
        if b.requires_grad:
            b._acc(g.reshape(-1, b.shape[0]).sum(axis=0))

    return _record(out, fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data, requires_grad=_requires(a, b))

    def fn(g):
        if a.requires_grad:
            a._acc(g * b.data)
        if b.requires_grad:
            b._acc(g * a.data)

    return _record(out, fn)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(x.data * c, requires_grad=x.requires_grad)

    def fn(g):
        if x.requires_grad:
            x._acc(g * c)

    return _record(out, fn)


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum(), requires_grad=x.requires_grad)

    def fn(g):
        if x.requires_grad:
            x._acc(np.full_like(x.data, float(g)))

    return _record(out, fn)


def mean_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.mean(), requires_grad=x.requires_grad)

    def fn(g):
        if x.requires_grad:
            x._acc(np.full_like(x.data, float(g) / x.size))

    return _record(out, fn)


def mean_rows(x: Tensor) -> Tensor:
    """Mean over axis 0: [T, n] -> [1, n]."""
    if x.data.ndim != 2:
        raise DimensionError(f"mean_rows needs a 2-D tensor, got {x.shape}")
    out = Tensor(x.data.mean(axis=0, keepdims=True), requires_grad=x.requires_grad)
    rows = x.shape[0]

    def fn(g):
        if x.requires_grad:
            x._acc(np.broadcast_to(g / rows, x.data.shape).copy())

    return _record(out, fn)


def slice_cols(x: Tensor, lo: int, hi: int) -> Tensor:
    if x.data.ndim != 2 or not (0 <= lo < hi <= x.shape[1]):
        raise DimensionError(f"bad column slice [{lo}:{hi}] for shape {x.shape}")
    out = Tensor(x.data[:, lo:hi].copy(), requires_grad=x.requires_grad)

    def fn(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[:, lo:hi] = g
            x._acc(full)

    return _record(out, fn)


def concat_cols(parts: list[Tensor]) -> Tensor:
    rows = parts[0].shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.shape[0] != rows:
            raise DimensionError("concat_cols needs 2-D tensors with equal row count")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1), requires_grad=_requires(*parts))
    widths = [p.shape[1] for p in parts]

    def fn(g):
        lo = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                p._acc(g[:, lo : lo + w])
            lo += w

    return _record(out, fn)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Smooth Gaussian-error-style activation (tanh form)."""
    inner = _GELU_C * (x.data + 0.044715 * x.data**3)
    t = np.tanh(inner)
    out = Tensor(0.5 * x.data * (1.0 + t), requires_grad=x.requires_grad)

    def fn(g):
        if x.requires_grad:
            d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x.data**2)
            x._acc(g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t**2) * d_inner))

    return _record(out, fn)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Probability-normalize along ``axis``; stabilized by max-subtraction."""
    if not -x.data.ndim <= axis < x.data.ndim:
        raise DimensionError(f"axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, requires_grad=x.requires_grad)

    def fn(g):
        if x.requires_grad:
            x._acc(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _record(out, fn)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.data.ndim <= axis < x.data.ndim:
        raise DimensionError(f"axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = Tensor(y, requires_grad=x.requires_grad)

    def fn(g):
        if x.requires_grad:
            x._acc(g - np.exp(y) * g.sum(axis=axis, keepdims=True))

    return _record(out, fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row of x over its last axis, then scale and shift."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm scale/shift must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gamma.data + beta.data, requires_grad=_requires(x, gamma, beta))

    def fn(g):
        if gamma.requires_grad:
            gamma._acc((g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            beta._acc(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gh = g * gamma.data
            # standard layer-norm backward through mean and variance
            x._acc(inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True)))

    return _record(out, fn)


def weighted_combine(parts: list[Tensor], coeffs: Tensor) -> Tensor:
    """sum_i coeffs[i] * parts[i]; all parts share one shape."""
    if coeffs.data.ndim != 1 or len(parts) != coeffs.shape[0]:
        raise DimensionError(f"{len(parts)} parts vs {coeffs.shape} coefficients")
    shape = parts[0].shape
    for p in parts[1:]:
        if p.shape != shape:
            raise DimensionError("weighted_combine parts must share one shape")
    c = coeffs.data
    out_data = np.zeros(shape)
    for i, p in enumerate(parts):
        out_data += c[i] * p.data
    out = Tensor(out_data, requires_grad=_requires(coeffs, *parts))

    def fn(g):
        for i, p in enumerate(parts):
            if p.requires_grad:
                p._acc(c[i] * g)
        if coeffs.requires_grad:
            coeffs._acc(np.array([(g * p.data).sum() for p in parts]))

    return _record(out, fn)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean NLL of integer ``labels`` under softmax(logits); logits [B, C]."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise DimensionError(f"cross_entropy got logits {logits.shape}, labels {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= logits.shape[1]:
        raise DimensionError("label index out of range")
    n = logits.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    out = Tensor(-logp[np.arange(n), labels].mean(), requires_grad=logits.requires_grad)

    def fn(g):
        if logits.requires_grad:
            gl = np.exp(logp)
            gl[np.arange(n), labels] -= 1.0
            logits._acc(gl * (float(g) / n))

    return _record(out, fn)


def ctc_loss(log_probs: Tensor, targets, blank: int = 0) -> Tensor:
    """Negative log-probability of all frame alignments collapsing to ``targets``.

    ``log_probs`` is a [T, C] tensor of per-frame log distributions. The
    forward dynamic program runs over the blank-augmented target in the log
    domain; the gradient comes from the alpha-beta posterior computed by the
    same kernel.
    """
    if log_probs.data.ndim != 2:
        raise DimensionError(f"ctc_loss needs [T, C] log-probs, got {log_probs.shape}")
    T, C = log_probs.shape
    targets = [int(t) for t in targets]
    if not 0 <= blank < C:
        raise DimensionError(f"blank index {blank} out of range for {C} classes")
    if any(t == blank for t in targets):
        raise ContractError("target tokens must differ from the blank index")
    if any(not 0 <= t < C for t in targets):
        raise DimensionError("target token out of class range")
    repeats = sum(1 for i in range(1, len(targets)) if targets[i] == targets[i - 1])
    min_frames = len(targets) + repeats
    if T < min_frames:
        raise InfeasibleTargetError(
            f"target needs at least {min_frames} frames, sequence has {T}"
        )
    loss_val, grad = kernels.ctc_forward_backward(
        np.ascontiguousarray(log_probs.data), np.asarray(targets, dtype=np.int64), blank
    )
    if not math.isfinite(loss_val):
        raise InfeasibleTargetError("ctc loss is not finite for this target")
    out = Tensor(loss_val, requires_grad=log_probs.requires_grad)

    def fn(g):
        if log_probs.requires_grad:
            log_probs._acc(grad * float(g))

    return _record(out, fn)
