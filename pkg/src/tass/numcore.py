"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation validates shapes eagerly and never broadcasts implicitly:
operands of element-wise ops must match exactly. Ops are rank-agnostic over
leading axes, so the same call handles one segment or a whole batch.

Usage::

    x = tensor([[1.0, 2.0]], requires_grad=True)
    with Tape() as tape:
        loss = sum_all(tanh(x))
    backward(loss, tape)
    x.grad  # d loss / d x
"""

from __future__ import annotations

import logging
import os
from collections.abc import Callable, Iterator, Sequence
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Any

import numpy as np

from tass.errors import ContractError, DimensionError, DomainError, LabelIndexError, StaleTapeError

logger = logging.getLogger(__name__)

DTYPE = np.float64

GRADCHECK_STEP = float(os.getenv("TASS_GRADCHECK_STEP", "1e-5"))
GRADCHECK_ATOL = float(os.getenv("TASS_GRADCHECK_ATOL", "1e-8"))

# Tolerance on the total mass of a probability vector.
PROB_SUM_ATOL = 1e-6

_TINY = np.finfo(DTYPE).tiny

Adjoint = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    """A dense numeric array with an optional gradient slot."""

    __slots__ = ("_tape", "data", "grad", "name", "requires_grad")

    def __init__(self, data: Any, *, requires_grad: bool = False, name: str | None = None) -> None:
        self.data: np.ndarray = np.array(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None

    @classmethod
    def _wrap(cls, array: np.ndarray) -> Tensor:
        out = cls.__new__(cls)
        out.data = np.asarray(array, dtype=DTYPE)
        out.requires_grad = False
        out.grad = None
        out.name = None
        out._tape = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> Tensor:
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, other)

    def __mul__(self, other: Tensor | float) -> Tensor:
        if isinstance(other, Tensor):
            return mul(self, other)
        return scalar_scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> Tensor:
        return scalar_scale(self, -1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)


@dataclass(eq=False)
class _Record:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    adjoint: Adjoint


_ACTIVE_TAPE: ContextVar[Tape | None] = ContextVar("tass_active_tape", default=None)


class Tape:
    """Ordered record of executed ops; one forward/backward pair per tape.

    Entering the tape makes it the recording target for ops whose inputs
    require gradients. A tape is single-threaded.
    """

    def __init__(self) -> None:
        self.records: list[_Record] = []
        self.consumed = False
        self._tokens: list[Any] = []

    def __enter__(self) -> Tape:
        self._tokens.append(_ACTIVE_TAPE.set(self))
        return self

    def __exit__(self, *exc: object) -> None:
        _ACTIVE_TAPE.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self.records)

    @property
    def ops(self) -> list[str]:
        return [r.op for r in self.records]


@contextmanager
def no_tape() -> Iterator[None]:
    """Run ops without recording, even inside an active tape."""
    token = _ACTIVE_TAPE.set(None)
    try:
        yield
    finally:
        _ACTIVE_TAPE.reset(token)


def record(op: str, output: np.ndarray, inputs: Sequence[Tensor], adjoint: Adjoint) -> Tensor:
    """Wrap ``output`` and record ``adjoint`` on the active tape when needed.

    ``adjoint`` maps the output gradient to one gradient (or None) per input.
    """
    out = Tensor._wrap(output)
    tape = _ACTIVE_TAPE.get()
    if tape is None or not any(t.requires_grad for t in inputs):
        return out
    if tape.consumed:
        raise StaleTapeError("tape already consumed by backward; open a new Tape for a new forward pass")
    out.requires_grad = True
    out._tape = tape
    tape.records.append(_Record(op, tuple(inputs), out, adjoint))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``.

    Records are replayed in exact reverse execution order. Leaves that were
    used on the tape but do not influence the loss receive zero gradients.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise StaleTapeError("tape was already consumed by a previous backward; run a new forward")
    if not loss.requires_grad or loss._tape is not tape:
        raise StaleTapeError("loss was not produced on this tape (detached or recorded elsewhere)")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced: set[int] = set()
    leaves: dict[int, Tensor] = {}
    for rec in reversed(tape.records):
        produced.add(id(rec.output))
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        rec.output.grad = g
        for inp, gi in zip(rec.inputs, rec.adjoint(g), strict=True):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            grads[key] = grads[key] + gi if key in grads else gi
            leaves.setdefault(key, inp)

    for rec in tape.records:
        for inp in rec.inputs:
            if inp.requires_grad and id(inp) not in produced:
                leaves.setdefault(id(inp), inp)
    for key, leaf in leaves.items():
        if key in produced:
            continue
        g = grads.get(key)
        leaf.grad = np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=DTYPE).reshape(leaf.shape)


# --------------------------------------------------------------------------
# constructors
# --------------------------------------------------------------------------


def tensor(data: Any, *, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(shape: Sequence[int], *, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(tuple(shape)), requires_grad=requires_grad)


def ones(shape: Sequence[int], *, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(tuple(shape)), requires_grad=requires_grad)


# --------------------------------------------------------------------------
# element-wise suite
# --------------------------------------------------------------------------


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: operand shapes {a.shape} and {b.shape} differ (no implicit broadcasting)")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return record("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product."""
    _same_shape("mul", a, b)
    av, bv = a.data, b.data
    return record("mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def scalar_scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return record("scalar_scale", x.data * c, (x,), lambda g: (g * c,))


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise max; ties send the gradient to ``a``."""
    _same_shape("maximum", a, b)
    pick_a = a.data >= b.data
    return record("maximum", np.where(pick_a, a.data, b.data), (a, b), lambda g: (g * pick_a, g * ~pick_a))


def add_n(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise DimensionError("add_n: empty operand list")
    for x in xs[1:]:
        _same_shape("add_n", xs[0], x)
    out = xs[0].data.copy()
    for x in xs[1:]:
        out = out + x.data
    return record("add_n", out, tuple(xs), lambda g: tuple(g for _ in xs))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return record("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return record("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def masked(x: Tensor, keep: np.ndarray) -> Tensor:
    """Zero the entries where ``keep`` is False.

    The mask is a constant: gradients pass straight through kept entries.
    """
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != x.shape:
        raise DimensionError(f"masked: mask shape {keep.shape} does not match tensor shape {x.shape}")
    return record("masked", np.where(keep, x.data, 0.0), (x,), lambda g: (g * keep,))


# --------------------------------------------------------------------------
# structural ops
# --------------------------------------------------------------------------


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}") from e
    return record("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    if x.ndim < 2:
        raise DimensionError(f"transpose needs rank >= 2, got shape {x.shape}")
    return record("transpose", np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    if not xs:
        raise DimensionError("concat: empty operand list")
    ndim = xs[0].ndim
    ax = axis % ndim if ndim else 0
    for x in xs:
        if x.ndim != ndim or x.shape[:ax] + x.shape[ax + 1 :] != xs[0].shape[:ax] + xs[0].shape[ax + 1 :]:
            shapes = [t.shape for t in xs]
            raise DimensionError(f"concat along axis {axis}: incompatible shapes {shapes}")
    bounds = np.cumsum([x.shape[ax] for x in xs])[:-1]
    out = np.concatenate([x.data for x in xs], axis=ax)
    return record("concat", out, tuple(xs), lambda g: tuple(np.split(g, bounds, axis=ax)))


def concat_lastdim(*xs: Tensor) -> Tensor:
    return concat(xs, axis=-1)


def take(x: Tensor, indices: Sequence[int] | np.ndarray, axis: int) -> Tensor:
    """Gather entries along ``axis``; repeated indices accumulate gradient."""
    idx = np.asarray(indices, dtype=np.intp)
    extent = x.shape[axis]
    if idx.size and (idx.min() < -extent or idx.max() >= extent):
        raise DimensionError(f"take: index out of range for axis {axis} of extent {extent}")
    out = np.take(x.data, idx, axis=axis)

    def adjoint(g: np.ndarray) -> tuple[np.ndarray]:
        gx = np.zeros_like(x.data)
        np.add.at(np.moveaxis(gx, axis, 0), idx, np.moveaxis(g, axis, 0))
        return (gx,)

    return record("take", out, (x,), adjoint)


def slice_lastdim(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= x.shape[-1]:
        raise DimensionError(f"slice_lastdim: [{start}:{stop}] outside last extent {x.shape[-1]}")

    def adjoint(g: np.ndarray) -> tuple[np.ndarray]:
        gx = np.zeros_like(x.data)
        gx[..., start:stop] = g
        return (gx,)

    return record("slice_lastdim", x.data[..., start:stop], (x,), adjoint)


# --------------------------------------------------------------------------
# reductions
# --------------------------------------------------------------------------


def mean_axis(x: Tensor, axis: int, *, keepdims: bool = False) -> Tensor:
    """Arithmetic mean over ``axis``, dividing by the true extent."""
    if x.ndim == 0:
        raise DimensionError("mean_axis on a rank-0 tensor")
    extent = x.shape[axis]
    if extent == 0:
        raise DimensionError(f"mean_axis over empty axis {axis}")
    out = x.data.mean(axis=axis, keepdims=keepdims)

    def adjoint(g: np.ndarray) -> tuple[np.ndarray]:
        g = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape) / extent,)

    return record("mean_axis", out, (x,), adjoint)


def sum_all(x: Tensor) -> Tensor:
    return record("sum_all", np.asarray(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),))


def mean_all(x: Tensor) -> Tensor:
    n = max(x.size, 1)
    return record("mean_all", np.asarray(x.data.mean()), (x,), lambda g: (np.full(x.shape, float(g) / n),))


# --------------------------------------------------------------------------
# linear algebra
# --------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(..., m, k) @ (..., k, n) with identical leading axes."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.data, b.data
    return record(
        "matmul",
        av @ bv,
        (a, b),
        lambda g: (g @ np.swapaxes(bv, -1, -2), np.swapaxes(av, -1, -2) @ g),
    )


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weight + bias`` applied to every row of ``x``.

    ``weight`` is (k, m) and ``bias`` is (m,); the bias is added to each row
    explicitly, which is not an implicit broadcast of the operands.
    """
    k = x.shape[-1] if x.ndim else -1
    if weight.ndim != 2 or weight.shape[0] != k or bias.shape != (weight.shape[1],):
        raise DimensionError(f"linear: input {x.shape}, weight {weight.shape}, bias {bias.shape} do not compose")
    xv, wv = x.data, weight.data
    m = wv.shape[1]

    def adjoint(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        g2 = g.reshape(-1, m)
        return g @ wv.T, xv.reshape(-1, k).T @ g2, g2.sum(axis=0)

    return record("linear", xv @ wv + bias.data, (x, weight, bias), adjoint)


# --------------------------------------------------------------------------
# probability ops and losses
# --------------------------------------------------------------------------


def softmax_lastdim(x: Tensor) -> Tensor:
    """Stable softmax over the trailing axis (max subtraction)."""
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"softmax_lastdim needs a non-empty trailing axis, got shape {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return record("softmax", y, (x,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def logsumexp_lastdim(x: Tensor) -> Tensor:
    """``log sum exp`` over the trailing axis, kept as an axis of length 1."""
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"logsumexp_lastdim needs a non-empty trailing axis, got shape {x.shape}")
    top = x.data.max(axis=-1, keepdims=True)
    e = np.exp(x.data - top)
    total = e.sum(axis=-1, keepdims=True)
    y = e / total
    return record("logsumexp", top + np.log(total), (x,), lambda g: (g * y,))


def renormalize_lastdim(x: Tensor) -> Tensor:
    """Divide each trailing slice by its sum."""
    s = x.data.sum(axis=-1, keepdims=True)
    if np.any(s <= 0):
        raise DomainError("renormalize_lastdim: a slice has non-positive mass")
    y = x.data / s
    return record("renormalize", y, (x,), lambda g: ((g - (g * y).sum(axis=-1, keepdims=True)) / s,))


def cross_entropy(logits: Tensor, labels: Sequence[int] | np.ndarray) -> Tensor:
    """Mean over rows of ``-log softmax(logits)[label]``."""
    if logits.ndim != 2 or logits.shape[1] == 0:
        raise DimensionError(f"cross_entropy needs B×C logits, got shape {logits.shape}")
    n_rows, n_classes = logits.shape
    y = np.asarray(labels, dtype=np.intp).reshape(-1)
    if y.shape[0] != n_rows:
        raise DimensionError(f"cross_entropy: {y.shape[0]} labels for {n_rows} logit rows")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise LabelIndexError(f"cross_entropy: label outside [0, {n_classes})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(n_rows)
    loss = -log_p[rows, y].mean()

    def adjoint(g: np.ndarray) -> tuple[np.ndarray]:
        d = np.exp(log_p)
        d[rows, y] -= 1.0
        return (d * (float(g) / n_rows),)

    return record("cross_entropy", np.asarray(loss), (logits,), adjoint)


def _check_distribution(name: str, v: np.ndarray) -> None:
    if np.any(v < 0):
        raise DomainError(f"js_divergence: {name} has a negative entry")
    dev = np.abs(v.sum(axis=-1) - 1.0)
    if np.any(dev > PROB_SUM_ATOL):
        raise DomainError(f"js_divergence: {name} sums deviate from 1 by {float(dev.max()):.3g}")


def _xlogx_over(a: np.ndarray, m: np.ndarray) -> np.ndarray:
    safe_a = np.where(a > 0, a, 1.0)
    safe_m = np.where(m > 0, m, 1.0)
    return np.where(a > 0, a * np.log(safe_a / safe_m), 0.0)


def js_divergence(p: Tensor, q: Tensor) -> Tensor:
    """Jensen-Shannon divergence (nats) over the trailing axis.

    A 1-D pair yields a scalar; leading axes are kept as a batch. Terms with
    zero probability contribute zero.
    """
    _same_shape("js_divergence", p, q)
    if p.ndim == 0 or p.shape[-1] == 0:
        raise DimensionError(f"js_divergence needs a non-empty trailing axis, got shape {p.shape}")
    pv, qv = p.data, q.data
    _check_distribution("p", pv)
    _check_distribution("q", qv)
    m = 0.5 * (pv + qv)
    value = 0.5 * (_xlogx_over(pv, m).sum(axis=-1) + _xlogx_over(qv, m).sum(axis=-1))
    value = np.maximum(value, 0.0)

    safe_m = np.where(m > 0, m, 1.0)
    dp = np.where(m > 0, 0.5 * np.log(np.maximum(pv, _TINY) / safe_m), 0.0)
    dq = np.where(m > 0, 0.5 * np.log(np.maximum(qv, _TINY) / safe_m), 0.0)

    def adjoint(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        gx = np.expand_dims(g, -1)
        return gx * dp, gx * dq

    return record("js_divergence", np.asarray(value), (p, q), adjoint)


# --------------------------------------------------------------------------
# finite-difference oracle
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GradCheckReport:
    """Outcome of comparing backward's gradient with central differences."""

    max_rel_err: float
    max_abs_err: float
    n_checked: int
    n_failed: int
    worst_index: tuple[int, ...] | None
    passed: bool
    label: str = ""


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    step: float = GRADCHECK_STEP,
    tolerance: float = 1e-5,
    *,
    atol: float = GRADCHECK_ATOL,
    label: str = "",
) -> GradCheckReport:
    """Compare ``backward`` against (f(x+he_i) - f(x-he_i)) / 2h entry-wise.

    Relative error uses a max(|a|, |b|, 1e-8) denominator. An entry passes
    when its relative error is within ``tolerance`` or its absolute error is
    within ``atol``. ``x`` is perturbed in place and restored.
    """
    if step <= 0:
        raise ContractError(f"finite_diff_check: step must be positive, got {step}")

    was_tracked = x.requires_grad
    x.requires_grad = True
    x.grad = None
    try:
        with Tape() as tape:
            out = f(x)
        backward(out, tape)
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
    finally:
        x.requires_grad = was_tracked

    numeric = np.zeros_like(x.data)
    with no_tape():
        for idx in np.ndindex(x.shape):
            orig = x.data[idx]
            x.data[idx] = orig + step
            f_plus = f(x).item()
            x.data[idx] = orig - step
            f_minus = f(x).item()
            x.data[idx] = orig
            numeric[idx] = (f_plus - f_minus) / (2.0 * step)

    abs_err = np.abs(analytic - numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel_err = abs_err / denom
    ok = (rel_err <= tolerance) | (abs_err <= atol)
    worst = None
    if x.size:
        worst = tuple(int(i) for i in np.unravel_index(int(np.argmax(rel_err)), x.shape)) if x.ndim else ()
    report = GradCheckReport(
        max_rel_err=float(rel_err.max()) if x.size else 0.0,
        max_abs_err=float(abs_err.max()) if x.size else 0.0,
        n_checked=x.size,
        n_failed=int((~ok).sum()),
        worst_index=worst,
        passed=bool(ok.all()),
        label=label,
    )
    if not report.passed:
        logger.debug("gradient check failed for %s: max rel err %.3g", label or "tensor", report.max_rel_err)
    return report
