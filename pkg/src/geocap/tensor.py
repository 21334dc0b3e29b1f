"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything is 64-bit and copy-on-write: operations never alias their
inputs, storage is row-major, and there are no views or strides to
reason about. Each operation that participates in differentiation
records its inputs and a local backward rule on the output tensor;
``backward`` replays those records in reverse topological order and
accumulates gradients additively, so a tensor used k times receives
the sum of its k single-use gradients.

The op set is deliberately small: just enough to express a transformer
encoder/decoder with gated geometric attention, plus the losses needed
for teacher-forced and policy-gradient training. ``finite_diff_check``
is the house verification harness; every backward rule in this module
is expected to survive it at 1e-4 relative error.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, DomainError, ShapeError

__all__ = [
    "Tensor",
    "tensor",
    "parameter",
    "no_grad",
    "elementwise",
    "add",
    "sub",
    "mul",
    "sigmoid",
    "relu",
    "exp",
    "log",
    "scale",
    "shift",
    "matmul",
    "softmax_rows",
    "layer_norm",
    "embedding_lookup",
    "cross_entropy",
    "picked_log_probs",
    "sum_all",
    "reshape",
    "transpose",
    "stack",
    "dropout",
    "backward",
    "zero_grads",
    "finite_diff_check",
    "GradCheckReport",
]

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable recording of backward rules inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class _Record:
    """One recorded operation: inputs plus the local backward rule.

    ``backward_fn`` maps the upstream gradient (an ndarray shaped like
    the op output) to one gradient ndarray per input, or None for
    inputs that need no gradient.
    """

    __slots__ = ("inputs", "backward_fn")

    def __init__(self, inputs: tuple["Tensor", ...], backward_fn: Callable):
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tensor:
    """A dense float64 array with an optional gradient accumulator.

    ``data`` is always a C-contiguous float64 ndarray; ``grad`` is
    either None or an ndarray of identical shape. Tensors created with
    ``requires_grad=True`` (or produced from such tensors while grad
    recording is enabled) take part in ``backward``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_record")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        if not np.all(np.isfinite(arr)):
            raise DomainError("tensor values must be finite")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._record: Optional[_Record] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() requires a scalar tensor")
        return float(self.data.reshape(-1)[0])

    def tolist(self):
        return self.data.tolist()

    def grad_array(self) -> np.ndarray:
        """The accumulated gradient, or zeros if backward never reached us."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """A grad-free copy of the current values."""
        return Tensor(self.data)

    # Operator sugar. Scalar operands are folded in as constants.
    def __add__(self, other):
        if isinstance(other, (int, float)):
            return shift(self, float(other))
        return add(self, other)

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return shift(self, -float(other))
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def tensor(data) -> Tensor:
    """A constant (non-differentiable) tensor."""
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    """A trainable tensor."""
    return Tensor(data, requires_grad=True)


def _make_output(data: np.ndarray, inputs: tuple, backward_fn) -> Tensor:
    requires = _grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires)
    if requires:
        out._record = _Record(inputs, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a_shape: tuple, b_shape: tuple) -> None:
    try:
        np.broadcast_shapes(a_shape, b_shape)
    except ValueError:
        raise ShapeError(f"shapes {a_shape} and {b_shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# Elementwise operations
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.shape, b.shape)
    out = a.data + b.data

    def bwd(up):
        ga = _unbroadcast(up, a.shape) if a.requires_grad else None
        gb = _unbroadcast(up, b.shape) if b.requires_grad else None
        return ga, gb

    return _make_output(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.shape, b.shape)
    out = a.data - b.data

    def bwd(up):
        ga = _unbroadcast(up, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-up, b.shape) if b.requires_grad else None
        return ga, gb

    return _make_output(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.shape, b.shape)
    out = a.data * b.data

    def bwd(up):
        ga = _unbroadcast(up * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(up * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make_output(out, (a, b), bwd)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # Branching on sign keeps exp() away from overflow on both tails.
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bwd(up):
        return (up * s * (1.0 - s),)

    return _make_output(s, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def bwd(up):
        return (up * (a.data > 0),)

    return _make_output(out, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bwd(up):
        return (up * out,)

    return _make_output(out, (a,), bwd)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log requires strictly positive inputs")
    out = np.log(a.data)

    def bwd(up):
        return (up / a.data,)

    return _make_output(out, (a,), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = a.data * c

    def bwd(up):
        return (up * c,)

    return _make_output(out, (a,), bwd)


def shift(a: Tensor, c: float) -> Tensor:
    out = a.data + float(c)

    def bwd(up):
        return (up,)

    return _make_output(out, (a,), bwd)


_BINARY_KINDS = {"add": add, "sub": sub, "mul": mul}
_UNARY_KINDS = {"sigmoid": sigmoid, "relu": relu, "exp": exp, "log": log}


def elementwise(op_kind: str, a: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Dispatch to one of the supported elementwise operations.

    Binary kinds (add, sub, mul) require ``b`` and broadcast-compatible
    shapes; unary kinds (sigmoid, relu, exp, log) must be called
    without ``b``.
    """
    if op_kind in _BINARY_KINDS:
        if b is None:
            raise ContractError(f"{op_kind} is binary and needs two operands")
        return _BINARY_KINDS[op_kind](a, b)
    if op_kind in _UNARY_KINDS:
        if b is not None:
            raise ContractError(f"{op_kind} is unary and takes one operand")
        return _UNARY_KINDS[op_kind](a)
    raise ContractError(f"unknown elementwise kind {op_kind!r}")


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product, 2-D or batched 3-D with equal leading extents."""
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    elif a.ndim == 3 and b.ndim == 3:
        if a.shape[0] != b.shape[0]:
            raise ShapeError(f"matmul batch extents differ: {a.shape} @ {b.shape}")
        if a.shape[2] != b.shape[1]:
            raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    else:
        raise ShapeError(f"matmul supports 2-D or 3-D pairs, got {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bwd(up):
        ga = gb = None
        if a.requires_grad:
            ga = np.matmul(up, np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), up)
        return ga, gb

    return _make_output(out, (a, b), bwd)


def softmax_rows(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Row-wise softmax over the last axis, with optional boolean mask.

    Masked-out entries are exactly zero in the output; every row must
    keep at least one unmasked entry. Max-subtraction keeps the exp in
    range for any finite input.
    """
    data = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != data.shape:
            raise ShapeError(f"mask shape {mask.shape} != input shape {data.shape}")
        if not np.all(mask.any(axis=-1)):
            raise DomainError("softmax row is fully masked")
        shifted = np.where(mask, data, -np.inf)
    else:
        shifted = data
    m = shifted.max(axis=-1, keepdims=True)
    e = np.exp(shifted - m)
    s = e / e.sum(axis=-1, keepdims=True)

    def bwd(up):
        dot = (up * s).sum(axis=-1, keepdims=True)
        return (s * (up - dot),)

    return _make_output(s, (x,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError("gain and bias must match the last axis of x")
    if eps <= 0:
        raise DomainError("eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bwd(up):
        gx = ggain = gbias = None
        lead = tuple(range(up.ndim - 1))
        if gain.requires_grad:
            ggain = (up * xhat).sum(axis=lead) if lead else up * xhat
        if bias.requires_grad:
            gbias = up.sum(axis=lead) if lead else up.copy()
        if x.requires_grad:
            dxhat = up * gain.data
            gx = inv * (dxhat
                        - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, ggain, gbias

    return _make_output(out, (x, gain, bias), bwd)


def embedding_lookup(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather rows of ``table``; backward scatter-adds into the table."""
    idx = np.asarray(list(ids), dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("ids must be a flat sequence")
    vocab = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= vocab):
        raise IndexError(f"id out of range for table with {vocab} rows")
    out = table.data[idx] if idx.size else np.zeros((0, table.shape[1]))

    def bwd(up):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, up)
        return (gt,)

    return _make_output(out, (table,), bwd)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def _log_softmax(data: np.ndarray) -> np.ndarray:
    m = data.max(axis=-1, keepdims=True)
    z = data - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits: Tensor, targets: Sequence[int], pad_id: int) -> Tensor:
    """Mean negative log-likelihood over non-pad positions.

    ``logits`` is (T, V); ``targets`` has length T. Positions whose
    target equals ``pad_id`` contribute neither loss nor gradient.
    """
    if logits.ndim != 2:
        raise ShapeError("cross_entropy expects (T, V) logits")
    tgt = np.asarray(list(targets), dtype=np.intp)
    t_len, vocab = logits.shape
    if tgt.shape != (t_len,):
        raise ShapeError("targets length must match logits rows")
    if tgt.size and (tgt.min() < 0 or tgt.max() >= vocab):
        raise IndexError("target id out of vocabulary range")
    keep = tgt != pad_id
    n_keep = int(keep.sum())
    if n_keep == 0:
        raise DomainError("all targets are padding")
    logp = _log_softmax(logits.data)
    loss = -logp[np.arange(t_len), tgt][keep].sum() / n_keep

    def bwd(up):
        p = np.exp(logp)
        g = p.copy()
        g[np.arange(t_len), tgt] -= 1.0
        g[~keep] = 0.0
        return (g * (float(up) / n_keep),)

    return _make_output(np.asarray(loss), (logits,), bwd)


def picked_log_probs(logits: Tensor, ids: Sequence[int]) -> Tensor:
    """Per-position log softmax probability of the chosen ids, shape (T,)."""
    if logits.ndim != 2:
        raise ShapeError("picked_log_probs expects (T, V) logits")
    idx = np.asarray(list(ids), dtype=np.intp)
    t_len, vocab = logits.shape
    if idx.shape != (t_len,):
        raise ShapeError("ids length must match logits rows")
    if idx.size and (idx.min() < 0 or idx.max() >= vocab):
        raise IndexError("id out of vocabulary range")
    logp = _log_softmax(logits.data)
    out = logp[np.arange(t_len), idx]

    def bwd(up):
        p = np.exp(logp)
        g = -p * up[:, None]
        g[np.arange(t_len), idx] += up
        return (g,)

    return _make_output(out, (logits,), bwd)


def sum_all(a: Tensor) -> Tensor:
    """Sum of every element, as a scalar tensor."""
    out = np.asarray(a.data.sum())

    def bwd(up):
        return (np.full_like(a.data, float(up)),)

    return _make_output(out, (a,), bwd)


# ---------------------------------------------------------------------------
# Shape plumbing
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    out = a.data.reshape(shape)

    def bwd(up):
        return (up.reshape(a.shape),)

    return _make_output(out, (a,), bwd)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(ax) for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"axes {axes} is not a permutation for ndim {a.ndim}")
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(a.data, axes))

    def bwd(up):
        return (np.ascontiguousarray(np.transpose(up, inverse)),)

    return _make_output(out, (a,), bwd)


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equal-shaped tensors along a new leading axis."""
    if not tensors:
        raise ShapeError("stack needs at least one tensor")
    shape = tensors[0].shape
    if any(t.shape != shape for t in tensors):
        raise ShapeError("stack requires equal shapes")
    out = np.stack([t.data for t in tensors], axis=0)

    def bwd(up):
        return tuple(up[i] if t.requires_grad else None
                     for i, t in enumerate(tensors))

    return _make_output(out, tuple(tensors), bwd)


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate is zero."""
    if not 0.0 <= rate < 1.0:
        raise DomainError("dropout rate must lie in [0, 1)")
    if rate == 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)

    def bwd(up):
        return (up * keep,)

    return _make_output(a.data * keep, (a,), bwd)


# ---------------------------------------------------------------------------
# Reverse pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into .grad for every reachable tensor.

    The recorded operations already sit in topological order along the
    graph; replaying them in reverse guarantees each tensor's gradient
    is complete before its own backward rule runs, and each use of a
    tensor contributes exactly one additive term.
    """
    if loss.data.size != 1:
        raise ContractError("backward requires a scalar loss")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack_ = [(loss, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        if node._record is not None:
            for parent in node._record.inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack_.append((parent, False))
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad += np.ones_like(loss.data)
    for node in reversed(topo):
        record = node._record
        if record is None or node.grad is None:
            continue
        grads = record.backward_fn(node.grad)
        for parent, g in zip(record.inputs, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += g


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.zero_grad()


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    """Per-parameter max relative error between autodiff and central differences."""

    per_param: dict = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def max_rel_err(self) -> float:
        return max(self.per_param.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def __str__(self) -> str:
        lines = [f"{name}: max_rel_err={err:.3e}" for name, err in self.per_param.items()]
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"overall max_rel_err={self.max_rel_err:.3e} tol={self.tol:.1e} {verdict}")
        return "\n".join(lines)


def finite_diff_check(f: Callable[[], Tensor],
                      params: dict[str, Tensor],
                      h: float = 1e-5,
                      tol: float = 1e-4) -> GradCheckReport:
    """Compare autodiff gradients of ``f()`` against central differences.

    ``f`` must be deterministic and scalar-valued; it is re-evaluated
    with each parameter entry perturbed by +-h. Relative error uses the
    denominator max(|analytic|, |numeric|, 1e-8).
    """
    if h <= 0:
        raise DomainError("h must be positive")
    zero_grads(params.values())
    loss = f()
    backward(loss)
    analytic = {name: p.grad_array().copy() for name, p in params.items()}

    report = GradCheckReport(tol=tol)
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            worst = 0.0
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                f_plus = f().item()
                flat[i] = orig - h
                f_minus = f().item()
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * h)
                a = analytic[name].reshape(-1)[i]
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, rel)
            report.per_param[name] = worst
    return report
