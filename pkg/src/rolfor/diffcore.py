"""Dense float64 tensors, explicit per-op backward passes, and a
finite-difference gradient checker.

There is deliberately no tape: every learnable operation in the package
ships its own vector-Jacobian product, and `check_gradients` verifies each
one against central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, EvaluationError, ShapeError

FD_STEP = 1e-5
KINK_RADIUS = 1e-4


class Tensor:
    """Immutable dense array of float64 values in row-major order."""

    __slots__ = ("_a",)

    def __init__(self, values, shape=None):
        a = np.array(values, dtype=np.float64, order="C")
        if shape is not None:
            a = a.reshape(shape)
        if not np.all(np.isfinite(a)):
            raise EvaluationError("tensor holds non-finite values")
        a.setflags(write=False)
        self._a = a

    @property
    def shape(self):
        return tuple(self._a.shape)

    @property
    def data(self):
        """Flat row-major view of the values."""
        return self._a.reshape(-1)

    @property
    def array(self):
        """Read-only ndarray view."""
        return self._a

    def tolist(self):
        return self._a.tolist()

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    def __eq__(self, other):
        return isinstance(other, Tensor) and np.array_equal(self._a, other._a)

    def __hash__(self):
        return hash((self.shape, self._a.tobytes()))


def tensor(values, shape=None) -> Tensor:
    return values if isinstance(values, Tensor) and shape is None else Tensor(values, shape)


class Rng:
    """Deterministic random stream (PCG64 under a fixed seeding scheme).

    Identical seeds produce identical draw sequences across runs and
    platforms; child streams are derived by hashing (seed, key...) so that
    per-item streams do not depend on iteration order.
    """

    def __init__(self, seed, _entropy=None):
        self.seed = int(seed)
        entropy = _entropy if _entropy is not None else (self.seed,)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def child(self, *keys) -> "Rng":
        entropy = (self.seed,) + tuple(int(k) % (2**63) for k in keys)
        return Rng(self.seed, _entropy=entropy)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def state(self):
        return self._gen.bit_generator.state

    def set_state(self, state):
        self._gen.bit_generator.state = state


def seed_from_text(text: str) -> int:
    """Stable 63-bit integer key for a string (for child streams)."""
    import hashlib

    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little") % (2**63)


# ---------------------------------------------------------------------------
# Differentiable operations
# ---------------------------------------------------------------------------


class DifferentiableOp:
    """An operation with an explicit backward pass.

    forward(*inputs) returns (output, ctx); backward(inputs, ctx, cotangent)
    returns one cotangent per input.  backward must be linear in the output
    cotangent.  Subclasses used with the registry also provide
    sample_inputs(rng) so the gradient suite can draw random test points,
    and may override kink_distance to report proximity to non-smooth points.
    """

    name = "op"

    def forward(self, *inputs: Tensor):
        raise NotImplementedError

    def backward(self, inputs, ctx, cotangent: Tensor):
        raise NotImplementedError

    def kink_distance(self, *inputs: Tensor) -> float:
        return math.inf

    def sample_inputs(self, rng: Rng):
        raise NotImplementedError


#: Ops registered here are all exercised by the acceptance gradient suite.
OP_REGISTRY: list[DifferentiableOp] = []


def register_op(op: DifferentiableOp) -> DifferentiableOp:
    OP_REGISTRY.append(op)
    return op


def _require_same_shape(a: Tensor, b: Tensor, what: str):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise ShapeError(f"matmul expects matrices, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree for {a.shape} and {b.shape}")
    return Tensor(a.array @ b.array)


class MatmulOp(DifferentiableOp):
    name = "matmul"

    def forward(self, a, b):
        return matmul(a, b), None

    def backward(self, inputs, ctx, cot):
        a, b = inputs
        g = cot.array
        return Tensor(g @ b.array.T), Tensor(a.array.T @ g)

    def sample_inputs(self, rng):
        m, k, n = 4, 3, 5
        return (Tensor(rng.uniform(-1, 1, (m, k))), Tensor(rng.uniform(-1, 1, (k, n))))


ELEMENTWISE_KINDS = ("add", "mul", "tanh", "relu", "exp", "scale")


def elementwise(kind: str, *args) -> Tensor:
    """Pointwise operation; binary kinds accept equal shapes or one scalar."""
    if kind not in ELEMENTWISE_KINDS:
        raise DomainError(f"unknown elementwise kind {kind!r}")
    if kind in ("add", "mul"):
        a, b = args
        if a.shape != b.shape and a.shape != () and b.shape != ():
            raise ShapeError(f"elementwise {kind}: shapes {a.shape} and {b.shape} differ")
        out = a.array + b.array if kind == "add" else a.array * b.array
    elif kind == "scale":
        a, c = args
        out = a.array * float(c)
    else:
        (a,) = args
        if kind == "tanh":
            out = np.tanh(a.array)
        elif kind == "relu":
            out = np.maximum(a.array, 0.0)
        else:
            out = np.exp(a.array)
    if not np.all(np.isfinite(out)):
        raise EvaluationError(f"elementwise {kind} produced non-finite values")
    return Tensor(out)


class ElementwiseOp(DifferentiableOp):
    """One pointwise kind with its chain-rule backward."""

    def __init__(self, kind, constant=None):
        if kind not in ELEMENTWISE_KINDS:
            raise DomainError(f"unknown elementwise kind {kind!r}")
        self.kind = kind
        self.constant = constant
        self.name = f"elementwise.{kind}"

    def forward(self, *inputs):
        if self.kind == "scale":
            return elementwise("scale", inputs[0], self.constant), None
        out = elementwise(self.kind, *inputs)
        return out, out if self.kind in ("tanh", "exp") else None

    def backward(self, inputs, ctx, cot):
        g = cot.array
        if self.kind == "add":
            return Tensor(g), Tensor(g)
        if self.kind == "mul":
            a, b = inputs
            return Tensor(g * b.array), Tensor(g * a.array)
        if self.kind == "scale":
            return (Tensor(g * float(self.constant)),)
        if self.kind == "tanh":
            return (Tensor(g * (1.0 - ctx.array**2)),)
        if self.kind == "exp":
            return (Tensor(g * ctx.array),)
        # relu: subgradient 0 at the kink (checker excludes that point)
        return (Tensor(g * (inputs[0].array > 0.0)),)

    def kink_distance(self, *inputs):
        if self.kind == "relu":
            return float(np.min(np.abs(inputs[0].array)))
        return math.inf

    def sample_inputs(self, rng):
        if self.kind in ("add", "mul"):
            return (Tensor(rng.uniform(-1, 1, (3, 3))), Tensor(rng.uniform(-1, 1, (3, 3))))
        return (Tensor(rng.uniform(-1, 1, (3, 3))),)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradientReport:
    op_name: str
    tolerance: float
    max_rel_errors: list = field(default_factory=list)
    skipped: bool = False
    skip_reason: str = ""

    @property
    def passed(self) -> bool:
        if self.skipped:
            return True
        return all(e <= self.tolerance for e in self.max_rel_errors)

    @property
    def max_rel_error(self) -> float:
        return max(self.max_rel_errors) if self.max_rel_errors else 0.0


def check_gradients(op: DifferentiableOp, *inputs: Tensor, tolerance: float,
                    rng: Rng | None = None, cotangent: Tensor | None = None) -> GradientReport:
    """Compare an op's backward against central finite differences.

    Perturbs every input coordinate by +/-FD_STEP and contracts the output
    difference with a fixed cotangent; the analytic side is one backward
    call with the same cotangent.  Points within KINK_RADIUS of a known
    kink are reported as skipped, not failed.
    """
    dist = op.kink_distance(*inputs)
    if dist < KINK_RADIUS:
        return GradientReport(op.name, tolerance, skipped=True,
                              skip_reason=f"within {KINK_RADIUS} of a kink (distance {dist:.2e})")

    out, ctx = op.forward(*inputs)
    if not np.all(np.isfinite(out.array)):
        raise EvaluationError(f"{op.name}: forward produced non-finite output")
    if cotangent is None:
        rng = rng or Rng(0)
        cotangent = Tensor(rng.uniform(-1, 1, out.shape))
    u = cotangent.array

    analytic = op.backward(inputs, ctx, cotangent)
    report = GradientReport(op.name, tolerance)
    for idx, x in enumerate(inputs):
        g = analytic[idx].array.reshape(-1)
        fd = np.empty_like(g)
        flat = x.array.reshape(-1).copy()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + FD_STEP
            hi, _ = op.forward(*_replace(inputs, idx, Tensor(flat, x.shape)))
            flat[j] = orig - FD_STEP
            lo, _ = op.forward(*_replace(inputs, idx, Tensor(flat, x.shape)))
            flat[j] = orig
            fd[j] = float(np.vdot(u, hi.array - lo.array)) / (2.0 * FD_STEP)
        denom = np.maximum(1.0, np.maximum(np.abs(g), np.abs(fd)))
        report.max_rel_errors.append(float(np.max(np.abs(g - fd) / denom)) if g.size else 0.0)
    return report


def _replace(inputs, idx, value):
    out = list(inputs)
    out[idx] = value
    return tuple(out)


register_op(MatmulOp())
for _kind in ("add", "mul", "tanh", "relu", "exp"):
    register_op(ElementwiseOp(_kind))
register_op(ElementwiseOp("scale", constant=2.5))
