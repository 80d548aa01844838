"""Dense complex operators on tensor-product Hilbert spaces.

Everything in this package is built from the primitives here: Pauli and
truncated ladder matrices, Kronecker embedding into a multi-slot layout,
commutators, matrix exponentials, and numerically robust span-membership
tests.  Operators are immutable; all functions are pure.

Conventions
-----------
* Physical operators (Hamiltonians, coherence operators) are stored in
  Hermitian form.  Dynamical generators are obtained by multiplying by -1j
  (hbar = 1); the model builders do this, nothing here does it implicitly.
* Time-dependent operators are finite sums  sum_k  a_k * t^p_k * e^(i nu_k t) * M_k.
  This family is closed under differentiation and products, so identities
  can be checked by exact coefficient comparison instead of sampling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np
import scipy.linalg

__all__ = [
    "DimensionMismatchError",
    "NumericalError",
    "TensorLayout",
    "Operator",
    "TimeTerm",
    "TimeOperator",
    "MembershipResult",
    "make_primitive",
    "kron_embed",
    "commutator",
    "matrix_exponential",
    "span_membership",
    "bilinear_form",
    "evaluate_time_operator",
    "time_derivative",
    "opnorm",
]

HERMITICITY_ATOL = 1e-12
UNITARITY_TOL = 1e-10
FREQ_DECIMALS = 12  # rounding used to key {t^k e^(i nu t)} coefficient families


class DimensionMismatchError(ValueError):
    """Operands live on different Hilbert spaces."""


class NumericalError(RuntimeError):
    """A numerical routine failed to meet its accuracy contract."""


def opnorm(matrix: np.ndarray) -> float:
    """Frobenius norm, the working norm for all residual bookkeeping."""
    return float(np.linalg.norm(matrix))


def _detect_hermiticity(matrix: np.ndarray) -> str:
    dev_h = np.abs(matrix - matrix.conj().T).max(initial=0.0)
    if dev_h <= HERMITICITY_ATOL:
        return "hermitian"
    dev_s = np.abs(matrix + matrix.conj().T).max(initial=0.0)
    if dev_s <= HERMITICITY_ATOL:
        return "skew_hermitian"
    return "general"


@dataclass(frozen=True)
class TensorLayout:
    """Ordered factorization of the total Hilbert space, e.g. [2, 2, 3]."""

    dims: tuple[int, ...]
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d < 1 for d in dims):
            raise ValueError(f"subsystem dims must be positive, got {dims}")
        labels = tuple(self.labels) or tuple(f"s{i}" for i in range(len(dims)))
        if len(labels) != len(dims):
            raise ValueError("one label per subsystem required")
        if len(set(labels)) != len(labels):
            raise ValueError(f"labels must be unique, got {labels}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "labels", labels)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims))


@dataclass(frozen=True)
class Operator:
    """An immutable dense complex matrix with a verified hermiticity flag."""

    matrix: np.ndarray
    hermiticity: str = "general"
    label: str = ""

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"operator matrix must be square, got {m.shape}")
        if self.hermiticity not in ("hermitian", "skew_hermitian", "general"):
            raise ValueError(f"unknown hermiticity flag {self.hermiticity!r}")
        if self.hermiticity == "hermitian":
            dev = np.abs(m - m.conj().T).max(initial=0.0)
            if dev > HERMITICITY_ATOL:
                raise ValueError(f"matrix is not Hermitian (max dev {dev:.3e})")
        elif self.hermiticity == "skew_hermitian":
            dev = np.abs(m + m.conj().T).max(initial=0.0)
            if dev > HERMITICITY_ATOL:
                raise ValueError(f"matrix is not skew-Hermitian (max dev {dev:.3e})")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def detect(cls, matrix: np.ndarray, label: str = "") -> "Operator":
        """Construct with the hermiticity flag inferred from the entries."""
        return cls(matrix, _detect_hermiticity(np.asarray(matrix, dtype=complex)), label)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def norm(self) -> float:
        return opnorm(self.matrix)

    def dagger(self) -> "Operator":
        return Operator(self.matrix.conj().T, self.hermiticity, self.label + "^+")

    def times_minus_i(self) -> "Operator":
        """Hermitian -> skew-Hermitian generator (and vice versa)."""
        flag = {"hermitian": "skew_hermitian", "skew_hermitian": "hermitian"}.get(
            self.hermiticity, "general")
        return Operator(-1j * self.matrix, flag, self.label)

    def __add__(self, other: "Operator") -> "Operator":
        _require_same_dim(self, other)
        flag = self.hermiticity if self.hermiticity == other.hermiticity else "general"
        return Operator(self.matrix + other.matrix, flag)

    def __sub__(self, other: "Operator") -> "Operator":
        _require_same_dim(self, other)
        flag = self.hermiticity if self.hermiticity == other.hermiticity else "general"
        return Operator(self.matrix - other.matrix, flag)

    def __neg__(self) -> "Operator":
        return Operator(-self.matrix, self.hermiticity, self.label)

    def __rmul__(self, scalar: complex) -> "Operator":
        scalar = complex(scalar)
        if scalar.imag == 0.0:
            flag = self.hermiticity
        elif scalar.real == 0.0:
            flag = {"hermitian": "skew_hermitian",
                    "skew_hermitian": "hermitian"}.get(self.hermiticity, "general")
        else:
            flag = "general"
        return Operator(scalar * self.matrix, flag, self.label)

    def __matmul__(self, other: "Operator") -> "Operator":
        _require_same_dim(self, other)
        return Operator(self.matrix @ other.matrix)


def _require_same_dim(a, b):
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dimension mismatch: {a.dim} vs {b.dim}")


@dataclass(frozen=True)
class TimeTerm:
    """One term  amplitude * t^power * exp(1j*frequency*t) * matrix."""

    matrix: np.ndarray
    amplitude: complex = 1.0 + 0j
    frequency: float = 0.0
    power: int = 0

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("term matrix must be square")
        if self.power < 0:
            raise ValueError("power must be a non-negative integer")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "amplitude", complex(self.amplitude))
        object.__setattr__(self, "frequency", float(self.frequency))
        object.__setattr__(self, "power", int(self.power))

    @property
    def key(self) -> tuple[float, int]:
        return (round(self.frequency, FREQ_DECIMALS), self.power)


@dataclass(frozen=True)
class TimeOperator:
    """Finite sum of TimeTerms; closed under d/dt, products and commutators."""

    terms: tuple[TimeTerm, ...]
    label: str = ""

    def __post_init__(self):
        terms = tuple(self.terms)
        if terms:
            dims = {t.matrix.shape[0] for t in terms}
            if len(dims) != 1:
                raise DimensionMismatchError(f"term matrices disagree on dim: {dims}")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def constant(cls, op: Operator, label: str = "") -> "TimeOperator":
        return cls((TimeTerm(op.matrix),), label or op.label)

    @property
    def dim(self) -> int:
        if not self.terms:
            raise ValueError("empty TimeOperator has no dimension")
        return self.terms[0].matrix.shape[0]

    def merged(self) -> dict[tuple[float, int], np.ndarray]:
        """Canonical form: coefficient-family key -> accumulated matrix."""
        out: dict[tuple[float, int], np.ndarray] = {}
        for t in self.terms:
            acc = out.get(t.key)
            out[t.key] = t.amplitude * t.matrix if acc is None else acc + t.amplitude * t.matrix
        return {k: m for k, m in out.items() if np.abs(m).max(initial=0.0) > 0.0}

    def norm(self) -> float:
        merged = self.merged()
        return float(np.sqrt(sum(opnorm(m) ** 2 for m in merged.values()))) if merged else 0.0

    def evaluate(self, t: float) -> Operator:
        if not self.terms:
            raise ValueError("cannot evaluate an empty TimeOperator")
        total = np.zeros((self.dim, self.dim), dtype=complex)
        for term in self.terms:
            total += term.amplitude * t ** term.power * np.exp(1j * term.frequency * t) * term.matrix
        return Operator.detect(total, self.label)

    def derivative(self) -> "TimeOperator":
        new = []
        for t in self.terms:
            if t.frequency != 0.0:
                new.append(TimeTerm(t.matrix, t.amplitude * 1j * t.frequency, t.frequency, t.power))
            if t.power > 0:
                new.append(TimeTerm(t.matrix, t.amplitude * t.power, t.frequency, t.power - 1))
        return TimeOperator(tuple(new), f"d/dt {self.label}".strip())

    def __add__(self, other: "TimeOperator") -> "TimeOperator":
        return TimeOperator(self.terms + other.terms)

    def __rmul__(self, scalar: complex) -> "TimeOperator":
        return TimeOperator(tuple(
            TimeTerm(t.matrix, scalar * t.amplitude, t.frequency, t.power) for t in self.terms))

    def is_zero(self, tol: float = 0.0) -> bool:
        merged = self.merged()
        scale = max((opnorm(t.matrix) * abs(t.amplitude) for t in self.terms), default=1.0)
        return all(opnorm(m) <= tol * max(1.0, scale) for m in merged.values())


OperatorLike = Union[Operator, TimeOperator]


@dataclass(frozen=True)
class MembershipResult:
    """Outcome of a least-squares span test."""

    is_member: bool
    coefficients: np.ndarray
    residual_norm: float
    rank_used: int


# ---------------------------------------------------------------------------
# primitives and embedding
# ---------------------------------------------------------------------------

_PAULI = {
    "pauli_x": np.array([[0, 1], [1, 0]], dtype=complex),
    "pauli_y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "pauli_z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def make_primitive(kind: str, n_levels: int, w: complex = 1.0 + 0j) -> Operator:
    """Standard building blocks.

    kind: pauli_x | pauli_y | pauli_z | identity | boson_lower | boson_raise
          | displacement  (displacement takes the coupling w: w b^+ + w* b)
    n_levels: Hilbert-space dimension of the slot (2 for Pauli kinds).
    """
    if kind in _PAULI:
        if n_levels != 2:
            raise DimensionMismatchError(f"{kind} requires n_levels=2, got {n_levels}")
        return Operator(_PAULI[kind], "hermitian", kind)
    if kind == "identity":
        if n_levels < 1:
            raise DimensionMismatchError("identity requires n_levels >= 1")
        return Operator(np.eye(n_levels, dtype=complex), "hermitian", "I")
    if kind in ("boson_lower", "boson_raise", "displacement"):
        if n_levels < 2:
            raise DimensionMismatchError(f"{kind} requires n_levels >= 2, got {n_levels}")
        lower = np.diag(np.sqrt(np.arange(1, n_levels, dtype=float)), 1).astype(complex)
        if kind == "boson_lower":
            return Operator(lower, "general", "b")
        if kind == "boson_raise":
            return Operator(lower.conj().T, "general", "b^+")
        w = complex(w)
        return Operator(w * lower.conj().T + np.conj(w) * lower, "hermitian", "D")
    raise ValueError(f"unknown primitive kind {kind!r}")


def kron_embed(op: Operator, slot: int, layout: TensorLayout) -> Operator:
    """I (x) ... (x) op (x) ... (x) I with `op` in position `slot`."""
    if not 0 <= slot < len(layout.dims):
        raise DimensionMismatchError(
            f"slot {slot} out of range for layout of {len(layout.dims)} subsystems")
    if op.dim != layout.dims[slot]:
        raise DimensionMismatchError(
            f"operator dim {op.dim} does not match subsystem dim {layout.dims[slot]}")
    before = int(np.prod(layout.dims[:slot], initial=1))
    after = int(np.prod(layout.dims[slot + 1:], initial=1))
    m = np.kron(np.kron(np.eye(before, dtype=complex), op.matrix), np.eye(after, dtype=complex))
    return Operator(m, op.hermiticity, f"{op.label}@{layout.labels[slot]}")


# ---------------------------------------------------------------------------
# algebra
# ---------------------------------------------------------------------------

def _commutator_flag(a: str, b: str) -> str:
    if {a, b} <= {"hermitian"} or {a, b} <= {"skew_hermitian"}:
        return "skew_hermitian"
    if {a, b} == {"hermitian", "skew_hermitian"}:
        return "hermitian"
    return "general"


def commutator(A: OperatorLike, B: OperatorLike) -> OperatorLike:
    """[A, B] = AB - BA.  TimeOperator operands stay inside the closed family."""
    if isinstance(A, Operator) and isinstance(B, Operator):
        _require_same_dim(A, B)
        m = A.matrix @ B.matrix - B.matrix @ A.matrix
        return Operator(m, _commutator_flag(A.hermiticity, B.hermiticity))
    ta = A if isinstance(A, TimeOperator) else TimeOperator.constant(A)
    tb = B if isinstance(B, TimeOperator) else TimeOperator.constant(B)
    if ta.terms and tb.terms and ta.dim != tb.dim:
        raise DimensionMismatchError(f"dimension mismatch: {ta.dim} vs {tb.dim}")
    terms = []
    for x in ta.terms:
        for y in tb.terms:
            terms.append(TimeTerm(x.matrix @ y.matrix - y.matrix @ x.matrix,
                                  x.amplitude * y.amplitude,
                                  x.frequency + y.frequency,
                                  x.power + y.power))
    return TimeOperator(tuple(terms))


def matrix_exponential(A: Operator) -> Operator:
    """exp(A); checked unitary to 1e-10 when A is skew-Hermitian."""
    m = scipy.linalg.expm(A.matrix)
    if not np.all(np.isfinite(m)):
        raise NumericalError(
            f"matrix exponential did not converge (input norm {A.norm():.3e})")
    if A.hermiticity == "skew_hermitian":
        dev = opnorm(m.conj().T @ m - np.eye(A.dim))
        if dev > UNITARITY_TOL:
            raise NumericalError(
                f"exponential of skew-Hermitian generator lost unitarity: |U+U - I| = {dev:.3e}")
        return Operator(m, "general", f"exp({A.label})")
    return Operator(m, "general", f"exp({A.label})")


# ---------------------------------------------------------------------------
# span membership
# ---------------------------------------------------------------------------

def _collect_keys(ops: Iterable[OperatorLike]) -> tuple[tuple[float, int], ...]:
    keys: set[tuple[float, int]] = set()
    for op in ops:
        if isinstance(op, TimeOperator):
            keys.update(op.merged().keys())
        else:
            keys.add((0.0, 0))
    return tuple(sorted(keys))


def vectorize(op: OperatorLike | np.ndarray,
              keys: Sequence[tuple[float, int]] = ((0.0, 0),)) -> np.ndarray:
    """Flatten onto the coefficient-family key space so spans can be compared."""
    if isinstance(op, np.ndarray):
        return op.ravel().astype(complex)
    if isinstance(op, Operator):
        op = TimeOperator.constant(op)
    merged = op.merged()
    missing = set(merged) - set(keys)
    if missing:
        raise ValueError(f"operator has coefficient families {missing} outside the key space")
    dim2 = op.dim ** 2 if op.terms else 0
    if dim2 == 0:
        dim2 = next(iter(merged.values())).size if merged else 1
    chunks = [merged.get(k, None) for k in keys]
    flat = [c.ravel() if c is not None else np.zeros(dim2, dtype=complex) for c in chunks]
    return np.concatenate(flat) if flat else np.zeros(0, dtype=complex)


def span_membership(target, basis: Sequence, tol: float = 1e-9) -> MembershipResult:
    """Least-squares projection of `target` onto span(basis).

    Accepts Operators, TimeOperators or plain vectors (uniformly within one
    call).  The basis may be rank-deficient; the relative singular-value
    cutoff is `tol` and minimum-norm coefficients are returned.
    """
    items = list(basis)
    keys = _collect_keys([target] + items) if not isinstance(target, np.ndarray) else ((0.0, 0),)
    t = vectorize(target, keys)
    tnorm = float(np.linalg.norm(t))
    threshold = tol * max(1.0, tnorm)
    if not items:
        return MembershipResult(tnorm <= threshold, np.zeros(0, dtype=complex), tnorm, 0)
    B = np.stack([vectorize(op, keys) for op in items], axis=1)
    u, s, vh = np.linalg.svd(B, full_matrices=False)
    rank = int((s > tol * s[0]).sum()) if s.size and s[0] > 0 else 0
    if rank == 0:
        return MembershipResult(tnorm <= threshold, np.zeros(len(items), dtype=complex),
                                tnorm, 0)
    coeffs = vh[:rank].conj().T @ ((u[:, :rank].conj().T @ t) / s[:rank])
    residual = float(np.linalg.norm(B @ coeffs - t))
    return MembershipResult(residual <= threshold, coeffs, residual, rank)


# ---------------------------------------------------------------------------
# scalar map
# ---------------------------------------------------------------------------

def bilinear_form(xi: np.ndarray, C: Operator) -> complex:
    """<xi|C|xi> with the physics convention (conjugate-linear first slot)."""
    xi = np.asarray(xi, dtype=complex).ravel()
    if xi.size != C.dim:
        raise DimensionMismatchError(f"state dim {xi.size} vs operator dim {C.dim}")
    nrm = np.linalg.norm(xi)
    if not (1 - 1e-6 <= nrm <= 1 + 1e-6):
        raise ValueError(f"state must be normalized to 1e-6, got |xi| = {nrm!r}")
    return complex(np.vdot(xi, C.matrix @ xi))


def evaluate_time_operator(T: TimeOperator, t: float) -> Operator:
    return T.evaluate(t)


def time_derivative(T: TimeOperator) -> TimeOperator:
    return T.derivative()
