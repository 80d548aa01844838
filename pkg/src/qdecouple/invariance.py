"""Operator-algebra invariance analysis.

Builds the commutator closure of a coherence operator under drift and
control generators, tests whether the resulting family commutes with the
system-environment interaction (open-loop immunity), tests the weaker
necessary conditions for an active controller to help, and enumerates the
coherence operators a collective-dephasing register preserves.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .operators import (
    Operator,
    OperatorLike,
    TimeOperator,
    commutator,
    kron_embed,
    make_primitive,
    span_membership,
    vectorize,
    _collect_keys,
    TensorLayout,
)

__all__ = [
    "OperatorDistribution",
    "InvarianceReport",
    "generate_ctilde",
    "check_open_loop_invariance",
    "check_controller_necessary",
    "find_dfs_coherences",
]

DEFAULT_DEPTH_CAP = 12
DEFAULT_TOL = 1e-9


class _KeyedSpan:
    """Orthonormal span over (coefficient family) x (matrix entries).

    The key space grows as closure generates new t^k e^(i nu t) families;
    existing basis vectors extend with zeros, which is exact because their
    coefficient on a family they do not contain is zero.
    """

    def __init__(self, tol: float):
        self.tol = tol
        self.keys: list[tuple[float, int]] = []
        self.basis = np.zeros((0, 0), dtype=complex)  # rows orthonormal
        self.scale = 0.0

    def _extend_keys(self, op: OperatorLike, dim2: int):
        new = [k for k in _collect_keys([op]) if k not in self.keys]
        if new:
            self.keys.extend(new)
            pad = np.zeros((self.basis.shape[0], len(new) * dim2), dtype=complex)
            self.basis = np.concatenate([self.basis, pad], axis=1) \
                if self.basis.size else np.zeros((0, len(self.keys) * dim2), dtype=complex)

    def add(self, op: OperatorLike, dim2: int) -> tuple[bool, float]:
        """Orthogonalize op against the span; returns (added, residual)."""
        self._extend_keys(op, dim2)
        v = vectorize(op, tuple(self.keys))
        nrm = float(np.linalg.norm(v))
        self.scale = max(self.scale, nrm)
        if nrm == 0.0:
            return False, 0.0
        r = v - self.basis.conj() @ v @ self.basis if self.basis.shape[0] else v
        if self.basis.shape[0]:
            r = r - self.basis.conj() @ r @ self.basis
        rn = float(np.linalg.norm(r))
        if rn > self.tol * max(self.scale, 1e-300):
            row = (r / rn)[None, :]
            self.basis = np.concatenate([self.basis, row], axis=0) if self.basis.size else row
            return True, rn
        return False, rn

    def residual(self, op: OperatorLike, dim2: int) -> float:
        self._extend_keys(op, dim2)
        v = vectorize(op, tuple(self.keys))
        if not self.basis.shape[0]:
            return float(np.linalg.norm(v))
        r = v - self.basis.conj() @ v @ self.basis
        return float(np.linalg.norm(r))


@dataclass
class OperatorDistribution:
    """A finite generating set with an orthonormalized vectorized basis."""

    generators: list[OperatorLike]
    rank: int
    depth_reached: int
    converged: bool
    keys: tuple[tuple[float, int], ...]
    ortho_basis: np.ndarray = field(repr=False)

    def membership(self, op: OperatorLike, tol: float = DEFAULT_TOL):
        return span_membership(op, self.generators, tol)


@dataclass(frozen=True)
class InvarianceReport:
    verdict: str  # invariant | not_invariant | necessary_failed | necessary_passed_sufficient_failed
    witness: Optional[OperatorLike]
    residuals: tuple[float, ...]


def _drift_step(T: OperatorLike, H: Operator) -> OperatorLike:
    """[T, H] + dT/dt, the combined drift/clock map of the closure."""
    bracket = commutator(T, H)
    if isinstance(T, TimeOperator):
        return bracket + T.derivative()
    return bracket


def generate_ctilde(C: OperatorLike, H: Operator, controls: Sequence[Operator],
                    depth_cap: int = DEFAULT_DEPTH_CAP,
                    tol: float = DEFAULT_TOL) -> OperatorDistribution:
    """Closure of C under repeated control brackets and the drift/clock map.

    `H` and `controls` are skew-Hermitian generators.  Candidates are added
    only when their residual against the current orthonormal basis exceeds
    `tol` (relative to the largest vector seen); a full sweep that adds
    nothing terminates the iteration with converged=True.
    """
    dim = C.dim
    dim2 = dim * dim
    span = _KeyedSpan(tol)
    gens: list[OperatorLike] = []

    def normalized(op: OperatorLike, floor: float = 0.0) -> Optional[OperatorLike]:
        # a candidate far below the scale of its ingredients is cancellation
        # noise; normalizing it up would inject spurious directions
        n = op.norm()
        if n <= max(floor, 0.0) or not np.isfinite(n):
            return None
        return (1.0 / n) * op

    def derivative_bound(op: OperatorLike) -> float:
        if isinstance(op, TimeOperator):
            return max((abs(t.frequency) + t.power for t in op.terms), default=0.0)
        return 0.0

    first = normalized(C)
    if first is None:
        raise ValueError("coherence operator is zero")
    span.add(first, dim2)
    gens.append(first)

    h_norm = H.norm()
    ctrl_norms = [Hi.norm() for Hi in controls]

    depth = 0
    converged = False
    while depth < depth_cap:
        depth += 1
        added_this_sweep = False
        for T in list(gens):
            t_norm = T.norm()
            candidates = [(commutator(T, Hi), 2.0 * t_norm * n_i)
                          for Hi, n_i in zip(controls, ctrl_norms)]
            candidates.append((_drift_step(T, H),
                               t_norm * (2.0 * h_norm + derivative_bound(T))))
            for cand, scale in candidates:
                cand = normalized(cand, floor=1e-12 * max(1.0, scale))
                if cand is None:
                    continue
                added, _ = span.add(cand, dim2)
                if added:
                    gens.append(cand)
                    added_this_sweep = True
        if not added_this_sweep:
            converged = True
            break

    return OperatorDistribution(
        generators=gens,
        rank=span.basis.shape[0],
        depth_reached=depth,
        converged=converged,
        keys=tuple(span.keys),
        ortho_basis=span.basis,
    )


def _norm_of(op: OperatorLike) -> float:
    return op.norm()


def check_open_loop_invariance(dist: OperatorDistribution, H_SE: Operator,
                               tol: float = DEFAULT_TOL) -> InvarianceReport:
    """Invariant iff every closure generator commutes with the interaction."""
    if not dist.converged:
        warnings.warn("distribution closure did not converge; verdict may be premature",
                      stacklevel=2)
    h_norm = H_SE.norm()
    residuals = []
    for T in dist.generators:
        R = commutator(T, H_SE)
        rel = _norm_of(R) / max(_norm_of(T) * h_norm, 1e-300)
        residuals.append(rel)
        if rel > tol:
            return InvarianceReport("not_invariant", T, tuple(residuals))
    return InvarianceReport("invariant", None, tuple(residuals))


def check_controller_necessary(C: OperatorLike, dist: OperatorDistribution,
                               H_SE: Operator, tol: float = DEFAULT_TOL) -> InvarianceReport:
    """Necessary conditions for decouplability by state feedback.

    Condition 1: [C, H_SE] = 0.  Condition 2: every [T, H_SE] for T in the
    closure stays inside the closure's span.  When both hold and moreover
    every [T, H_SE] vanishes, the map is already invariant in open loop.
    """
    h_norm = H_SE.norm()
    r1_op = commutator(C, H_SE)
    r1 = _norm_of(r1_op) / max(_norm_of(C) * h_norm, 1e-300)
    if r1 > tol:
        return InvarianceReport("necessary_failed", r1_op, (r1,))

    residuals = [r1]
    sufficient = True
    for T in dist.generators:
        R = commutator(T, H_SE)
        rel_norm = _norm_of(R) / max(_norm_of(T) * h_norm, 1e-300)
        if rel_norm > tol:
            sufficient = False
            member = dist.membership(R, tol)
            residuals.append(member.residual_norm / max(_norm_of(R), 1e-300))
            if not member.is_member:
                return InvarianceReport("necessary_failed", T, tuple(residuals))
        else:
            residuals.append(0.0)
    if sufficient:
        return InvarianceReport("invariant", None, tuple(residuals))
    return InvarianceReport("necessary_passed_sufficient_failed", None, tuple(residuals))


def find_dfs_coherences(n_qubits: int, env_levels: int = 3, tol: float = DEFAULT_TOL,
                        omega0: float = 1.0, omega_env: float = 1.0,
                        g: complex = 1.0) -> tuple[list[tuple[str, str]], list[Operator]]:
    """Basis pairs (i, j) whose coherence survives collective dephasing.

    Fixes the collective model: all qubits couple to one truncated mode
    through the sum of their z operators; no controls.  Each candidate
    |i><j| is closed under the drift map and tested against the interaction.
    Returns lexicographically sorted bit-string pairs and the surviving
    projector operators.
    """
    if not 1 <= n_qubits <= 4:
        raise ValueError(f"n_qubits must be within [1, 4], got {n_qubits}")
    n_sys = 2 ** n_qubits
    qubit_layout = TensorLayout(tuple([2] * n_qubits),
                                tuple(f"q{i}" for i in range(n_qubits)))

    sz_total = None
    for k in range(n_qubits):
        term = kron_embed(make_primitive("pauli_z", 2), k, qubit_layout)
        sz_total = term if sz_total is None else sz_total + term
    number = make_primitive("boson_raise", env_levels) @ make_primitive("boson_lower", env_levels)
    coupling = make_primitive("displacement", env_levels, w=g)

    # interaction: (sum_j sigma_z^(j)) (x) (g b^+ + g* b); drift: qubit splittings + mode
    H_SE = Operator(np.kron(sz_total.matrix, coupling.matrix), "hermitian", "H_SE")
    H0 = (omega0 / 2.0) * Operator(np.kron(sz_total.matrix, np.eye(env_levels)), "hermitian") \
        + omega_env * Operator(np.kron(np.eye(n_sys), number.matrix), "hermitian", "H_env")

    drift_gen = H0.times_minus_i()
    hse_gen = H_SE.times_minus_i()

    words = [format(k, f"0{n_qubits}b") for k in range(n_sys)]
    pairs: list[tuple[str, str]] = []
    ops: list[Operator] = []
    eye_env = np.eye(env_levels, dtype=complex)
    for i, wi in enumerate(words):
        for j, wj in enumerate(words):
            proj = np.zeros((n_sys, n_sys), dtype=complex)
            proj[i, j] = 1.0
            C = Operator(np.kron(proj, eye_env), "general", f"|{wi}><{wj}|")
            dist = generate_ctilde(C, drift_gen, [], tol=tol)
            report = check_open_loop_invariance(dist, hse_gen, tol)
            if report.verdict == "invariant":
                pairs.append((wi, wj))
                ops.append(C)
    order = sorted(range(len(pairs)), key=lambda k: pairs[k])
    return [pairs[k] for k in order], [ops[k] for k in order]
