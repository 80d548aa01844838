"""Tangent-space formalism: linear vector fields and decouplability checks.

A linear vector field is K(xi) = A xi for a (physically skew-Hermitian)
generator A.  Membership of one field in the span of others is decided at
the generator level, which is sufficient for every state at once; the
state-dependent singular distributions of the feedback synthesis are
handled separately in :mod:`qdecouple.synthesis`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .operators import (
    DimensionMismatchError,
    Operator,
    OperatorLike,
    TimeOperator,
    commutator,
    span_membership,
)

__all__ = [
    "LinearVectorField",
    "KernelMembership",
    "DecouplabilityReport",
    "vf_bracket",
    "kernel_dy_member",
    "check_open_loop_geometric",
    "check_controlled_decouplable",
    "closure_under_brackets",
]

DEFAULT_TOL = 1e-9


@dataclass(frozen=True)
class LinearVectorField:
    """K(xi) = generator @ xi.  Physical fields carry skew-Hermitian generators."""

    generator: Operator
    label: str = ""

    @property
    def dim(self) -> int:
        return self.generator.dim

    def __call__(self, xi: np.ndarray) -> np.ndarray:
        return self.generator.matrix @ np.asarray(xi, dtype=complex)


@dataclass(frozen=True)
class KernelMembership:
    member: bool
    witness: OperatorLike  # [C, A]; zero exactly when the field is in ker(dy)
    residual: float


@dataclass(frozen=True)
class DecouplabilityReport:
    k_i_in_ker_dy: bool
    open_loop_ok: bool
    controlled_ok: bool
    failing_bracket: Optional[tuple[str, str, float]]
    delta_rank: int


def vf_bracket(KA: LinearVectorField, KB: LinearVectorField) -> LinearVectorField:
    """Lie bracket of linear fields: [A xi, B xi] has generator BA - AB.

    Sign convention: vf_bracket(KA, KB).generator == -commutator(A, B).
    """
    if KA.dim != KB.dim:
        raise DimensionMismatchError(f"field dims differ: {KA.dim} vs {KB.dim}")
    gen = -1.0 * commutator(KA.generator, KB.generator)
    return LinearVectorField(gen, f"[{KA.label},{KB.label}]")


def kernel_dy_member(K: LinearVectorField, C: OperatorLike,
                     tol: float = 1e-10) -> KernelMembership:
    """Is the field inside ker(dy) for y = <xi|C|xi>, for every state?

    For a skew generator A the Lie derivative reduces to <xi|[C, A]|xi>,
    which vanishes for all xi exactly when [C, A] = 0 (polarization).  The
    witness returned is [C, A] itself.  Time-dependent C is handled exactly
    inside the closed coefficient family.
    """
    if K.generator.hermiticity != "skew_hermitian":
        raise ValueError("kernel_dy_member requires a skew-Hermitian generator "
                         "(the reduction to [C, A] uses A^+ = -A)")
    witness = commutator(C, K.generator)
    wnorm = witness.norm()
    scale = max(_norm(C) * K.generator.norm(), 1e-300)
    return KernelMembership(wnorm <= tol * scale, witness, wnorm / scale)


def _norm(op: OperatorLike) -> float:
    return op.norm()


def _generator_span_report(delta_gens: Sequence[LinearVectorField]):
    return [f.generator for f in delta_gens]


def _span_rank(ops: Sequence[Operator], tol: float) -> int:
    if not ops:
        return 0
    B = np.stack([op.matrix.ravel() for op in ops], axis=1)
    s = np.linalg.svd(B, compute_uv=False)
    return int((s > tol * s[0]).sum()) if s.size and s[0] > 0 else 0


def check_open_loop_geometric(delta_gens: Sequence[LinearVectorField],
                              fields: Sequence[LinearVectorField],
                              C: OperatorLike,
                              K_I: LinearVectorField,
                              tol: float = DEFAULT_TOL) -> DecouplabilityReport:
    """Open-loop immunity via an invariant candidate distribution.

    Checks (a) every candidate generator lies in ker(dy), (b) the
    interaction field belongs to the candidate span, (c) every bracket of a
    candidate with a drift/control field stays in the candidate span.
    """
    span_ops = _generator_span_report(delta_gens)
    rank = _span_rank(span_ops, tol)

    ker_ok = kernel_dy_member(K_I, C, max(tol, 1e-10)).member
    failing = None

    for d in delta_gens:
        if not kernel_dy_member(d, C, max(tol, 1e-10)).member:
            failing = (d.label or "delta", "ker(dy)", float("nan"))
            break

    if failing is None:
        m = span_membership(K_I.generator, span_ops, tol)
        if not m.is_member:
            failing = (K_I.label or "K_I", "span(Delta)", m.residual_norm)

    if failing is None:
        for d in delta_gens:
            for f in fields:
                br = vf_bracket(d, f)
                m = span_membership(br.generator, span_ops, tol)
                if not m.is_member:
                    failing = (d.label or "delta", f.label or "field", m.residual_norm)
                    break
            if failing is not None:
                break

    ok = failing is None and ker_ok
    return DecouplabilityReport(
        k_i_in_ker_dy=ker_ok,
        open_loop_ok=ok,
        controlled_ok=False,
        failing_bracket=failing,
        delta_rank=rank,
    )


def check_controlled_decouplable(delta_gens: Sequence[LinearVectorField],
                                 G: Sequence[LinearVectorField],
                                 K0: Optional[LinearVectorField],
                                 K_I: LinearVectorField,
                                 C: OperatorLike,
                                 tol: float = DEFAULT_TOL) -> DecouplabilityReport:
    """Controlled decouplability: brackets may land in span(Delta + G).

    Same walk as the open-loop check, but bracket membership is tested
    against the span of the candidate generators together with the control
    generators.  Passing K0=None restricts the bracket test to the control
    fields (the drift bracket is then the caller's responsibility).
    """
    span_ops = _generator_span_report(delta_gens) + [f.generator for f in G]
    ker_ok = kernel_dy_member(K_I, C, max(tol, 1e-10)).member
    failing = None

    for d in delta_gens:
        if not kernel_dy_member(d, C, max(tol, 1e-10)).member:
            failing = (d.label or "delta", "ker(dy)", float("nan"))
            break

    if failing is None:
        m = span_membership(K_I.generator, _generator_span_report(delta_gens), tol)
        if not m.is_member:
            failing = (K_I.label or "K_I", "span(Delta)", m.residual_norm)

    fields = ([K0] if K0 is not None else []) + list(G)
    if failing is None:
        for d in delta_gens:
            for f in fields:
                br = vf_bracket(d, f)
                m = span_membership(br.generator, span_ops, tol)
                if not m.is_member:
                    failing = (d.label or "delta", f.label or "field", m.residual_norm)
                    break
            if failing is not None:
                break

    ok = failing is None and ker_ok
    return DecouplabilityReport(
        k_i_in_ker_dy=ker_ok,
        open_loop_ok=False,
        controlled_ok=ok,
        failing_bracket=failing,
        delta_rank=_span_rank(_generator_span_report(delta_gens), tol),
    )


def closure_under_brackets(seeds: Sequence[LinearVectorField],
                           fields: Sequence[LinearVectorField],
                           tol: float = DEFAULT_TOL,
                           depth_cap: int = 12) -> list[LinearVectorField]:
    """Brute-force bracket closure of seed fields under drift/control fields.

    The canonical invariant-distribution candidate when none is supplied:
    grow span{seeds} by repeated vf_bracket with the given fields until the
    rank stagnates.  Generators are normalized as they are added.
    """
    basis: list[LinearVectorField] = []
    span_ops: list[Operator] = []

    def try_add(fieldv: LinearVectorField) -> bool:
        gen = fieldv.generator
        n = gen.norm()
        if n == 0.0:
            return False
        gen = (1.0 / n) * gen
        if span_ops:
            m = span_membership(gen, span_ops, tol)
            if m.is_member:
                return False
        basis.append(LinearVectorField(gen, fieldv.label))
        span_ops.append(gen)
        return True

    for s in seeds:
        try_add(s)
    for _ in range(depth_cap):
        added = False
        for d in list(basis):
            for f in fields:
                if try_add(vf_bracket(d, f)):
                    added = True
        if not added:
            break
    return basis
