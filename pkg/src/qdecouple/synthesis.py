"""State-feedback synthesis for the restructured 24-control system.

The invariant family is spanned by five two-qubit operators that commute
with the coherence operator, dressed by the environment powers {I, D, D^2}
(15 generators), completed by three operators that deliberately do not
commute with it.  At a given state the feedback pair (alpha, beta) is
assembled from minimum-norm least-squares solves and a null-space
completion, all over the reals (stacked real/imaginary parts), since the
control amplitudes are physical field strengths.

Two synthesizers are provided:

* :func:`synthesize_alpha_beta` - the per-state least-squares/null-space
  algorithm.  Faithful to its construction; see the README for measured
  limitations of its disturbance rejection.
* :func:`synthesize_protective` - a feedback that pointwise cancels the
  controls' net action on the protected coherence block.  This one renders
  the monitored coherence exactly immune to the interaction strength and is
  used by the simulator's "protective" mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .models import SystemModel
from .operators import Operator, opnorm, span_membership

__all__ = [
    "DegenerateStateError",
    "InvariantBasisError",
    "InvariantBasis",
    "ControlLawSample",
    "SynthesisVerification",
    "build_invariant_basis",
    "synthesize_alpha_beta",
    "verify_synthesis",
    "synthesize_protective",
    "protected_block_indices",
    "FeedbackSynthesizer",
    "ProtectiveSynthesizer",
]

DEFAULT_TOL = 1e-9


class DegenerateStateError(RuntimeError):
    """No complement direction is reachable at this state (q = 0)."""

    def __init__(self, message: str, K: Optional[int] = None):
        super().__init__(message)
        self.K = K


class InvariantBasisError(RuntimeError):
    """The invariant-basis commutation table failed to validate."""


def _pauli_products():
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, -1j], [1j, 0]], dtype=complex)
    sz = np.array([[1, 0], [0, -1]], dtype=complex)
    i2 = np.eye(2, dtype=complex)
    return sx, sy, sz, i2


def system_delta_operators() -> list[tuple[np.ndarray, str]]:
    """The five two-qubit operators commuting with |01><10| (and |10><01|)."""
    sx, sy, sz, i2 = _pauli_products()
    return [
        (np.kron(sz, i2) + np.kron(i2, sz), "sz1+sz2"),
        (np.kron(sz, sz), "sz1 sz2"),
        (np.eye(4, dtype=complex), "I"),
        (np.kron(sx, sx) - np.kron(sy, sy), "sx sx - sy sy"),
        (np.kron(sx, sy) + np.kron(sy, sx), "sx sy + sy sx"),
    ]


def complement_operators() -> list[tuple[np.ndarray, str]]:
    """Three two-qubit operators transverse to ker(dy)."""
    sx, sy, sz, i2 = _pauli_products()
    return [
        (np.kron(sz, i2) - np.kron(i2, sz), "sz1-sz2"),
        (np.kron(sx, sx) + np.kron(sy, sy), "sx sx + sy sy"),
        (np.kron(sx, sy) - np.kron(sy, sx), "sx sy - sy sx"),
    ]


@dataclass(eq=False)
class InvariantBasis:
    """Validated generators of the invariant family and its complement."""

    delta_ops: tuple[Operator, ...]        # 15: system deltas x {I, D, D^2}
    complement_ops: tuple[Operator, ...]   # 3 bare (or 9 when env-lifted)
    system_deltas: tuple[Operator, ...]    # the 5 system-space operators
    coherence_check: np.ndarray            # |[delta_i, C]| residuals
    bracket_residuals: dict[str, float]    # worst residual per table entry kind
    lifted_complement: bool = False

    def delta_generators(self) -> np.ndarray:
        """Stacked skew generators (-1j * delta_ops) for field evaluation."""
        return np.stack([(-1j) * op.matrix for op in self.delta_ops])

    def complement_generators(self) -> np.ndarray:
        return np.stack([(-1j) * op.matrix for op in self.complement_ops])


@dataclass(eq=False)
class ControlLawSample:
    """Feedback pair synthesized at one state, with solve diagnostics."""

    state: np.ndarray
    alpha: np.ndarray                 # real, one entry per control channel
    beta: np.ndarray                  # real, channels x channels
    ranks: tuple[int, int, int]       # (K, q, r)
    residuals: tuple[float, ...]      # step-1 residual per complement column, then alpha
    beta_rank: int
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)


@dataclass(eq=False)
class SynthesisVerification:
    """Controlled-invariance residuals of a frozen feedback sample."""

    bracket_residuals: np.ndarray     # (n_delta, 1 + n_channels) relative residuals
    lie_y_drift: complex              # <xi|[C, closed-loop drift]|xi>
    lie_y_controls: np.ndarray        # same for each closed-loop control field
    worst_bracket: float
    passed: bool


def _check_restructured(model: SystemModel):
    if model.n_controls != 24 or model.layout.dims[:2] != (2, 2):
        raise ValueError("the feedback synthesis expects the restructured "
                         f"24-control model, got {model.name!r} with "
                         f"{model.n_controls} controls")


def build_invariant_basis(model: SystemModel, lift_complement: bool = False,
                          tol: float = DEFAULT_TOL) -> InvariantBasis:
    """Assemble and validate the invariant family for a restructured model.

    Validates, at the operator level, that every delta commutes with the
    coherence operator and that the commutation table
    [delta, delta] in Delta, [delta, g] in Delta+G, [delta, d] in Delta,
    [d, g] in G holds within `tol`; raises with the offending bracket
    otherwise.  `lift_complement` tensors the complement with {I, D, D^2}
    as well (the documented fallback variation).
    """
    _check_restructured(model)
    n_env = model.params.env_levels
    eye_env = np.eye(n_env, dtype=complex)
    from .operators import make_primitive  # local import keeps module load light

    d_w = make_primitive("displacement", n_env, w=model.params.w).matrix
    env_powers = [eye_env, d_w, d_w @ d_w]

    deltas4 = system_delta_operators()
    system_deltas = tuple(Operator(m, "hermitian", lab) for m, lab in deltas4)
    delta_ops = tuple(
        Operator(np.kron(m, env), "hermitian", f"{lab} D^{i}")
        for m, lab in deltas4 for i, env in enumerate(env_powers))

    comp4 = complement_operators()
    if lift_complement:
        complement_ops = tuple(
            Operator(np.kron(m, env), "hermitian", f"{lab} D^{i}")
            for m, lab in comp4 for i, env in enumerate(env_powers))
    else:
        complement_ops = tuple(
            Operator(np.kron(m, eye_env), "hermitian", lab) for m, lab in comp4)

    C = model.coherence_op
    c_scale = max(C.norm(), 1.0)
    coherence_check = np.array(
        [opnorm(delta.matrix @ C.matrix - C.matrix @ delta.matrix) for delta in delta_ops])
    worst = coherence_check.max(initial=0.0)
    if worst > 1e-12 * c_scale * max(opnorm(d.matrix) for d in delta_ops):
        idx = int(np.argmax(coherence_check))
        raise InvariantBasisError(
            f"delta operator {delta_ops[idx].label!r} does not commute with the "
            f"coherence operator (residual {worst:.3e})")

    ctrl_ops = [Operator(op.matrix, "skew_hermitian", op.label) for op in model.controls]
    delta_list = list(delta_ops)
    table: dict[str, float] = {"delta_delta": 0.0, "delta_g": 0.0,
                               "delta_d": 0.0, "d_g": 0.0}

    def _bracket(a: Operator, b: Operator) -> Operator:
        return Operator(a.matrix @ b.matrix - b.matrix @ a.matrix)

    def _must_lie_in(kind: str, br: Operator, basis_ops, label: str):
        if br.norm() <= 1e-13 * max(1.0, *(opnorm(b.matrix) for b in basis_ops)):
            return
        m = span_membership(br, basis_ops, tol)
        rel = m.residual_norm / max(br.norm(), 1e-300)
        table[kind] = max(table[kind], rel)
        if not m.is_member:
            raise InvariantBasisError(
                f"commutation table violated: {label} leaves its span "
                f"(relative residual {rel:.3e})")

    for i, da in enumerate(delta_list):
        for db in delta_list[i + 1:]:
            _must_lie_in("delta_delta", _bracket(da, db), delta_list,
                         f"[{da.label}, {db.label}]")
        for g in ctrl_ops:
            _must_lie_in("delta_g", _bracket(da, g), delta_list + ctrl_ops,
                         f"[{da.label}, {g.label}]")
        for d in complement_ops:
            _must_lie_in("delta_d", _bracket(da, d), delta_list,
                         f"[{da.label}, {d.label}]")
    for d in complement_ops:
        for g in ctrl_ops:
            _must_lie_in("d_g", _bracket(d, g), list(ctrl_ops),
                         f"[{d.label}, {g.label}]")

    return InvariantBasis(
        delta_ops=delta_ops,
        complement_ops=complement_ops,
        system_deltas=system_deltas,
        coherence_check=coherence_check,
        bracket_residuals=table,
        lifted_complement=lift_complement,
    )


# ---------------------------------------------------------------------------
# the per-state algorithm
# ---------------------------------------------------------------------------

class FeedbackSynthesizer:
    """Reusable workspace for per-state feedback synthesis.

    Precomputes the stacked generator tensors once; :meth:`sample` then
    costs a handful of small dense solves.  Identical states and tolerance
    give bit-identical output (no randomness, fixed tie-breaking).
    """

    def __init__(self, model: SystemModel, basis: InvariantBasis,
                 tol: float = DEFAULT_TOL):
        _check_restructured(model)
        self.model = model
        self.basis = basis
        self.tol = float(tol)
        self.delta_gen = basis.delta_generators()
        self.comp_gen = basis.complement_generators()
        self.ctrl_gen = np.stack([op.matrix for op in model.controls])
        self.drift = model.drift.matrix
        self.n_ctrl = len(model.controls)
        self.n_delta = self.delta_gen.shape[0]
        self.n_comp = self.comp_gen.shape[0]
        self.all_gen = np.concatenate([self.delta_gen, self.comp_gen, self.ctrl_gen])

    def control_fields_at(self, xi: np.ndarray) -> np.ndarray:
        return self.ctrl_gen @ xi

    def sample(self, xi: np.ndarray) -> ControlLawSample:
        xi = np.asarray(xi, dtype=complex).ravel()
        tol = self.tol
        nc = self.n_ctrl
        nd, ncp = self.n_delta, self.n_comp

        vecs = self.all_gen @ xi
        X = np.concatenate([vecs.real, vecs.imag], axis=1)       # rows are fields
        k0 = self.drift @ xi
        k0r = np.concatenate([k0.real, k0.imag])

        scale = float(np.linalg.norm(X, axis=1).max(initial=0.0))
        if scale == 0.0:
            raise ValueError("all candidate fields vanish at this state")
        threshold = tol * scale

        # in-order greedy independence selection: orthogonalize each field
        # against the accepted set and accept when the residual clears the
        # cutoff; a second orthogonalization pass runs only near the cutoff,
        # where classical Gram-Schmidt loses accuracy
        n_rows, width = X.shape
        Q = np.empty((min(width, n_rows), width))
        k = 0
        rdiag = np.empty(n_rows)
        refine_band = 1e6 * threshold
        for i in range(n_rows):
            x = X[i]
            if k:
                qk = Q[:k]
                x = x - (qk @ x) @ qk
                rn2 = float(x @ x)
                if rn2 < refine_band * refine_band:
                    x = x - (qk @ x) @ qk
                    rn2 = float(x @ x)
                rn = np.sqrt(rn2)
            else:
                rn = float(np.sqrt(x @ x))
            rdiag[i] = rn
            if rn > threshold and k < Q.shape[0]:
                Q[k] = x / rn
                k += 1
        accepted = rdiag > threshold

        sel_delta = np.nonzero(accepted[:nd])[0]
        sel_comp = np.nonzero(accepted[nd:nd + ncp])[0]
        sel_g = np.nonzero(accepted[nd + ncp:])[0]
        K = len(sel_delta)
        q = len(sel_comp)
        if q == 0:
            raise DegenerateStateError(
                "no complement direction extends the invariant span at this "
                f"state (K = {K}); the feedback construction is undefined here",
                K=K)
        r_total = K + q + len(sel_g)

        warnings: list[str] = []
        rej = rdiag[~accepted]
        if accepted.any() and rej.size:
            gap = rdiag[accepted].min() / max(rej.max(), 1e-300)
            if gap < 10.0:
                warnings.append(
                    f"rank estimation instability: residuals straddle the cutoff "
                    f"within factor {gap:.2f}")

        Dl = X[:nd]
        Cl = X[nd:nd + ncp]
        Gl = X[nd + ncp:]
        V_delta = Dl[sel_delta]
        V_comp = Cl[sel_comp]
        V_gc = Gl[sel_g]

        # steps 1 and 3 share one coefficient matrix: [G, -V_delta, -V_gcomp];
        # one batched minimum-norm least-squares solve covers all targets
        A = np.concatenate([Gl, -V_delta, -V_gc], axis=0).T
        targets = np.concatenate([V_comp[:q], -k0r[None, :]], axis=0).T
        sol, _, _, _ = scipy.linalg.lstsq(A, targets, cond=tol,
                                          lapack_driver="gelsd",
                                          check_finite=False)
        fit = A @ sol - targets
        beta = np.zeros((nc, nc))
        residuals: list[float] = []
        for i in range(q):
            beta[:, i] = sol[:nc, i]
            residuals.append(float(np.linalg.norm(fit[:, i])))
        alpha = sol[:nc, q]
        residuals.append(float(np.linalg.norm(fit[:, q])))

        # completion: null space of [G, V].  Candidates are the projections
        # of the bare channel directions onto the null space (the projector
        # is canonical, so the completion inherits phase invariance); beta
        # parts are picked greedily for independence from the step-1 columns
        # by one pivoted QR (pivot order = greedy largest-residual selection)
        Mt = np.concatenate([Gl, V_delta, V_comp, V_gc], axis=0)  # (nc + r, 2n)
        u_m, s_m, _ = scipy.linalg.svd(Mt, full_matrices=False, check_finite=False,
                                       lapack_driver="gesdd")
        rank_m = int((s_m > tol * s_m[0]).sum()) if s_m.size and s_m[0] > 0 else 0
        u_beta = u_m[:nc, :rank_m]                  # row-space basis, beta block
        cand = np.eye(nc) - u_beta @ u_beta.T       # beta part of P_null e_j

        fixed = beta[:, :q]
        _, Rf, pivf = scipy.linalg.qr(fixed, mode="economic", pivoting=True,
                                      check_finite=False)
        rf = np.abs(np.diag(Rf))
        # the floor keeps pure-noise step-1 columns (unreachable targets)
        # from polluting the completion basis
        fixed_rank = int((rf > tol * max(rf[0], 1.0)).sum()) if rf.size else 0
        Qb = np.linalg.qr(fixed[:, sorted(pivf[:fixed_rank])])[0] \
            if fixed_rank else np.zeros((nc, 0))

        proj = cand - Qb @ (Qb.T @ cand) if Qb.shape[1] else cand
        _, Rp, piv = scipy.linalg.qr(proj, mode="economic", pivoting=True,
                                     check_finite=False)
        rp = np.abs(np.diag(Rp))
        take = [int(piv[j]) for j in range(min(len(piv), nc - q))
                if j < rp.size and rp[j] > tol]
        for j, c_idx in enumerate(take):
            beta[:, q + j] = cand[:, c_idx]

        s_beta = scipy.linalg.svd(beta, compute_uv=False, check_finite=False)
        beta_rank = int((s_beta > tol * s_beta[0]).sum()) if s_beta[0] > 0 else 0

        return ControlLawSample(
            state=xi.copy(),
            alpha=alpha,
            beta=beta,
            ranks=(K, q, r_total),
            residuals=tuple(residuals),
            beta_rank=beta_rank,
            warnings=tuple(warnings),
        )


def synthesize_alpha_beta(xi: np.ndarray, model: SystemModel, basis: InvariantBasis,
                          tol: float = DEFAULT_TOL) -> ControlLawSample:
    """Synthesize the feedback pair (alpha, beta) at one state.

    Steps: evaluate all invariant, complement and control fields at `xi`;
    select independent directions in listed order (rank cutoff `tol`
    relative to the largest field); solve the complement-reaching columns
    and the drift cancellation by minimum-norm least squares over the
    reals; complete beta from the null space of the stacked field matrix,
    greedily maximizing independence of the growing column set.
    """
    synth = _cached_synthesizer(model, basis, tol)
    return synth.sample(xi)


def _cached_synthesizer(model: SystemModel, basis: InvariantBasis,
                        tol: float) -> FeedbackSynthesizer:
    cache = getattr(basis, "_synth_cache", None)
    if cache is None:
        cache = {}
        basis._synth_cache = cache
    key = (id(model), float(tol))
    synth = cache.get(key)
    if synth is None or synth.model is not model:
        synth = FeedbackSynthesizer(model, basis, tol)
        cache[key] = synth
    return synth


def verify_synthesis(sample: ControlLawSample, model: SystemModel,
                     basis: InvariantBasis, tol: float = 1e-6) -> SynthesisVerification:
    """Controlled-invariance residuals with the sample's coefficients frozen.

    Forms the closed-loop drift K0 + sum(alpha_j g_j) and controls
    sum(beta_ji g_j), brackets them with every invariant field, and reports
    the relative residual of projecting each bracket, evaluated at the
    sample state, onto the invariant span at that state.  Also reports the
    Lie derivative of the coherence functional along each closed-loop field.
    """
    xi = sample.state
    nc = model.n_controls
    ctrl = np.stack([op.matrix for op in model.controls])
    delta_gen = basis.delta_generators()

    closed_drift = model.drift.matrix + np.tensordot(sample.alpha, ctrl, axes=1)
    closed_ctrls = [np.tensordot(sample.beta[:, i], ctrl, axes=1) for i in range(nc)]

    delta_vecs = delta_gen @ xi
    Dl = np.concatenate([delta_vecs.real, delta_vecs.imag], axis=1).T  # (2n, nd)
    u_, s_, _ = np.linalg.svd(Dl, full_matrices=False)
    rk = int((s_ > 1e-9 * s_[0]).sum()) if s_.size and s_[0] > 0 else 0
    U = u_[:, :rk]

    def rel_residual(vec: np.ndarray) -> float:
        v = np.concatenate([vec.real, vec.imag])
        nv = np.linalg.norm(v)
        if nv < 1e-14:
            return 0.0
        return float(np.linalg.norm(v - U @ (U.T @ v)) / nv)

    n_delta = delta_gen.shape[0]
    out = np.zeros((n_delta, 1 + nc))
    for m in range(n_delta):
        A_d = delta_gen[m]
        for col, B in enumerate([closed_drift] + closed_ctrls):
            bracket_vec = (B @ A_d - A_d @ B) @ xi  # vf_bracket generator action
            out[m, col] = rel_residual(bracket_vec)

    Cm = model.coherence_op.matrix
    def lie_y(B):
        return complex(np.vdot(xi, Cm @ (B @ xi)) - np.vdot(xi, B @ (Cm @ xi)))

    ly0 = lie_y(closed_drift)
    lyc = np.array([lie_y(B) for B in closed_ctrls])
    worst = float(out.max(initial=0.0))
    return SynthesisVerification(
        bracket_residuals=out,
        lie_y_drift=ly0,
        lie_y_controls=lyc,
        worst_bracket=worst,
        passed=worst <= tol,
    )


# ---------------------------------------------------------------------------
# protective feedback (extension)
# ---------------------------------------------------------------------------

def protected_block_indices(model: SystemModel) -> np.ndarray:
    """Full-space indices of the block carrying the monitored coherence.

    The block is spanned by the system basis states on which the coherence
    operator (or its adjoint) is supported, tensored with the environment.
    """
    C = model.coherence_op
    if not isinstance(C, Operator):
        raise ValueError("protective feedback requires a constant coherence operator")
    n_env = model.params.env_levels
    n_sys = model.dim // n_env
    sys_block = np.abs(C.matrix.reshape(n_sys, n_env, n_sys, n_env)[:, 0, :, 0])
    support = np.where((sys_block.sum(axis=0) + sys_block.sum(axis=1)) > 0)[0]
    return np.concatenate([np.arange(s * n_env, (s + 1) * n_env) for s in support])


class ProtectiveSynthesizer:
    """Feedback that cancels the controls' net action on the protected block.

    At each state the admissible control combinations are those whose total
    field has no component inside the protected block; beta is the
    orthogonal projector onto that set (continuous in the state wherever
    the constraint rank is constant) and alpha is zero.  The protected
    components then evolve under the bare drift alone, which commutes with
    the coherence operator, so the coherence trace is independent of the
    interaction strength - exactly, not only to integration accuracy.
    """

    def __init__(self, model: SystemModel, tol: float = 1e-12):
        self.model = model
        self.tol = float(tol)
        self.ctrl_gen = np.stack([op.matrix for op in model.controls])
        self.pidx = protected_block_indices(model)
        self.n_ctrl = len(model.controls)

    def sample(self, xi: np.ndarray) -> ControlLawSample:
        xi = np.asarray(xi, dtype=complex).ravel()
        fields_p = (self.ctrl_gen @ xi)[:, self.pidx]          # (nc, |P|)
        rows = np.concatenate([fields_p.real, fields_p.imag], axis=1).T
        u_, s_, vh = np.linalg.svd(rows, full_matrices=True)
        nz = int((s_ > self.tol * max(s_[0], 1e-300)).sum()) if s_.size else 0
        admissible = vh[nz:].T                                  # (nc, free)
        beta = admissible @ admissible.T
        free = admissible.shape[1]
        return ControlLawSample(
            state=xi.copy(),
            alpha=np.zeros(self.n_ctrl),
            beta=beta,
            ranks=(self.n_ctrl - free, 0, free),
            residuals=(),
            beta_rank=free,
            warnings=(),
        )


def synthesize_protective(xi: np.ndarray, model: SystemModel,
                          tol: float = 1e-12) -> ControlLawSample:
    """One-shot protective feedback sample; see :class:`ProtectiveSynthesizer`."""
    return ProtectiveSynthesizer(model, tol).sample(xi)
