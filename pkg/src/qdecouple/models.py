"""Builders for the concrete open-quantum-system control models.

All builders return a :class:`SystemModel` whose drift, control and
interaction operators are skew-Hermitian generators (-1j times the physical
Hamiltonians, hbar = 1), so trajectories preserve the state norm in exact
arithmetic.  The environment is a single truncated bosonic mode throughout.

Models:

* one qubit in a dephasing bath (two controls) - not decouplable;
* two qubits in a collective dephasing bath (four controls) - carries the
  protected pair span{|01>, |10>} but is not decouplable as given;
* a driven oscillator read out by a rotating-frame quadrature (one control);
* the ancilla-extended system (nine controls) used to manufacture new
  control directions by pulse maneuvers;
* the restructured system: eight two-qubit operators crossed with
  {I, D, D^2} environment dressings, 24 controls, on which the feedback
  synthesis operates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.linalg

from .geometry import LinearVectorField
from .operators import (
    NumericalError,
    Operator,
    TensorLayout,
    TimeOperator,
    TimeTerm,
    commutator,
    kron_embed,
    make_primitive,
    matrix_exponential,
    opnorm,
)

__all__ = [
    "ModelParams",
    "SystemModel",
    "build_one_qubit",
    "build_two_qubit",
    "build_electrooptic",
    "build_ancilla_system",
    "build_restructured",
    "cbh_effective_generator",
    "RESTRUCTURED_SYSTEM_LABELS",
]


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters; only g = 10, env_levels = 3 and the initial
    coherence 0.5 are anchored values, the rest are nondegenerate defaults."""

    omega0: float = 1.0          # qubit splitting
    omega_env: float = 1.0       # mode frequency
    g: complex = 10.0 + 0j       # decoherence coupling strength
    w: complex = 1.0 + 0j        # ancilla-derived coupling in D = w b^+ + w* b
    j1: float = 1.0              # Ising coupling, qubit 1 <-> ancilla
    j2: float = 1.0              # Ising coupling, qubit 2 <-> ancilla
    env_levels: int = 3          # bosonic truncation

    def __post_init__(self):
        if self.env_levels < 2:
            raise ValueError(f"env_levels must be >= 2, got {self.env_levels}")
        for name in ("omega0", "omega_env", "j1", "j2"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"parameter {name} must be finite")
        for name in ("g", "w"):
            if not np.isfinite(complex(getattr(self, name))):
                raise ValueError(f"parameter {name} must be finite")


@dataclass(frozen=True)
class SystemModel:
    """Drift/control/interaction generators plus the monitored operator."""

    layout: TensorLayout
    drift: Operator                      # -1j (H_0 + H_env)
    controls: tuple[Operator, ...]       # -1j H_i
    interaction: Operator                # -1j H_SE
    coherence_op: Union[Operator, TimeOperator]
    params: ModelParams
    name: str = ""

    def __post_init__(self):
        for op in (self.drift, self.interaction, *self.controls):
            if op.hermiticity != "skew_hermitian":
                raise ValueError(f"generator {op.label!r} must be skew-Hermitian")
            if op.dim != self.layout.total_dim:
                raise ValueError("generator dimension does not match layout")
        cdim = self.coherence_op.dim
        if cdim != self.layout.total_dim:
            raise ValueError("coherence operator dimension does not match layout")

    @property
    def dim(self) -> int:
        return self.layout.total_dim

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    def drift_field(self) -> LinearVectorField:
        return LinearVectorField(self.drift, "K0")

    def control_fields(self) -> list[LinearVectorField]:
        return [LinearVectorField(op, f"K{i + 1}:{op.label}")
                for i, op in enumerate(self.controls)]

    def interaction_field(self) -> LinearVectorField:
        return LinearVectorField(self.interaction, "K_I")


def _number_op(n_levels: int) -> Operator:
    b = make_primitive("boson_lower", n_levels)
    return Operator((b.dagger() @ b).matrix, "hermitian", "n")


def _pauli_on(kind: str, slot: int, layout: TensorLayout) -> Operator:
    return kron_embed(make_primitive(kind, 2), slot, layout)


def build_one_qubit(params: ModelParams = ModelParams()) -> SystemModel:
    """Single qubit dephasing through sigma_z into one truncated mode."""
    n_env = params.env_levels
    layout = TensorLayout((2, n_env), ("q0", "env"))
    sz = _pauli_on("pauli_z", 0, layout)
    h0 = (params.omega0 / 2.0) * sz + params.omega_env * kron_embed(_number_op(n_env), 1, layout)
    d_g = make_primitive("displacement", n_env, w=params.g)
    h_se = Operator(np.kron(make_primitive("pauli_z", 2).matrix, d_g.matrix),
                    "hermitian", "H_SE")
    controls = (_pauli_on("pauli_x", 0, layout), _pauli_on("pauli_y", 0, layout))

    proj = np.zeros((2, 2), dtype=complex)
    proj[1, 0] = 1.0  # |1><0|
    C = Operator(np.kron(proj, np.eye(n_env)), "general", "|1><0|")
    return SystemModel(
        layout=layout,
        drift=h0.times_minus_i(),
        controls=tuple(op.times_minus_i() for op in controls),
        interaction=h_se.times_minus_i(),
        coherence_op=C,
        params=params,
        name="one_qubit",
    )


def _two_qubit_sys_ops():
    sx = make_primitive("pauli_x", 2).matrix
    sy = make_primitive("pauli_y", 2).matrix
    sz = make_primitive("pauli_z", 2).matrix
    i2 = np.eye(2, dtype=complex)
    return sx, sy, sz, i2


def build_two_qubit(params: ModelParams = ModelParams()) -> SystemModel:
    """Two qubits, collective dephasing, the four bare single-qubit controls."""
    n_env = params.env_levels
    layout = TensorLayout((2, 2, n_env), ("q0", "q1", "env"))
    sx, sy, sz, i2 = _two_qubit_sys_ops()
    eye_env = np.eye(n_env, dtype=complex)

    sz_sum = np.kron(sz, i2) + np.kron(i2, sz)
    number = _number_op(n_env).matrix
    h0 = Operator((params.omega0 / 2.0) * np.kron(sz_sum, eye_env)
                  + params.omega_env * np.kron(np.eye(4), number), "hermitian", "H0")
    d_g = make_primitive("displacement", n_env, w=params.g)
    h_se = Operator(np.kron(sz_sum, d_g.matrix), "hermitian", "H_SE")

    sys_controls = [(np.kron(sx, i2), "sx1"), (np.kron(sy, i2), "sy1"),
                    (np.kron(i2, sx), "sx2"), (np.kron(i2, sy), "sy2")]
    controls = tuple(Operator(np.kron(m, eye_env), "hermitian", lab).times_minus_i()
                     for m, lab in sys_controls)

    proj = np.zeros((4, 4), dtype=complex)
    proj[1, 2] = 1.0  # |01><10| in the basis 00, 01, 10, 11
    C = Operator(np.kron(proj, eye_env), "general", "|01><10|")
    return SystemModel(
        layout=layout,
        drift=h0.times_minus_i(),
        controls=controls,
        interaction=h_se.times_minus_i(),
        coherence_op=C,
        params=params,
        name="two_qubit",
    )


def build_electrooptic(n_sys: int = 10, params: ModelParams = ModelParams(g=1.0)) -> SystemModel:
    """Driven oscillator with a rotating-frame quadrature readout.

    The monitored operator is a e^(i omega t) + a^+ e^(-i omega t); the
    interaction exchanges quanta with the bath mode.  The control (a^+ - a)
    is already skew-Hermitian and enters the dynamics unscaled.
    """
    if n_sys < 3:
        raise ValueError(f"n_sys must be >= 3, got {n_sys}")
    n_env = params.env_levels
    layout = TensorLayout((n_sys, n_env), ("cavity", "env"))
    a = make_primitive("boson_lower", n_sys)
    ad = a.dagger()
    b = make_primitive("boson_lower", n_env)
    bd = b.dagger()
    eye_s = np.eye(n_sys, dtype=complex)
    eye_e = np.eye(n_env, dtype=complex)

    h0 = Operator(params.omega0 * np.kron((ad @ a).matrix, eye_e)
                  + params.omega_env * np.kron(eye_s, (bd @ b).matrix), "hermitian", "H0")
    g = complex(params.g)
    h_se = Operator(np.kron(a.matrix, np.conj(g) * b.matrix)
                    + np.kron(ad.matrix, g * bd.matrix), "hermitian", "H_SE")
    control = Operator(np.kron(ad.matrix - a.matrix, eye_e), "skew_hermitian", "a^+-a")

    C = TimeOperator((
        TimeTerm(np.kron(a.matrix, eye_e), 1.0, params.omega0, 0),
        TimeTerm(np.kron(ad.matrix, eye_e), 1.0, -params.omega0, 0),
    ), label="a e^{iwt} + a^+ e^{-iwt}")
    return SystemModel(
        layout=layout,
        drift=h0.times_minus_i(),
        controls=(control,),
        interaction=h_se.times_minus_i(),
        coherence_op=C,
        params=params,
        name="electro_optic",
    )


def build_ancilla_system(params: ModelParams = ModelParams()) -> SystemModel:
    """Two qubits + ancilla qubit + mode; the nine physical controls.

    Controls 1-4 are the bare qubit fields, 5-6 drive the ancilla, 7-8 are
    the Ising couplings scaled by J1, J2, and 9 modulates the ancilla's own
    environment coupling (the carrier of the interaction model).
    """
    n_env = params.env_levels
    layout = TensorLayout((2, 2, 2, n_env), ("q0", "q1", "anc", "env"))
    sx, sy, sz, i2 = _two_qubit_sys_ops()
    eye_env = np.eye(n_env, dtype=complex)

    def sys3(m1, m2, mb):
        return np.kron(np.kron(m1, m2), mb)

    number = _number_op(n_env).matrix
    sz_sum = sys3(sz, i2, i2) + sys3(i2, sz, i2)
    h0 = Operator((params.omega0 / 2.0) * (np.kron(sz_sum, eye_env)
                                           + np.kron(sys3(i2, i2, sz), eye_env))
                  + params.omega_env * np.kron(np.eye(8), number), "hermitian", "H0")
    d_g = make_primitive("displacement", n_env, w=params.g)
    d_w = make_primitive("displacement", n_env, w=params.w)
    h_se = Operator(np.kron(sz_sum, d_g.matrix), "hermitian", "H_SE")

    sys_controls = [
        (sys3(sx, i2, i2), "sx1"), (sys3(sy, i2, i2), "sy1"),
        (sys3(i2, sx, i2), "sx2"), (sys3(i2, sy, i2), "sy2"),
        (sys3(i2, i2, sx), "sxb"), (sys3(i2, i2, sy), "syb"),
        (params.j1 * sys3(sz, i2, sz), "J1 sz1 szb"),
        (params.j2 * sys3(i2, sz, sz), "J2 sz2 szb"),
    ]
    controls = [Operator(np.kron(m, eye_env), "hermitian", lab) for m, lab in sys_controls]
    controls.append(Operator(np.kron(sys3(i2, i2, sz), d_w.matrix), "hermitian", "szb Dw"))

    proj = np.zeros((4, 4), dtype=complex)
    proj[1, 2] = 1.0
    C = Operator(np.kron(np.kron(proj, i2), eye_env), "general", "|01><10|")
    return SystemModel(
        layout=layout,
        drift=h0.times_minus_i(),
        controls=tuple(op.times_minus_i() for op in controls),
        interaction=h_se.times_minus_i(),
        coherence_op=C,
        params=params,
        name="ancilla",
    )


RESTRUCTURED_SYSTEM_LABELS = ("sx1", "sy1", "sx2", "sy2",
                              "sz1 sx2", "sz1 sy2", "sx1 sz2", "sy1 sz2")


def restructured_system_operators() -> list[np.ndarray]:
    """The eight two-qubit operators dressed by the environment powers."""
    sx, sy, sz, i2 = _two_qubit_sys_ops()
    return [np.kron(sx, i2), np.kron(sy, i2), np.kron(i2, sx), np.kron(i2, sy),
            np.kron(sz, sx), np.kron(sz, sy), np.kron(sx, sz), np.kron(sy, sz)]


def build_restructured(params: ModelParams = ModelParams()) -> SystemModel:
    """The 24-control effective system: {eight ops} x {I, D, D^2}.

    Control ordering is fixed with the environment factor varying fastest:
    index 3*(s-1) + i addresses system operator s dressed with D^i.  The
    ancilla slot is eliminated (the manufactured controls act trivially on
    it); its drift term is dropped with it.  D^2 is the square of the
    truncated D, keeping the dressed algebra self-consistent.
    """
    n_env = params.env_levels
    layout = TensorLayout((2, 2, n_env), ("q0", "q1", "env"))
    sx, sy, sz, i2 = _two_qubit_sys_ops()
    eye_env = np.eye(n_env, dtype=complex)

    number = _number_op(n_env).matrix
    sz_sum = np.kron(sz, i2) + np.kron(i2, sz)
    h0 = Operator((params.omega0 / 2.0) * np.kron(sz_sum, eye_env)
                  + params.omega_env * np.kron(np.eye(4), number), "hermitian", "H0")
    d_g = make_primitive("displacement", n_env, w=params.g)
    h_se = Operator(np.kron(sz_sum, d_g.matrix), "hermitian", "H_SE")

    d_w = make_primitive("displacement", n_env, w=params.w).matrix
    env_powers = [np.eye(n_env, dtype=complex), d_w, d_w @ d_w]
    controls = []
    for s_op, s_lab in zip(restructured_system_operators(), RESTRUCTURED_SYSTEM_LABELS):
        for i, env in enumerate(env_powers):
            controls.append(Operator(np.kron(s_op, env), "hermitian",
                                     f"{s_lab} D^{i}").times_minus_i())

    proj = np.zeros((4, 4), dtype=complex)
    proj[1, 2] = 1.0
    C = Operator(np.kron(proj, eye_env), "general", "|01><10|")
    return SystemModel(
        layout=layout,
        drift=h0.times_minus_i(),
        controls=tuple(controls),
        interaction=h_se.times_minus_i(),
        coherence_op=C,
        params=params,
        name="restructured",
    )


def cbh_effective_generator(HA: Operator, HB: Operator, t: float) -> tuple[Operator, Operator]:
    """Four-pulse maneuver propagator and its effective generator.

    U = exp(t A) exp(t B) exp(-t A) exp(-t B) equals exp([A, B] t^2 + O(t^3))
    for skew-Hermitian generators A, B; the returned effective generator is
    the principal matrix logarithm of U divided by t^2, which approaches
    commutator(A, B) as t -> 0.
    """
    if HA.hermiticity != "skew_hermitian" or HB.hermiticity != "skew_hermitian":
        raise ValueError("cbh_effective_generator expects skew-Hermitian generators")
    if t <= 0:
        raise ValueError(f"pulse time must be positive, got {t}")
    ua = matrix_exponential((t * HA))
    ub = matrix_exponential((t * HB))
    ua_inv = matrix_exponential((-t) * HA)
    ub_inv = matrix_exponential((-t) * HB)
    U = Operator(ua.matrix @ ub.matrix @ ua_inv.matrix @ ub_inv.matrix, "general", "U(4t)")

    logU = scipy.linalg.logm(U.matrix)
    recon = opnorm(scipy.linalg.expm(logU) - U.matrix)
    if not np.all(np.isfinite(logU)) or recon > 1e-8 * max(1.0, opnorm(U.matrix)):
        raise NumericalError(
            f"matrix logarithm branch failure at t={t}; use a smaller pulse time "
            f"(reconstruction error {recon:.3e})")
    effective = Operator(np.asarray(logU, dtype=complex) / t ** 2, "general", "[A,B]+O(t)")
    return U, effective
