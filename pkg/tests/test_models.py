import numpy as np
import pytest

from qdecouple import (
    ModelParams,
    Operator,
    build_ancilla_system,
    build_electrooptic,
    build_one_qubit,
    build_restructured,
    build_two_qubit,
    cbh_effective_generator,
    commutator,
    make_primitive,
    span_membership,
)
from qdecouple.operators import NumericalError
import scipy.linalg


ALL_BUILDERS = [build_one_qubit, build_two_qubit, build_ancilla_system, build_restructured]


# ---------------------------------------------------------------------------
# structural contracts
# ---------------------------------------------------------------------------

def test_one_qubit_structure():
    m = build_one_qubit()
    assert m.dim == 6 and m.n_controls == 2
    assert m.layout.dims == (2, 3)


def test_two_qubit_structure(two_qubit_model):
    assert two_qubit_model.dim == 12
    assert two_qubit_model.n_controls == 4


def test_ancilla_structure():
    m = build_ancilla_system()
    assert m.dim == 24 and m.n_controls == 9
    assert m.layout.dims == (2, 2, 2, 3)


def test_restructured_structure(restructured_model):
    assert restructured_model.dim == 12
    assert restructured_model.n_controls == 24
    # environment factor varies fastest in the control ordering
    labels = [op.label for op in restructured_model.controls]
    assert labels[0:3] == ["sx1 D^0", "sx1 D^1", "sx1 D^2"]
    assert labels[3].startswith("sy1")


def test_all_generators_skew():
    for build in ALL_BUILDERS:
        m = build()
        assert m.drift.hermiticity == "skew_hermitian"
        assert m.interaction.hermiticity == "skew_hermitian"
        assert all(c.hermiticity == "skew_hermitian" for c in m.controls)


def test_zero_coupling_gives_zero_interaction():
    m = build_one_qubit(ModelParams(g=0.0))
    assert m.interaction.norm() == 0.0
    m2 = build_two_qubit(ModelParams(g=0.0))
    assert m2.interaction.norm() == 0.0


def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams(env_levels=1)
    with pytest.raises(ValueError):
        ModelParams(omega0=float("inf"))


def test_electrooptic_requires_three_levels():
    with pytest.raises(ValueError):
        build_electrooptic(n_sys=2)


# ---------------------------------------------------------------------------
# electro-optic identities
# ---------------------------------------------------------------------------

def test_electrooptic_control_bracket_is_cosine_on_safe_levels():
    model = build_electrooptic(n_sys=10, params=ModelParams(g=1.0))
    C = model.coherence_op
    bracket = commutator(C, model.controls[0]).merged()
    n_env = model.params.env_levels
    keep = np.arange(8)
    for key in ((model.params.omega0, 0), (-model.params.omega0, 0)):
        mat = bracket[key].reshape(10, n_env, 10, n_env)
        sub = mat[np.ix_(keep, np.arange(n_env), keep, np.arange(n_env))]
        sub = sub.reshape(8 * n_env, 8 * n_env)
        assert np.abs(sub - np.eye(8 * n_env)).max() < 1e-9


def test_electrooptic_coherence_constant_under_drift(rng):
    # oracle: exact propagation by matrix exponential, u = 0 and g = 0
    model = build_electrooptic(n_sys=8, params=ModelParams(g=0.0))
    dim = model.dim
    xi0 = np.zeros(dim, dtype=complex)
    xi0[0] = 0.6
    xi0[model.params.env_levels] = 0.8  # cavity level 1, env ground
    xi0 /= np.linalg.norm(xi0)

    y0 = np.vdot(xi0, model.coherence_op.evaluate(0.0).matrix @ xi0)
    for t in (0.3, 1.7, 4.0):
        U = scipy.linalg.expm(model.drift.matrix * t)
        xi = U @ xi0
        y = np.vdot(xi, model.coherence_op.evaluate(t).matrix @ xi)
        assert abs(abs(y) - abs(y0)) < 1e-10


# ---------------------------------------------------------------------------
# ancilla commutators and maneuver chains
# ---------------------------------------------------------------------------

def _embed_ancilla(mat_q1, mat_q2, mat_b, mat_env):
    return np.kron(np.kron(np.kron(mat_q1, mat_q2), mat_b), mat_env)


def test_ancilla_h6_h9_bracket():
    m = build_ancilla_system()
    h6, h9 = m.controls[5], m.controls[8]
    sx = make_primitive("pauli_x", 2).matrix
    i2 = np.eye(2, dtype=complex)
    Dw = make_primitive("displacement", 3, w=m.params.w).matrix
    target = Operator(_embed_ancilla(i2, i2, sx, Dw))
    res = span_membership(commutator(h6, h9), [target])
    assert res.is_member and res.residual_norm < 1e-10


def test_ancilla_h4_h8_bracket():
    m = build_ancilla_system()
    h4, h8 = m.controls[3], m.controls[7]
    sx = make_primitive("pauli_x", 2).matrix
    sz = make_primitive("pauli_z", 2).matrix
    i2 = np.eye(2, dtype=complex)
    target = Operator(_embed_ancilla(i2, sx, sz, np.eye(3, dtype=complex)))
    res = span_membership(commutator(h4, h8), [target])
    assert res.is_member and res.residual_norm < 1e-10


def _trace_ancilla(mat24):
    t = mat24.reshape(2, 2, 2, 3, 2, 2, 2, 3)
    return np.einsum("abkcdekf->abcdef", t).reshape(12, 12)


@pytest.mark.parametrize("chain_controls,target_sys", [
    # qubit-2 coupling: [[H4,H8],[[H8,H5],[H6,H9]]] ~ sigma_y^(2) (x) D
    (((3, 7), ((7, 4), (5, 8))), "sy2"),
    # qubit-1 coupling: [[H2,H7],[[H7,H5],[H6,H9]]] ~ sigma_y^(1) (x) D
    (((1, 6), ((6, 4), (5, 8))), "sy1"),
])
def test_maneuver_chain_reproduces_restructured_control(chain_controls, target_sys):
    m = build_ancilla_system()
    c = m.controls

    (i1, j1), ((a1, a2), (b1, b2)) = chain_controls
    left = commutator(c[i1], c[j1])
    right = commutator(commutator(c[a1], c[a2]), commutator(c[b1], c[b2]))
    chain = commutator(left, right)

    traced = Operator(_trace_ancilla(chain.matrix))
    sy = make_primitive("pauli_y", 2).matrix
    i2 = np.eye(2, dtype=complex)
    Dw = make_primitive("displacement", 3, w=m.params.w).matrix
    sys_op = np.kron(sy, i2) if target_sys == "sy1" else np.kron(i2, sy)
    target = Operator(np.kron(sys_op, Dw))
    res = span_membership(traced, [target])
    assert res.is_member and res.residual_norm < 1e-9 * max(1.0, traced.norm())
    assert traced.norm() > 1e-6  # the chain is not vacuously zero


def test_restructured_control_brackets_close(restructured_model):
    m = restructured_model
    gens = list(m.controls)
    for g_op in gens:
        br = commutator(g_op, m.interaction)
        res = span_membership(br, gens)
        assert res.residual_norm < 1e-9 * max(1.0, br.norm())


# ---------------------------------------------------------------------------
# pulse maneuvers
# ---------------------------------------------------------------------------

def test_cbh_commuting_generators():
    A = Operator(-1j * np.diag([1.0, 2.0]).astype(complex), "skew_hermitian")
    B = Operator(-1j * np.diag([0.5, 0.25]).astype(complex), "skew_hermitian")
    U, eff = cbh_effective_generator(A, B, 1e-2)
    assert np.abs(U.matrix - np.eye(2)).max() < 1e-12
    assert eff.norm() < 1e-8


def test_cbh_effective_approaches_bracket():
    m = build_ancilla_system()
    HA, HB = m.controls[5], m.controls[8]
    bracket = commutator(HA, HB)
    _, eff = cbh_effective_generator(HA, HB, 1e-3)
    rel = (eff - bracket).norm() / bracket.norm()
    assert rel < 5e-3  # O(t) remainder at t = 1e-3


def test_cbh_scaling_slope():
    # oracle: log-log regression of the remainder over exact matrix products
    m = build_ancilla_system()
    HA, HB = m.controls[5], m.controls[8]
    bracket = commutator(HA, HB)
    ts = np.array([1e-2, 1e-3, 1e-4])
    errs = []
    for t in ts:
        _, eff = cbh_effective_generator(HA, HB, float(t))
        errs.append((eff - bracket).norm())
    slope = np.polyfit(np.log(ts), np.log(errs), 1)[0]
    assert abs(slope - 1.0) < 0.1


def test_cbh_rejects_bad_inputs():
    H = Operator(np.eye(2, dtype=complex), "hermitian")
    S = Operator(-1j * np.eye(2, dtype=complex), "skew_hermitian")
    with pytest.raises(ValueError):
        cbh_effective_generator(H, S, 1e-3)
    with pytest.raises(ValueError):
        cbh_effective_generator(S, S, -1.0)
