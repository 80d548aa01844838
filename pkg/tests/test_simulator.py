import os

import numpy as np
import pytest

from qdecouple import (
    ControlSchedule,
    ModelParams,
    NormGuardError,
    Operator,
    build_invariant_basis,
    build_restructured,
    build_two_qubit,
    compare_decoupling,
    integrate_closed_loop,
    integrate_open_loop,
    make_primitive,
    preset_state,
    propagate_piecewise_exact,
    write_trajectory_csv,
)
from conftest import random_state


def _u1_schedule(value=1.0):
    v = np.zeros(4)
    v[0] = value
    return ControlSchedule.constant(v)


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------

def test_schedule_kinds():
    c = ControlSchedule.constant([1.0, 2.0])
    assert np.allclose(c(0.3), [1.0, 2.0])
    z = ControlSchedule.zero(3)
    assert np.allclose(z(10.0), 0.0)
    s = ControlSchedule.sinusoidal([1.0], [2.0], [np.pi / 2])
    assert np.isclose(s(0.0)[0], 1.0)
    pw = ControlSchedule.piecewise_constant([1.0, 2.0], [[0.0], [1.0], [2.0]])
    assert pw(0.5)[0] == 0.0 and pw(1.5)[0] == 1.0 and pw(2.5)[0] == 2.0


def test_schedule_validation():
    with pytest.raises(ValueError):
        ControlSchedule.piecewise_constant([2.0, 1.0], [[0.0], [1.0], [2.0]])
    with pytest.raises(ValueError):
        ControlSchedule.piecewise_constant([1.0], [[0.0]])


# ---------------------------------------------------------------------------
# open loop
# ---------------------------------------------------------------------------

def test_dfs_pair_coherence_constant_without_controls():
    for g in (0.0, 10.0):
        m = build_two_qubit(ModelParams(g=g))
        xi0 = preset_state(m, "dfs_pair")
        traj = integrate_open_loop(m, ControlSchedule.zero(4), xi0, t_end=2.0)
        assert np.abs(traj.abs_y - 0.5).max() < 1e-12
        assert traj.max_norm_drift < 1e-9


def test_open_loop_contrast_with_active_control():
    runs = {}
    for g in (0.0, 10.0):
        m = build_two_qubit(ModelParams(g=g))
        xi0 = preset_state(m, "dfs_pair")
        runs[g] = integrate_open_loop(m, _u1_schedule(), xi0, t_end=2.0)
    dev = np.abs(runs[10.0].abs_y - runs[0.0].abs_y).max()
    assert dev > 0.05


def test_norm_conservation_budget():
    m = build_two_qubit(ModelParams(g=10.0))
    xi0 = preset_state(m, "dfs_pair")
    traj = integrate_open_loop(m, _u1_schedule(), xi0, t_end=5.0, dt=1e-3)
    assert traj.max_norm_drift <= 1e-6


def test_exact_propagation_cross_check():
    m = build_two_qubit(ModelParams(g=10.0))
    xi0 = preset_state(m, "dfs_pair")
    sched = ControlSchedule.piecewise_constant(
        [1.0], [[1.0, 0.0, 0.0, 0.0], [0.0, 0.5, 0.0, 0.0]])
    rk = integrate_open_loop(m, sched, xi0, t_end=2.0, dt=1e-3)
    exact = propagate_piecewise_exact(m, sched, xi0, t_end=2.0, dt=1e-3)
    diff = np.linalg.norm(rk.states - exact.states, axis=1).max()
    assert diff < 1e-6


def test_global_phase_leaves_abs_y_unchanged():
    m = build_two_qubit(ModelParams(g=10.0))
    xi0 = preset_state(m, "dfs_pair")
    t1 = integrate_open_loop(m, _u1_schedule(), xi0, t_end=1.0)
    t2 = integrate_open_loop(m, _u1_schedule(), np.exp(1.1j) * xi0, t_end=1.0)
    assert np.abs(t1.abs_y - t2.abs_y).max() < 1e-12


def test_open_loop_richardson_fourth_order():
    # oracle: Richardson comparison against a fine-step reference
    m = build_two_qubit(ModelParams(g=10.0))
    xi0 = preset_state(m, "dfs_pair")
    ref = propagate_piecewise_exact(m, _u1_schedule(), xi0, t_end=1.0, dt=1e-2)

    errs = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        traj = integrate_open_loop(m, _u1_schedule(), xi0, t_end=1.0, dt=dt)
        stride = int(round(1e-2 / dt))
        errs.append(np.abs(traj.abs_y[::stride] - ref.abs_y).max())
    assert errs[0] / errs[1] >= 8.0
    assert errs[1] / errs[2] >= 8.0


def test_open_loop_input_validation():
    m = build_two_qubit()
    xi0 = preset_state(m, "dfs_pair")
    with pytest.raises(ValueError):
        integrate_open_loop(m, ControlSchedule.zero(3), xi0, 1.0)
    with pytest.raises(ValueError):
        integrate_open_loop(m, ControlSchedule.zero(4), 2.0 * xi0, 1.0)


def test_immunity_verdict_implies_identical_traces(rng):
    # open-loop immunity verdict implies |y| traces match with and without
    # the interaction, for arbitrary piecewise-constant drives
    sx, sy = make_primitive("pauli_x", 2).matrix, make_primitive("pauli_y", 2).matrix
    sz = make_primitive("pauli_z", 2).matrix
    i2 = np.eye(2, dtype=complex)
    block_ops = [np.kron(sz, i2) - np.kron(i2, sz),
                 np.kron(sx, sx) + np.kron(sy, sy),
                 np.kron(sx, sy) - np.kron(sy, sx)]

    def dfs_internal_model(g):
        m = build_two_qubit(ModelParams(g=g))
        eye_env = np.eye(3, dtype=complex)
        controls = tuple(Operator(np.kron(b, eye_env), "hermitian").times_minus_i()
                         for b in block_ops)
        from dataclasses import replace
        return replace(m, controls=controls)

    m0, m1 = dfs_internal_model(0.0), dfs_internal_model(10.0)
    xi0 = preset_state(m0, "dfs_pair")
    for _ in range(20):
        breaks = np.sort(rng.uniform(0.1, 0.9, size=2))
        vals = rng.uniform(-1.0, 1.0, size=(3, 3))
        sched = ControlSchedule.piecewise_constant(breaks, vals)
        y0 = integrate_open_loop(m0, sched, xi0, t_end=1.0).abs_y
        y1 = integrate_open_loop(m1, sched, xi0, t_end=1.0).abs_y
        assert np.abs(y1 - y0).max() <= 1e-6


# ---------------------------------------------------------------------------
# closed loop
# ---------------------------------------------------------------------------

def test_closed_loop_zero_drive_is_stationary(restructured_model, restructured_g0):
    basis = build_invariant_basis(restructured_model)
    for m in (restructured_g0, restructured_model):
        xi0 = preset_state(m, "dfs_pair")
        traj = integrate_closed_loop(m, ControlSchedule.zero(24), xi0,
                                     t_end=1.0, basis=build_invariant_basis(m))
        assert np.abs(traj.abs_y - 0.5).max() < 1e-12
        assert traj.max_norm_drift < 1e-12


def test_closed_loop_least_squares_aborts_on_norm_guard(restructured_model):
    # the per-state least-squares feedback is unbounded near the singular
    # locus; the norm guard must catch the resulting integration blow-up
    m = restructured_model
    basis = build_invariant_basis(m)
    v = np.zeros(24)
    v[[0, 3, 6, 9]] = 1.0
    with pytest.raises(NormGuardError):
        integrate_closed_loop(m, ControlSchedule.constant(v), preset_state(m, "dfs_pair"),
                              t_end=5.0, basis=basis, norm_guard=1e-4)


def test_closed_loop_generator_stays_skew(restructured_model, rng):
    # norm preservation is structural: any real (alpha, beta) composes a
    # skew-Hermitian closed-loop generator
    m = restructured_model
    ctrl = np.stack([op.matrix for op in m.controls])
    for _ in range(20):
        alpha = rng.standard_normal(24)
        beta = rng.standard_normal((24, 24))
        v = rng.standard_normal(24)
        u = alpha + beta @ v
        A = m.drift.matrix + m.interaction.matrix + np.tensordot(u, ctrl, axes=1)
        assert np.abs(A + A.conj().T).max() < 1e-12


def test_closed_loop_protective_short_run(restructured_model):
    m = restructured_model
    xi0 = preset_state(m, "dfs_pair")
    v = np.zeros(24)
    v[[0, 3, 6, 9]] = 1.0
    traj = integrate_closed_loop(m, ControlSchedule.constant(v), xi0,
                                 t_end=2.0, feedback="protective")
    assert np.abs(traj.abs_y - 0.5).max() < 1e-9
    # the constraint rank jumps once while leaving the singular initial
    # state, costing a single O(dt^2) norm glitch
    assert traj.max_norm_drift < 2e-6


def test_closed_loop_protective_richardson(restructured_model, rng):
    # feedback is smooth away from constraint-rank transitions, so the
    # integrator keeps its fourth-order convergence there
    m = restructured_model
    xi0 = random_state(rng, m.dim)
    v = np.zeros(24)
    v[[0, 3, 6, 9]] = 1.0
    sched = ControlSchedule.constant(v)

    # the guard is opened up: the coarse runs exist only to expose the
    # convergence order against the fine-step reference
    ref = integrate_closed_loop(m, sched, xi0, t_end=0.5, dt=6.25e-4,
                                feedback="protective", norm_guard=1.0)
    errs = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        traj = integrate_closed_loop(m, sched, xi0, t_end=0.5, dt=dt,
                                     feedback="protective", norm_guard=1.0)
        errs.append(np.linalg.norm(traj.states[-1] - ref.states[-1]))
    assert errs[0] / errs[1] >= 8.0
    assert errs[1] / errs[2] >= 8.0


# ---------------------------------------------------------------------------
# comparison harness
# ---------------------------------------------------------------------------

def test_compare_identical_runs_zero_deviation(tmp_path):
    csv = str(tmp_path / "cmp.csv")
    report = compare_decoupling(build_two_qubit, [0.0, 0.0], _u1_schedule(),
                                "dfs_pair", t_end=0.5, mode="open", csv_path=csv)
    assert report.passed
    devs = [d for g, d in report.max_abs_deviation.items()]
    assert max(devs) == 0.0
    assert os.path.exists(csv)


def test_compare_requires_reference():
    with pytest.raises(ValueError):
        compare_decoupling(build_two_qubit, [10.0], _u1_schedule(),
                           "dfs_pair", t_end=0.5, mode="open")


def test_compare_open_loop_contrast(tmp_path):
    report = compare_decoupling(build_two_qubit, [0.0, 10.0], _u1_schedule(),
                                "dfs_pair", t_end=2.0, mode="open",
                                tolerance=0.05)
    assert not report.passed
    assert report.max_abs_deviation[10.0 + 0j] > 0.05


def test_compare_protective_decoupling(tmp_path):
    v = np.zeros(24)
    v[[0, 3, 6, 9]] = 1.0
    report = compare_decoupling(build_restructured, [0.0, 10.0],
                                ControlSchedule.constant(v), "dfs_pair",
                                t_end=1.0, mode="closed", feedback="protective",
                                tolerance=1e-4)
    assert report.passed
    assert report.max_abs_deviation[10.0 + 0j] <= 1e-10


# ---------------------------------------------------------------------------
# trajectory CSV
# ---------------------------------------------------------------------------

def test_trajectory_csv_format(tmp_path):
    m = build_two_qubit()
    xi0 = preset_state(m, "dfs_pair")
    traj = integrate_open_loop(m, _u1_schedule(), xi0, t_end=0.01, dt=1e-3)
    path = str(tmp_path / "traj.csv")
    write_trajectory_csv(traj, path)

    with open(path) as fh:
        lines = fh.read().strip().split("\n")
    header = lines[0].split(",")
    assert header[:5] == ["t", "re_y", "im_y", "abs_y", "norm"]
    assert header[5:] == ["u1", "u2", "u3", "u4"]
    assert len(lines) == 1 + traj.times.size

    row = lines[1].split(",")
    assert float(row[0]) == 0.0
    assert abs(float(row[3]) - 0.5) < 1e-12
    # at least 12 significant digits survive the round trip
    assert abs(float(row[4]) - traj.norm[0]) < 1e-12


def test_preset_state_errors(two_qubit_model):
    with pytest.raises(ValueError):
        preset_state(two_qubit_model, "nope")


def test_open_loop_norm_guard_aborts_unstable_step():
    # dt far beyond the stability limit blows the norm; the guard reports it
    m = build_two_qubit(ModelParams(g=10.0))
    xi0 = preset_state(m, "dfs_pair")
    with pytest.raises(NormGuardError):
        integrate_open_loop(m, _u1_schedule(), xi0, t_end=20.0, dt=0.2)
