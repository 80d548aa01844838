"""Time integration of open- and closed-loop dynamics and decoupling reports.

Fixed-step classical fourth-order integration throughout, for deterministic,
reproducible comparison runs.  Closed-loop feedback is re-synthesized at
every integrator stage.  Trajectories record the complex coherence
y(t) = <xi|C|xi>, the state norm, and the applied controls; a norm guard
aborts any run whose state norm drifts beyond the configured budget.
"""

from __future__ import annotations

import os
import time as _time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.linalg

from .models import ModelParams, SystemModel
from .operators import Operator, TimeOperator
from .synthesis import (
    DegenerateStateError,
    FeedbackSynthesizer,
    InvariantBasis,
    ProtectiveSynthesizer,
    build_invariant_basis,
)

__all__ = [
    "NormGuardError",
    "ControlSchedule",
    "Trajectory",
    "DecouplingReport",
    "integrate_open_loop",
    "integrate_closed_loop",
    "propagate_piecewise_exact",
    "compare_decoupling",
    "write_trajectory_csv",
    "preset_state",
]

DEFAULT_NORM_GUARD = 1e-4
DEFAULT_DT = 1e-3


class NormGuardError(RuntimeError):
    """State norm drifted beyond the configured budget."""


@dataclass(eq=False)
class ControlSchedule:
    """Control amplitudes as a function of time, one entry per channel."""

    kind: str
    n_channels: int
    _fn: Callable[[float], np.ndarray]
    breakpoints: tuple[float, ...] = ()

    @classmethod
    def zero(cls, n_channels: int) -> "ControlSchedule":
        z = np.zeros(n_channels)
        return cls("constant", n_channels, lambda t: z)

    @classmethod
    def constant(cls, values: Sequence[float]) -> "ControlSchedule":
        v = np.asarray(values, dtype=float)
        return cls("constant", v.size, lambda t: v)

    @classmethod
    def piecewise_constant(cls, breakpoints: Sequence[float],
                           values: Sequence[Sequence[float]]) -> "ControlSchedule":
        bp = np.asarray(breakpoints, dtype=float)
        vals = np.asarray(values, dtype=float)
        if bp.ndim != 1 or np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if vals.shape[0] != bp.size + 1:
            raise ValueError("need one value row per segment (len(breakpoints)+1)")

        def fn(t: float) -> np.ndarray:
            return vals[int(np.searchsorted(bp, t, side="right"))]

        return cls("piecewise_constant", vals.shape[1], fn, tuple(bp))

    @classmethod
    def sinusoidal(cls, amplitudes: Sequence[float], frequencies: Sequence[float],
                   phases: Optional[Sequence[float]] = None) -> "ControlSchedule":
        a = np.asarray(amplitudes, dtype=float)
        w = np.asarray(frequencies, dtype=float)
        p = np.zeros_like(a) if phases is None else np.asarray(phases, dtype=float)
        if not (a.size == w.size == p.size):
            raise ValueError("amplitudes, frequencies, phases must share length")
        return cls("sinusoidal", a.size, lambda t: a * np.sin(w * t + p))

    @classmethod
    def callback(cls, fn: Callable[[float], np.ndarray], n_channels: int) -> "ControlSchedule":
        return cls("callback", n_channels, lambda t: np.asarray(fn(t), dtype=float))

    def __call__(self, t: float) -> np.ndarray:
        u = self._fn(t)
        if u.size != self.n_channels:
            raise ValueError("schedule returned wrong channel count")
        return u


@dataclass(eq=False)
class Trajectory:
    """Time grid, states, coherence trace, norms and applied controls."""

    times: np.ndarray
    states: np.ndarray            # (n_t, dim)
    y: np.ndarray                 # complex coherence per time
    norm: np.ndarray
    controls_applied: np.ndarray  # (n_t, n_channels) effective u at step start
    diagnostics: dict = field(default_factory=dict)

    @property
    def abs_y(self) -> np.ndarray:
        return np.abs(self.y)

    @property
    def max_norm_drift(self) -> float:
        return float(np.abs(self.norm - 1.0).max())


@dataclass(eq=False)
class DecouplingReport:
    """|y| trace deviations of each run against the zero-interaction reference."""

    g_values: tuple[complex, ...]
    max_abs_deviation: dict
    norm_drift: dict
    runtimes: dict
    tolerance: float
    passed: bool
    trajectories: dict = field(default_factory=dict)


def preset_state(model: SystemModel, name: str = "dfs_pair") -> np.ndarray:
    """Named initial states on the model's layout.

    dfs_pair: (|01> + |10>)/sqrt(2) on the first two qubits, environment in
    its ground state (initial coherence 0.5).  ground: all slots in their
    first basis state.
    """
    dims = model.layout.dims
    if name == "ground":
        xi = np.zeros(model.dim, dtype=complex)
        xi[0] = 1.0
        return xi
    if name == "dfs_pair":
        if len(dims) < 3 or dims[0] != 2 or dims[1] != 2:
            raise ValueError("dfs_pair preset requires a two-qubit layout")
        rest = int(np.prod(dims[2:]))
        sys_state = np.zeros(4, dtype=complex)
        sys_state[1] = sys_state[2] = 1.0 / np.sqrt(2.0)
        env = np.zeros(rest, dtype=complex)
        env[0] = 1.0
        return np.kron(sys_state, env)
    raise ValueError(f"unknown state preset {name!r}")


def _coherence_matrix(model: SystemModel, t: float) -> np.ndarray:
    C = model.coherence_op
    if isinstance(C, TimeOperator):
        return C.evaluate(t).matrix
    return C.matrix


def _check_norm(nrm: float, t: float, guard: float, context: str):
    if abs(nrm - 1.0) > guard:
        raise NormGuardError(
            f"{context}: state norm drifted to {nrm!r} at t = {t:.6f} "
            f"(budget {guard:g}); reduce dt or inspect the control magnitudes")


def integrate_open_loop(model: SystemModel, schedule: ControlSchedule,
                        xi0: np.ndarray, t_end: float, dt: float = DEFAULT_DT,
                        norm_guard: float = DEFAULT_NORM_GUARD) -> Trajectory:
    """Fixed-step RK4 for xi' = (drift + sum u_i(t) control_i + interaction) xi."""
    xi = np.asarray(xi0, dtype=complex).ravel()
    if abs(np.linalg.norm(xi) - 1.0) > 1e-9:
        raise ValueError("initial state must be normalized")
    if dt <= 0 or t_end <= 0:
        raise ValueError("dt and t_end must be positive")
    if schedule.n_channels != model.n_controls:
        raise ValueError(f"schedule has {schedule.n_channels} channels, "
                         f"model expects {model.n_controls}")

    static = model.drift.matrix + model.interaction.matrix
    ctrl = np.stack([op.matrix for op in model.controls])
    n_steps = int(round(t_end / dt))
    dim = model.dim
    # (piecewise-)constant drives are frozen over each step, so the stage at
    # t + dt cannot leak the next segment's value into the current step
    freeze_per_step = schedule.kind in ("constant", "piecewise_constant")

    def rhs(t: float, state: np.ndarray, u_frozen) -> np.ndarray:
        u = u_frozen if u_frozen is not None else schedule(t)
        return static @ state + np.tensordot(u, ctrl, axes=1) @ state

    times = np.empty(n_steps + 1)
    states = np.empty((n_steps + 1, dim), dtype=complex)
    ys = np.empty(n_steps + 1, dtype=complex)
    norms = np.empty(n_steps + 1)
    controls = np.empty((n_steps + 1, model.n_controls))

    for k in range(n_steps + 1):
        t = k * dt
        times[k] = t
        states[k] = xi
        norms[k] = np.linalg.norm(xi)
        ys[k] = np.vdot(xi, _coherence_matrix(model, t) @ xi)
        controls[k] = schedule(t)
        _check_norm(norms[k], t, norm_guard, "open-loop integration")
        if k == n_steps:
            break
        u_step = schedule(t) if freeze_per_step else None
        k1 = rhs(t, xi, u_step)
        k2 = rhs(t + dt / 2, xi + (dt / 2) * k1, u_step)
        k3 = rhs(t + dt / 2, xi + (dt / 2) * k2, u_step)
        k4 = rhs(t + dt, xi + dt * k3, u_step)
        xi = xi + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)

    return Trajectory(times, states, ys, norms, controls,
                      {"mode": "open", "dt": dt, "model": model.name})


def propagate_piecewise_exact(model: SystemModel, schedule: ControlSchedule,
                              xi0: np.ndarray, t_end: float,
                              dt: float = DEFAULT_DT) -> Trajectory:
    """Per-segment matrix-exponential propagation (piecewise-constant u).

    Exact up to the matrix exponential; the cross-check for the fixed-step
    integrator.  Schedule breakpoints should lie on the dt grid, otherwise
    segment boundaries are effectively shifted to the next grid point.
    """
    if schedule.kind not in ("constant", "piecewise_constant"):
        raise ValueError("exact propagation requires a (piecewise-)constant schedule")
    xi = np.asarray(xi0, dtype=complex).ravel()
    static = model.drift.matrix + model.interaction.matrix
    ctrl = np.stack([op.matrix for op in model.controls])
    n_steps = int(round(t_end / dt))
    dim = model.dim

    cache: dict[bytes, np.ndarray] = {}
    times = np.empty(n_steps + 1)
    states = np.empty((n_steps + 1, dim), dtype=complex)
    ys = np.empty(n_steps + 1, dtype=complex)
    norms = np.empty(n_steps + 1)
    controls = np.empty((n_steps + 1, model.n_controls))

    for k in range(n_steps + 1):
        t = k * dt
        times[k] = t
        states[k] = xi
        norms[k] = np.linalg.norm(xi)
        ys[k] = np.vdot(xi, _coherence_matrix(model, t) @ xi)
        u = schedule(t)
        controls[k] = u
        if k == n_steps:
            break
        key = u.tobytes()
        U = cache.get(key)
        if U is None:
            U = scipy.linalg.expm((static + np.tensordot(u, ctrl, axes=1)) * dt)
            cache[key] = U
        xi = U @ xi

    return Trajectory(times, states, ys, norms, controls,
                      {"mode": "exact", "dt": dt, "model": model.name})


def integrate_closed_loop(model: SystemModel, v_schedule: ControlSchedule,
                          xi0: np.ndarray, t_end: float, dt: float = DEFAULT_DT,
                          basis: Optional[InvariantBasis] = None,
                          tol: float = 1e-9,
                          norm_guard: float = DEFAULT_NORM_GUARD,
                          feedback: str = "least_squares") -> Trajectory:
    """Closed-loop RK4 with the feedback re-synthesized at every stage.

    The applied control is u = alpha(xi) + beta(xi) v(t); `feedback`
    selects the synthesizer: "least_squares" for the least-squares/null-space
    algorithm (requires `basis`), "protective" for the block-protecting
    projector feedback.
    """
    xi = np.asarray(xi0, dtype=complex).ravel()
    if abs(np.linalg.norm(xi) - 1.0) > 1e-9:
        raise ValueError("initial state must be normalized")
    if v_schedule.n_channels != model.n_controls:
        raise ValueError(f"v schedule has {v_schedule.n_channels} channels, "
                         f"model expects {model.n_controls}")

    if feedback == "least_squares":
        if basis is None:
            basis = build_invariant_basis(model)
        synth = FeedbackSynthesizer(model, basis, tol)
    elif feedback == "protective":
        synth = ProtectiveSynthesizer(model)
    else:
        raise ValueError(f"unknown feedback mode {feedback!r}")

    static = model.drift.matrix + model.interaction.matrix
    ctrl = np.stack([op.matrix for op in model.controls])
    n_steps = int(round(t_end / dt))
    dim = model.dim

    ranks_seen: set[tuple] = set()
    n_warnings = 0
    beta_rank_min = model.n_controls
    max_step_residual = 0.0

    def stage(t: float, state: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        nonlocal n_warnings, beta_rank_min, max_step_residual
        try:
            s = synth.sample(state)
        except DegenerateStateError as exc:
            raise DegenerateStateError(
                f"{exc} [closed-loop stage at t = {t:.6f}; state dump: "
                f"{np.array2string(state, precision=6)}]") from exc
        ranks_seen.add(s.ranks)
        n_warnings += len(s.warnings)
        beta_rank_min = min(beta_rank_min, s.beta_rank)
        if s.residuals:
            max_step_residual = max(max_step_residual, max(s.residuals[:-1], default=0.0))
        u = s.alpha + s.beta @ v_schedule(t)
        return static @ state + np.tensordot(u, ctrl, axes=1) @ state, u

    times = np.empty(n_steps + 1)
    states = np.empty((n_steps + 1, dim), dtype=complex)
    ys = np.empty(n_steps + 1, dtype=complex)
    norms = np.empty(n_steps + 1)
    controls = np.empty((n_steps + 1, model.n_controls))

    for k in range(n_steps + 1):
        t = k * dt
        times[k] = t
        states[k] = xi
        norms[k] = np.linalg.norm(xi)
        ys[k] = np.vdot(xi, _coherence_matrix(model, t) @ xi)
        _check_norm(norms[k], t, norm_guard, "closed-loop integration")
        k1, u0 = stage(t, xi)
        controls[k] = u0
        if k == n_steps:
            break
        k2, _ = stage(t + dt / 2, xi + (dt / 2) * k1)
        k3, _ = stage(t + dt / 2, xi + (dt / 2) * k2)
        k4, _ = stage(t + dt, xi + dt * k3)
        xi = xi + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)

    return Trajectory(times, states, ys, norms, controls, {
        "mode": f"closed:{feedback}",
        "dt": dt,
        "model": model.name,
        "ranks_seen": sorted(ranks_seen),
        "synthesis_warnings": n_warnings,
        "beta_rank_min": beta_rank_min,
        "max_step1_residual": max_step_residual,
    })


def compare_decoupling(model_builder: Callable[[ModelParams], SystemModel],
                       g_values: Sequence[complex],
                       v_schedule: ControlSchedule,
                       xi0: Union[np.ndarray, str],
                       t_end: float,
                       dt: float = DEFAULT_DT,
                       mode: str = "open",
                       params: ModelParams = ModelParams(),
                       tolerance: float = 1e-4,
                       tol: float = 1e-9,
                       norm_guard: float = DEFAULT_NORM_GUARD,
                       feedback: str = "least_squares",
                       basis_builder: Optional[Callable[[SystemModel], InvariantBasis]] = None,
                       csv_path: Optional[str] = None,
                       keep_trajectories: bool = False) -> DecouplingReport:
    """Run one trajectory per interaction strength and compare |y| traces.

    g_values must contain 0 (the closed-system reference).  `mode` is
    "open" or "closed"; closed mode uses `feedback` ("least_squares" or
    "protective").  Reports the maximum absolute deviation of |y(t)|
    against the reference, per g, and passes when every deviation is within
    `tolerance`.
    """
    gs = [complex(g) for g in g_values]
    if not any(g == 0 for g in gs):
        raise ValueError("g_values must include 0 as the reference")

    runs: dict[complex, Trajectory] = {}
    runtimes: dict[complex, float] = {}
    for g in gs:
        model = model_builder(replace(params, g=g))
        start = _time.perf_counter()
        x0 = preset_state(model, xi0) if isinstance(xi0, str) else np.asarray(xi0)
        if mode == "open":
            traj = integrate_open_loop(model, v_schedule, x0, t_end, dt, norm_guard)
        elif mode == "closed":
            basis = basis_builder(model) if basis_builder is not None else None
            traj = integrate_closed_loop(model, v_schedule, x0, t_end, dt,
                                         basis=basis, tol=tol,
                                         norm_guard=norm_guard, feedback=feedback)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        runtimes[g] = _time.perf_counter() - start
        runs[g] = traj

    ref = runs[[g for g in gs if g == 0][0]]
    deviations = {g: float(np.abs(runs[g].abs_y - ref.abs_y).max()) for g in gs}
    report = DecouplingReport(
        g_values=tuple(gs),
        max_abs_deviation=deviations,
        norm_drift={g: runs[g].max_norm_drift for g in gs},
        runtimes=runtimes,
        tolerance=tolerance,
        passed=all(dev <= tolerance for g, dev in deviations.items() if g != 0),
        trajectories=runs if keep_trajectories else {},
    )
    if csv_path:
        _write_compare_csv(report, ref.times, {g: runs[g].abs_y for g in gs}, csv_path)
    return report


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def _atomic_write(path: str, text: str):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_trajectory_csv(traj: Trajectory, path: str):
    """Column order: t, re_y, im_y, abs_y, norm, then one column per channel."""
    n_ctrl = traj.controls_applied.shape[1]
    header = ["t", "re_y", "im_y", "abs_y", "norm"] + [f"u{j + 1}" for j in range(n_ctrl)]
    lines = [",".join(header)]
    for k in range(traj.times.size):
        row = [traj.times[k], traj.y[k].real, traj.y[k].imag,
               abs(traj.y[k]), traj.norm[k], *traj.controls_applied[k]]
        lines.append(",".join(f"{x:.15g}" for x in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def _write_compare_csv(report: DecouplingReport, times: np.ndarray,
                       abs_traces: dict, path: str):
    gs = list(report.g_values)
    header = ["t"] + [f"abs_y_g={g.real:g}" for g in gs] \
        + [f"dev_g={g.real:g}" for g in gs if g != 0]
    ref = abs_traces[[g for g in gs if g == 0][0]]
    lines = [",".join(header)]
    for k in range(times.size):
        row = [times[k]] + [abs_traces[g][k] for g in gs] \
            + [abs(abs_traces[g][k] - ref[k]) for g in gs if g != 0]
        lines.append(",".join(f"{x:.15g}" for x in row))
    _atomic_write(path, "\n".join(lines) + "\n")
