"""Configuration-driven command-line front end.

Subcommands: check (invariance/decouplability verdicts), dfs (protected
coherence discovery), synthesize-demo (feedback synthesis at one state),
simulate (single trajectory to CSV), compare (multi-strength decoupling
report).  Exit codes: 0 success/pass, 2 negative verdict or failed
comparison, 1 usage, configuration or numerical error.

The config file is a flat key = value format with [section] headers;
unknown keys are rejected with a line-anchored message.  Command-line
flags override file values.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import models as _models
from .invariance import (
    check_controller_necessary,
    check_open_loop_invariance,
    find_dfs_coherences,
    generate_ctilde,
)
from .geometry import kernel_dy_member
from .models import ModelParams
from .operators import commutator, span_membership
from .simulator import (
    ControlSchedule,
    NormGuardError,
    compare_decoupling,
    integrate_closed_loop,
    integrate_open_loop,
    preset_state,
    write_trajectory_csv,
)
from .synthesis import (
    DegenerateStateError,
    build_invariant_basis,
    synthesize_alpha_beta,
)

__all__ = ["main", "run_command", "RunConfig", "ConfigError", "demo_schedule"]

SCHEMA_VERSION = 1

MODEL_BUILDERS = {
    "one_qubit": _models.build_one_qubit,
    "two_qubit": _models.build_two_qubit,
    "electro_optic": _models.build_electrooptic,
    "ancilla": _models.build_ancilla_system,
    "restructured": _models.build_restructured,
}

_KNOWN_KEYS = {
    "model": {"name", "omega0", "omega_env", "g", "w", "j1", "j2", "env_levels", "n_sys"},
    "initial_state": {"preset", "amplitudes"},
    "schedule": {"kind", "channels", "values", "amplitudes", "frequencies", "phases"},
    "integrator": {"dt", "t_end", "norm_guard"},
    "tolerances": {"rank", "invariance", "decoupling"},
    "output": {"directory"},
}


class ConfigError(ValueError):
    """Malformed configuration; message carries file and line."""


@dataclass
class RunConfig:
    """Flattened run configuration with strict key checking."""

    model: str = "two_qubit"
    omega0: float = 1.0
    omega_env: float = 1.0
    g: complex = 10.0
    w: complex = 1.0
    j1: float = 1.0
    j2: float = 1.0
    env_levels: int = 3
    n_sys: int = 10
    state_preset: str = "dfs_pair"
    amplitudes: Optional[list[complex]] = None
    schedule_kind: str = "constant"
    channels: list[int] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    sin_amplitudes: list[float] = field(default_factory=list)
    frequencies: list[float] = field(default_factory=list)
    phases: list[float] = field(default_factory=list)
    dt: float = 1e-3
    t_end: float = 20.0
    norm_guard: float = 1e-4
    tol_rank: float = 1e-9
    tol_invariance: float = 1e-9
    tol_decoupling: float = 1e-4
    output_dir: str = "."

    def params(self) -> ModelParams:
        return ModelParams(omega0=self.omega0, omega_env=self.omega_env,
                           g=self.g, w=self.w, j1=self.j1, j2=self.j2,
                           env_levels=self.env_levels)


def parse_config_file(path: str) -> RunConfig:
    """Parse the flat key = value config with line-anchored errors."""
    cfg = RunConfig()
    section = None
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc

    def err(lineno, msg):
        raise ConfigError(f"{path}:{lineno}: {msg}")

    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _KNOWN_KEYS:
                err(lineno, f"unknown section [{section}]")
            continue
        if "=" not in line:
            err(lineno, "expected key = value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if section is None:
            err(lineno, "key outside any [section]")
        if key not in _KNOWN_KEYS[section]:
            err(lineno, f"unknown key {key!r} in section [{section}]")
        try:
            _apply_key(cfg, section, key, value)
        except (ValueError, TypeError) as exc:
            err(lineno, f"bad value for {key!r}: {exc}")
    _validate(cfg)
    return cfg


def _floats(value: str) -> list[float]:
    return [float(x) for x in value.split(",") if x.strip()]


def _apply_key(cfg: RunConfig, section: str, key: str, value: str):
    if section == "model":
        if key == "name":
            if value not in MODEL_BUILDERS:
                raise ValueError(f"unknown model {value!r}")
            cfg.model = value
        elif key == "env_levels":
            cfg.env_levels = int(value)
        elif key == "n_sys":
            cfg.n_sys = int(value)
        elif key in ("g", "w"):
            setattr(cfg, key, complex(value))
        else:
            setattr(cfg, key, float(value))
    elif section == "initial_state":
        if key == "preset":
            cfg.state_preset = value
        else:
            cfg.amplitudes = [complex(x) for x in value.split(",") if x.strip()]
    elif section == "schedule":
        if key == "kind":
            if value not in ("zero", "constant", "sinusoidal", "piecewise_constant"):
                raise ValueError(f"unknown schedule kind {value!r}")
            cfg.schedule_kind = value
        elif key == "channels":
            cfg.channels = [int(x) for x in value.split(",") if x.strip()]
        elif key == "values":
            cfg.values = _floats(value)
        elif key == "amplitudes":
            cfg.sin_amplitudes = _floats(value)
        elif key == "frequencies":
            cfg.frequencies = _floats(value)
        elif key == "phases":
            cfg.phases = _floats(value)
    elif section == "integrator":
        setattr(cfg, {"dt": "dt", "t_end": "t_end", "norm_guard": "norm_guard"}[key],
                float(value))
    elif section == "tolerances":
        setattr(cfg, f"tol_{key}", float(value))
    elif section == "output":
        cfg.output_dir = value


def _validate(cfg: RunConfig):
    if cfg.dt <= 0 or cfg.t_end <= 0:
        raise ConfigError("dt and t_end must be positive")
    for name in ("omega0", "omega_env", "j1", "j2", "dt", "t_end", "norm_guard"):
        if not np.isfinite(getattr(cfg, name)):
            raise ConfigError(f"parameter {name} must be finite")
    if not np.isfinite(cfg.g) or not np.isfinite(cfg.w):
        raise ConfigError("couplings g, w must be finite")


# ---------------------------------------------------------------------------
# experiment defaults
# ---------------------------------------------------------------------------

def demo_schedule(n_channels: int, kind: str) -> ControlSchedule:
    """The default drive presets.

    For the 24-channel restructured system the drive enters on channels
    1, 4, 7, 10 (the channels whose bare counterparts are the four
    single-qubit fields); for a 4-control model, on channel 1.
    """
    channels = [0, 3, 6, 9] if n_channels >= 24 else [0]
    if kind == "zero":
        return ControlSchedule.zero(n_channels)
    if kind == "constant":
        v = np.zeros(n_channels)
        v[channels] = 1.0
        return ControlSchedule.constant(v)
    if kind == "sinusoidal":
        amp = np.zeros(n_channels)
        freq = np.ones(n_channels)
        phase = np.zeros(n_channels)
        for i, ch in enumerate(channels):
            amp[ch] = 1.0
            freq[ch] = 1.0 + (i // 2)
            phase[ch] = (np.pi / 2) * (i % 2)
        return ControlSchedule.sinusoidal(amp, freq, phase)
    raise ValueError(f"unknown schedule preset {kind!r}")


def _schedule_from_config(cfg: RunConfig, n_channels: int) -> ControlSchedule:
    if not cfg.channels:
        return demo_schedule(n_channels, cfg.schedule_kind)
    idx = [c - 1 for c in cfg.channels]
    if any(i < 0 or i >= n_channels for i in idx):
        raise ConfigError(f"channel out of range 1..{n_channels}: {cfg.channels}")
    if cfg.schedule_kind == "zero":
        return ControlSchedule.zero(n_channels)
    if cfg.schedule_kind == "constant":
        v = np.zeros(n_channels)
        vals = cfg.values or [1.0] * len(idx)
        for i, ch in enumerate(idx):
            v[ch] = vals[i % len(vals)]
        return ControlSchedule.constant(v)
    if cfg.schedule_kind == "sinusoidal":
        amp = np.zeros(n_channels)
        freq = np.ones(n_channels)
        phase = np.zeros(n_channels)
        amps = cfg.sin_amplitudes or [1.0] * len(idx)
        freqs = cfg.frequencies or [1.0] * len(idx)
        phases = cfg.phases or [0.0] * len(idx)
        for i, ch in enumerate(idx):
            amp[ch] = amps[i % len(amps)]
            freq[ch] = freqs[i % len(freqs)]
            phase[ch] = phases[i % len(phases)]
        return ControlSchedule.sinusoidal(amp, freq, phase)
    raise ConfigError(f"schedule kind {cfg.schedule_kind!r} needs explicit breakpoints; "
                      "use the library API for piecewise schedules")


def _build_model(cfg: RunConfig):
    builder = MODEL_BUILDERS[cfg.model]
    if cfg.model == "electro_optic":
        return builder(cfg.n_sys, cfg.params())
    return builder(cfg.params())


def _initial_state(cfg: RunConfig, model) -> np.ndarray:
    if cfg.amplitudes is not None:
        xi = np.asarray(cfg.amplitudes, dtype=complex)
        if xi.size != model.dim:
            raise ConfigError(f"initial state needs {model.dim} amplitudes, "
                              f"got {xi.size}")
        n = np.linalg.norm(xi)
        if n == 0:
            raise ConfigError("initial state must be nonzero")
        return xi / n
    return preset_state(model, cfg.state_preset)


# ---------------------------------------------------------------------------
# report plumbing
# ---------------------------------------------------------------------------

class _Report:
    def __init__(self, cfg: RunConfig, title: str):
        self.lines: list[str] = [
            f"schema-version: {SCHEMA_VERSION}",
            f"report: {title}",
            f"tolerances: rank={cfg.tol_rank:g} invariance={cfg.tol_invariance:g} "
            f"decoupling={cfg.tol_decoupling:g}",
        ]
        self.cfg = cfg
        self.title = title

    def add(self, line: str = ""):
        self.lines.append(line)
        print(line)

    def write(self, filename: str):
        os.makedirs(self.cfg.output_dir, exist_ok=True)
        path = os.path.join(self.cfg.output_dir, filename)
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.lines) + "\n")
        os.replace(tmp, path)
        return path


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_check(cfg: RunConfig) -> int:
    model = _build_model(cfg)
    rep = _Report(cfg, f"check {cfg.model}")
    tol = cfg.tol_invariance

    C = model.coherence_op
    dist = generate_ctilde(C, model.drift, list(model.controls), tol=cfg.tol_rank)
    rep.add(f"closure: rank={dist.rank} depth={dist.depth_reached} "
            f"converged={dist.converged}")

    open_loop = check_open_loop_invariance(dist, model.interaction, tol)
    rep.add(f"open-loop invariance: {open_loop.verdict}")
    necessary = check_controller_necessary(C, dist, model.interaction, tol)
    rep.add(f"controller necessity: {necessary.verdict}")

    ker = kernel_dy_member(model.interaction_field(), C, max(tol, 1e-10))
    rep.add(f"interaction field in ker(dy): {ker.member} "
            f"(relative witness norm {ker.residual:.3e})")

    exit_code = 2
    if cfg.model == "restructured":
        gens = list(model.controls)
        worst = 0.0
        for g_op in gens:
            br = commutator(g_op, model.interaction)
            m = span_membership(br, gens, cfg.tol_rank)
            worst = max(worst, m.residual_norm / max(br.norm(), 1e-300))
        closes = worst <= 1e-9
        rep.add(f"control brackets with interaction close into the control span: "
                f"{closes} (worst relative residual {worst:.3e})")
        if closes and ker.member and necessary.verdict != "necessary_failed":
            rep.add("VERDICT: DECOUPLABLE (controlled sufficiency conditions hold)")
            exit_code = 0
        else:
            rep.add("VERDICT: NOT DECOUPLABLE")
    elif open_loop.verdict == "invariant":
        rep.add("VERDICT: INVARIANT (open loop, immune without controls)")
        exit_code = 0
    elif necessary.verdict == "necessary_failed":
        rep.add("VERDICT: NOT DECOUPLABLE: [C, H_SE] != 0 or closure escapes")
    else:
        rep.add("VERDICT: NOT OPEN-LOOP INVARIANT; controller necessary conditions "
                f"{'hold' if necessary.verdict != 'necessary_failed' else 'fail'}")

    rep.write(f"check_{cfg.model}.txt")
    return exit_code


def _cmd_dfs(cfg: RunConfig, n_qubits: int) -> int:
    rep = _Report(cfg, f"dfs n_qubits={n_qubits}")
    pairs, _ops = find_dfs_coherences(n_qubits, cfg.env_levels, cfg.tol_invariance,
                                      omega0=cfg.omega0, omega_env=cfg.omega_env)
    off_diag = [(a, b) for a, b in pairs if a != b]
    rep.add(f"protected coherence pairs ({len(pairs)} total, "
            f"{len(off_diag)} off-diagonal):")
    for a, b in pairs:
        rep.add(f"  ({a}, {b})")
    rep.write(f"dfs_{n_qubits}q.txt")
    return 0


def _cmd_synthesize_demo(cfg: RunConfig, lift: bool) -> int:
    if cfg.model != "restructured":
        print("synthesize-demo requires --model restructured", file=sys.stderr)
        return 1
    model = _build_model(cfg)
    basis = build_invariant_basis(model, lift_complement=lift, tol=cfg.tol_rank)
    xi = _initial_state(cfg, model)
    rep = _Report(cfg, "synthesize-demo")
    try:
        sample = synthesize_alpha_beta(xi, model, basis, cfg.tol_rank)
    except DegenerateStateError as exc:
        rep.add(f"DEGENERATE STATE: {exc}")
        rep.write("synthesize_demo.txt")
        return 1
    K, q, r = sample.ranks
    rep.add(f"ranks: K={K} q={q} r={r}")
    rep.add(f"beta rank: {sample.beta_rank} / {model.n_controls}")
    rep.add("least-squares residuals (complement columns, then drift):")
    for i, res in enumerate(sample.residuals):
        label = f"column {i + 1}" if i < q else "alpha"
        rep.add(f"  {label}: {res:.6e}")
    rep.add(f"max |alpha| = {np.abs(sample.alpha).max():.6e}, "
            f"max |beta| = {np.abs(sample.beta).max():.6e}")
    for w in sample.warnings:
        rep.add(f"warning: {w}")
    rep.write("synthesize_demo.txt")
    return 0


def _cmd_simulate(cfg: RunConfig, mode: str, feedback: str, lift: bool,
                  out_csv: Optional[str]) -> int:
    model = _build_model(cfg)
    xi0 = _initial_state(cfg, model)
    schedule = _schedule_from_config(cfg, model.n_controls)
    rep = _Report(cfg, f"simulate {cfg.model} mode={mode}")
    try:
        if mode == "open":
            traj = integrate_open_loop(model, schedule, xi0, cfg.t_end, cfg.dt,
                                       cfg.norm_guard)
        else:
            basis = None
            if feedback == "least_squares":
                basis = build_invariant_basis(model, lift_complement=lift,
                                              tol=cfg.tol_rank)
            traj = integrate_closed_loop(model, schedule, xi0, cfg.t_end, cfg.dt,
                                         basis=basis, tol=cfg.tol_rank,
                                         norm_guard=cfg.norm_guard, feedback=feedback)
    except (NormGuardError, DegenerateStateError) as exc:
        rep.add(f"ABORTED: {exc}")
        rep.write("simulate_report.txt")
        return 1
    rep.add(f"steps: {traj.times.size - 1}, dt={cfg.dt:g}, t_end={cfg.t_end:g}")
    rep.add(f"|y| range: [{traj.abs_y.min():.6f}, {traj.abs_y.max():.6f}]")
    rep.add(f"max norm drift: {traj.max_norm_drift:.3e}")
    os.makedirs(cfg.output_dir, exist_ok=True)
    csv_path = os.path.join(cfg.output_dir, out_csv or f"trajectory_{cfg.model}.csv")
    write_trajectory_csv(traj, csv_path)
    rep.add(f"trajectory written: {csv_path}")
    rep.write("simulate_report.txt")
    return 0


def _cmd_compare(cfg: RunConfig, g_list: list[complex], mode: str, feedback: str,
                 lift: bool, out_csv: Optional[str]) -> int:
    if cfg.model == "electro_optic":
        print("compare supports the spin-boson models", file=sys.stderr)
        return 1
    builder = MODEL_BUILDERS[cfg.model]
    rep = _Report(cfg, f"compare {cfg.model} mode={mode} g={g_list}")
    os.makedirs(cfg.output_dir, exist_ok=True)
    csv_path = os.path.join(cfg.output_dir, out_csv or f"compare_{cfg.model}.csv")

    def probe_model(params):
        return builder(params)

    schedule = _schedule_from_config(cfg, probe_model(cfg.params()).n_controls)
    basis_builder = None
    if mode == "closed" and feedback == "least_squares":
        basis_builder = lambda m: build_invariant_basis(m, lift_complement=lift,
                                                        tol=cfg.tol_rank)
    try:
        report = compare_decoupling(
            probe_model, g_list, schedule, cfg.state_preset, cfg.t_end, cfg.dt,
            mode=mode, params=cfg.params(), tolerance=cfg.tol_decoupling,
            tol=cfg.tol_rank, norm_guard=cfg.norm_guard, feedback=feedback,
            basis_builder=basis_builder, csv_path=csv_path)
    except (NormGuardError, DegenerateStateError) as exc:
        rep.add(f"ABORTED: {exc}")
        rep.write("compare_report.txt")
        return 1
    for g in report.g_values:
        rep.add(f"g={g.real:g}: max |y| deviation "
                f"{report.max_abs_deviation[g]:.6e}, "
                f"norm drift {report.norm_drift[g]:.3e}, "
                f"runtime {report.runtimes[g]:.1f}s")
    if report.passed:
        rep.add(f"PASS max deviation < tol ({cfg.tol_decoupling:g})")
    else:
        worst = max(v for g, v in report.max_abs_deviation.items() if g != 0)
        rep.add(f"FAIL max deviation {worst:.6e} >= tol ({cfg.tol_decoupling:g})")
    rep.add(f"csv written: {csv_path}")
    rep.write("compare_report.txt")
    return 0 if report.passed else 2


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qdecouple",
        description="Geometric decoherence control: invariance checks, protected-"
                    "coherence discovery, feedback synthesis and simulation.")
    parser.add_argument("--config", help="flat key = value config file")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--model", choices=sorted(MODEL_BUILDERS))
        p.add_argument("--g", help="interaction strength (complex ok)")
        p.add_argument("--env-levels", type=int, dest="env_levels")
        p.add_argument("--output-dir", dest="output_dir")
        p.add_argument("--tolerance-rank", type=float, dest="tol_rank")
        p.add_argument("--tolerance-invariance", type=float, dest="tol_invariance")
        p.add_argument("--tolerance-decoupling", type=float, dest="tol_decoupling")

    p_check = sub.add_parser("check", help="invariance and decouplability verdicts")
    common(p_check)

    p_dfs = sub.add_parser("dfs", help="protected coherence pairs under collective dephasing")
    common(p_dfs)
    p_dfs.add_argument("--qubits", type=int, default=2)

    p_syn = sub.add_parser("synthesize-demo", help="feedback synthesis at one state")
    common(p_syn)
    p_syn.add_argument("--state", dest="state_preset")
    p_syn.add_argument("--lift-complement", action="store_true")

    p_sim = sub.add_parser("simulate", help="single trajectory to CSV")
    common(p_sim)
    p_sim.add_argument("--mode", choices=["open", "closed"], default="open")
    p_sim.add_argument("--feedback", choices=["least_squares", "protective"],
                       default="least_squares")
    p_sim.add_argument("--lift-complement", action="store_true")
    p_sim.add_argument("--schedule", dest="schedule_kind",
                       choices=["zero", "constant", "sinusoidal"])
    p_sim.add_argument("--state", dest="state_preset")
    p_sim.add_argument("--dt", type=float)
    p_sim.add_argument("--t-end", type=float, dest="t_end")
    p_sim.add_argument("--out", help="trajectory CSV filename")

    p_cmp = sub.add_parser("compare", help="decoupling comparison across strengths")
    common(p_cmp)
    p_cmp.add_argument("--mode", choices=["open", "closed"], default="closed")
    p_cmp.add_argument("--feedback", choices=["least_squares", "protective"],
                       default="least_squares")
    p_cmp.add_argument("--lift-complement", action="store_true")
    p_cmp.add_argument("--schedule", dest="schedule_kind",
                       choices=["zero", "constant", "sinusoidal"])
    p_cmp.add_argument("--state", dest="state_preset")
    p_cmp.add_argument("--dt", type=float)
    p_cmp.add_argument("--t-end", type=float, dest="t_end")
    p_cmp.add_argument("--out", help="comparison CSV filename")
    return parser


def _merge_flags(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    for attr in ("model", "env_levels", "output_dir", "tol_rank", "tol_invariance",
                 "tol_decoupling", "schedule_kind", "state_preset", "dt", "t_end"):
        val = getattr(args, attr, None)
        if val is not None:
            setattr(cfg, attr, val)
    g_flag = getattr(args, "g", None)
    if g_flag is not None and "," not in g_flag:
        cfg.g = complex(g_flag)
    return cfg


def run_command(argv: Optional[list[str]] = None) -> int:
    parser = _make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses exit code 2 for usage errors; 2 is reserved for
        # negative verdicts here, so usage problems map to 1
        return 0 if exc.code == 0 else 1
    try:
        cfg = parse_config_file(args.config) if args.config else RunConfig()
        cfg = _merge_flags(cfg, args)
        _validate(cfg)

        if args.command == "check":
            return _cmd_check(cfg)
        if args.command == "dfs":
            return _cmd_dfs(cfg, args.qubits)
        if args.command == "synthesize-demo":
            cfg.model = "restructured"
            return _cmd_synthesize_demo(cfg, args.lift_complement)
        if args.command == "simulate":
            return _cmd_simulate(cfg, args.mode, args.feedback,
                                 args.lift_complement, args.out)
        if args.command == "compare":
            g_flag = args.g or "0,10"
            g_list = [complex(x) for x in g_flag.split(",") if x.strip()]
            return _cmd_compare(cfg, g_list, args.mode, args.feedback,
                                args.lift_complement, args.out)
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, NormGuardError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 1


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
