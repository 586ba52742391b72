"""Experiment harness: config parsing, presets, runs, sweeps, CSV artifacts.

Configs are flat `key = value` documents with `#` comments. A `preset` key
loads the named experiment's defaults, which individual keys then override.
All real numbers are written to CSV with round-trip precision, and reruns
with the same seed reproduce every artifact byte for byte.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O
failure. FLOCKSEL_THREADS caps sweep parallelism (default 1).
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import (
    CommunicationKernel,
    RngStream,
    TargetState,
    bin_density,
    format_real,
    velocity_diameter,
)
from .control import Selector
from .cost import sweep_metrics
from .kinetic import InitialCondition, KineticConfig, run_kinetic, sample_initial
from .micro import ControlSpec, run_micro

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "parse_config",
    "run_experiment",
    "run_sweep",
    "main",
]

SNAPSHOT_MAX_ROWS = 10_000

# rng namespaces shared with the solvers (0 = initial sampling) plus the
# harness's own (3 = snapshot subsampling).
_INIT_NS = 0
_SNAP_NS = 3


class ConfigError(ValueError):
    """Carries every violation found in a config document."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class ExperimentConfig:
    solver: str = "kinetic"
    n: int = 64
    n_samples: int = 50_000
    scale: float = 1.0
    dt: float = 0.01
    T: float = 4.0
    epsilon: float | None = None  # kinetic; defaults to dt
    gamma: float = 10.0
    control: str = "none"
    kappa: float = 1.0
    selector_spec: str = "none"
    target: tuple = (1.0, 1.0)
    init_center: tuple = (0.0, 0.0)
    init_variance: float = 1.0
    init_velocity: str = "circle:5"
    seed: int = 0
    output_dir: str = "out"
    snapshot_stride: int = 0
    density_grid: tuple | None = None  # (xmin, xmax, ymin, ymax, nx, ny)

    @property
    def effective_epsilon(self) -> float:
        return self.dt if self.epsilon is None else self.epsilon

    @property
    def effective_n_samples(self) -> int:
        return max(1, round(self.n_samples / self.scale))


# Paper-scale experiment defaults; `scale = 10` gives the desk-scale run.
_PRESET_BASE = {
    "solver": "kinetic",
    "n_samples": "500000",
    "scale": "10",
    "dt": "0.01",
    "T": "4",
    "gamma": "10",
    "target": "1,1",
    "init_center": "0,0",
    "init_variance": "1",
    "init_velocity": "circle:5",
}

PRESETS = {
    "uncontrolled": {**_PRESET_BASE, "control": "none", "selector": "none"},
    "test1a": {**_PRESET_BASE, "control": "filtered", "selector": "ball:5", "kappa": "0.25"},
    "test1b": {**_PRESET_BASE, "control": "pointwise", "selector": "ball:5", "kappa": "0.25"},
    # Variational stabilization; kappa per the figure caption (the body text
    # also mentions 2, available as an override).
    "var_filtered": {**_PRESET_BASE, "control": "filtered", "selector": "var:2.5:40:512", "kappa": "0.25"},
    "var_pointwise": {**_PRESET_BASE, "control": "pointwise", "selector": "var:2.5:40:512", "kappa": "0.25"},
}

_KNOWN_KEYS = {
    "preset", "solver", "n", "n_samples", "scale", "dt", "T", "epsilon",
    "gamma", "control", "kappa", "selector", "target", "init_center",
    "init_variance", "init_velocity", "seed", "output_dir",
    "snapshot_stride", "density_grid",
}


def _parse_float(value):
    return float(value)


def _parse_int(value):
    f = float(value)
    i = int(round(f))
    if abs(f - i) > 1e-9:
        raise ValueError("not an integer")
    return i


def _parse_vector(value):
    parts = [p.strip() for p in value.split(",")]
    if len(parts) != 2:
        raise ValueError("expected two comma-separated components")
    return tuple(float(p) for p in parts)


def _parse_selector_spec(value):
    """Grammar: all | none | ball:R | var:RHO:L:M."""
    parts = value.split(":")
    kind = parts[0]
    if kind in ("all", "none"):
        if len(parts) != 1:
            raise ValueError(f"selector {kind!r} takes no parameters")
    elif kind == "ball":
        if len(parts) != 2:
            raise ValueError("ball selector is ball:R")
        if not float(parts[1]) > 0:
            raise ValueError("ball radius must be positive")
    elif kind == "var":
        if len(parts) != 4:
            raise ValueError("variational selector is var:RHO:L:M")
        if not float(parts[1]) > 0:
            raise ValueError("variational radius must be positive")
        if _parse_int(parts[2]) < 1 or _parse_int(parts[3]) < 1:
            raise ValueError("variational selector needs L >= 1 and M >= 1")
    else:
        raise ValueError(f"unknown selector kind {kind!r}")
    return value


def _parse_init_velocity(value):
    parts = value.split(":")
    if parts[0] == "circle" and len(parts) == 2:
        if float(parts[1]) < 0:
            raise ValueError("circle radius must be nonnegative")
        return value
    if parts[0] == "point" and len(parts) == 2:
        _parse_vector(parts[1])
        return value
    raise ValueError("init_velocity is circle:R or point:vx,vy")


def _parse_density_grid(value):
    if value == "none":
        return None
    try:
        bounds_s, bins_s = value.split(":")
        xmin, xmax, ymin, ymax = (float(p) for p in bounds_s.split(","))
        nx, ny = (_parse_int(p) for p in bins_s.split(","))
    except ValueError:
        raise ValueError("density_grid is xmin,xmax,ymin,ymax:nx,ny or none") from None
    if not (xmax > xmin and ymax > ymin):
        raise ValueError("density_grid bounds must span a nondegenerate box")
    if nx < 1 or ny < 1:
        raise ValueError("density_grid bin counts must be positive")
    return (xmin, xmax, ymin, ymax, nx, ny)


def _choice(options):
    def parse(value):
        if value not in options:
            raise ValueError(f"expected one of {sorted(options)}, got {value!r}")
        return value
    return parse


def _positive(parse, label):
    def inner(value):
        out = parse(value)
        if not out > 0:
            raise ValueError(f"{label} must be positive")
        return out
    return inner


def _nonnegative(parse, label):
    def inner(value):
        out = parse(value)
        if out < 0:
            raise ValueError(f"{label} must be nonnegative")
        return out
    return inner


_PARSERS = {
    "solver": ("solver", _choice({"micro", "kinetic"})),
    "n": ("n", _positive(_parse_int, "n")),
    "n_samples": ("n_samples", _positive(_parse_int, "n_samples")),
    "scale": ("scale", _positive(_parse_float, "scale")),
    "dt": ("dt", _positive(_parse_float, "dt")),
    "T": ("T", _positive(_parse_float, "T")),
    "epsilon": ("epsilon", _positive(_parse_float, "epsilon")),
    "gamma": ("gamma", _nonnegative(_parse_float, "gamma")),
    "control": ("control", _choice({"none", "filtered", "pointwise"})),
    "kappa": ("kappa", _positive(_parse_float, "kappa")),
    "selector": ("selector_spec", _parse_selector_spec),
    "target": ("target", _parse_vector),
    "init_center": ("init_center", _parse_vector),
    "init_variance": ("init_variance", _positive(_parse_float, "init_variance")),
    "init_velocity": ("init_velocity", _parse_init_velocity),
    "seed": ("seed", _nonnegative(_parse_int, "seed")),
    "output_dir": ("output_dir", str),
    "snapshot_stride": ("snapshot_stride", _nonnegative(_parse_int, "snapshot_stride")),
    "density_grid": ("density_grid", _parse_density_grid),
}


def parse_config(text: str) -> ExperimentConfig:
    """Parse and fully validate a config document.

    Every violation is collected (with its line number) before raising, so
    a broken file reports all of its problems at once.
    """
    violations = []
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            violations.append(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _KNOWN_KEYS:
            violations.append(f"line {lineno}: unknown key {key!r}")
            continue
        if not value:
            violations.append(f"line {lineno}: empty value for {key!r}")
            continue
        entries[key] = (value, lineno)

    merged = {}
    if "preset" in entries:
        name, pline = entries.pop("preset")
        preset = PRESETS.get(name)
        if preset is None:
            violations.append(
                f"line {pline}: unknown preset {name!r} (have {sorted(PRESETS)})"
            )
        else:
            merged.update({k: (v, pline) for k, v in preset.items()})
    # An explicit sample count is taken literally unless the user also
    # scales; otherwise the preset's desk-scale divisor would surprise.
    if "n_samples" in entries and "scale" not in entries:
        merged.pop("scale", None)
    merged.update(entries)

    fields = {}
    lines = {}
    for key, (value, lineno) in merged.items():
        field_name, parser = _PARSERS[key]
        try:
            fields[field_name] = parser(value)
            lines[field_name] = lineno
        except ValueError as err:
            violations.append(f"line {lineno}: bad value for {key!r}: {err}")

    cfg = ExperimentConfig(**fields)

    if cfg.solver == "kinetic" and cfg.dt > cfg.effective_epsilon:
        lineno = lines.get("dt", lines.get("epsilon", 0))
        violations.append(
            f"line {lineno}: dt = {cfg.dt} exceeds epsilon = "
            f"{cfg.effective_epsilon}; positivity requires dt <= epsilon"
        )
    if cfg.T < cfg.dt:
        violations.append(
            f"line {lines.get('T', 0)}: horizon T = {cfg.T} is shorter than dt = {cfg.dt}"
        )
    ratio = cfg.T / cfg.dt
    if abs(ratio - round(ratio)) > 1e-9 * max(1.0, abs(ratio)):
        violations.append(
            f"line {lines.get('T', 0)}: T/dt = {ratio} does not round to an integer step count"
        )

    if violations:
        raise ConfigError(violations)
    return cfg


def build_selector(cfg: ExperimentConfig) -> Selector:
    parts = cfg.selector_spec.split(":")
    kind = parts[0]
    if kind in ("all", "none"):
        return Selector(kind=kind)
    if kind == "ball":
        return Selector(kind="ball", radius=float(parts[1]))
    return Selector(
        kind="variational",
        radius=float(parts[1]),
        intervals=int(parts[2]),
        candidates=int(parts[3]),
    )


def build_control(cfg: ExperimentConfig) -> ControlSpec:
    return ControlSpec(
        mode=cfg.control,
        kappa=cfg.kappa,
        target=TargetState(np.asarray(cfg.target)),
        selector=build_selector(cfg),
    )


def build_initial(cfg: ExperimentConfig) -> InitialCondition:
    kind, _, param = cfg.init_velocity.partition(":")
    if kind == "circle":
        return InitialCondition(
            center=cfg.init_center,
            variance=cfg.init_variance,
            velocity="uniform_circle",
            radius=float(param),
        )
    return InitialCondition(
        center=cfg.init_center,
        variance=cfg.init_variance,
        velocity="point",
        point=np.asarray([float(p) for p in param.split(",")]),
    )


class SnapshotWriter:
    """Observer emitting snap_<step>.csv (and density grids) on a stride.

    Snapshots above SNAPSHOT_MAX_ROWS are subsampled uniformly with a
    stream derived from the run seed, so artifacts stay deterministic.
    """

    def __init__(self, outdir: Path, cfg: ExperimentConfig, total_steps: int, rng: RngStream):
        self.outdir = outdir
        self.stride = cfg.snapshot_stride
        self.total_steps = total_steps
        self.rng = rng
        self.grid = cfg.density_grid

    def due(self, step: int) -> bool:
        if step in (0, self.total_steps):
            return True
        return self.stride > 0 and step % self.stride == 0

    def emit(self, step: int, e) -> None:
        idx = np.arange(e.n)
        if e.n > SNAPSHOT_MAX_ROWS:
            idx = np.sort(
                self.rng.derive(_SNAP_NS, step).choice(e.n, SNAPSHOT_MAX_ROWS, replace=False)
            )
        path = self.outdir / f"snap_{step}.csv"
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("id,x1,x2,v1,v2\n")
            for i in idx:
                f.write(
                    f"{i},{format_real(e.x[i, 0])},{format_real(e.x[i, 1])},"
                    f"{format_real(e.v[i, 0])},{format_real(e.v[i, 1])}\n"
                )
        if self.grid is not None:
            xmin, xmax, ymin, ymax, nx, ny = self.grid
            grid = bin_density(e, (xmin, xmax, ymin, ymax), nx, ny)
            grid.write_csv(self.outdir / f"density_{step}.csv")

    def __call__(self, step, t, e, report):
        if self.due(step):
            self.emit(step, e)


def _run_solver(cfg: ExperimentConfig, observers=(), initial_hook=None):
    """Run the configured solver and return its trajectory summary."""
    kernel = CommunicationKernel(cfg.gamma)
    spec = build_control(cfg)
    rng = RngStream(cfg.seed)
    ic = build_initial(cfg)
    if cfg.solver == "micro":
        initial = sample_initial(ic, cfg.n, rng.derive(_INIT_NS))
        if initial_hook is not None:
            initial_hook(initial)
        return run_micro(initial, spec, kernel, cfg.dt, cfg.T, observers, rng=rng)
    kcfg = KineticConfig(
        n_samples=cfg.effective_n_samples,
        epsilon=cfg.effective_epsilon,
        dt=cfg.dt,
        control=spec,
        kernel=kernel,
    )
    if initial_hook is not None:
        # Same derived stream the solver uses, hence the same ensemble.
        initial_hook(sample_initial(ic, kcfg.n_samples, rng.derive(_INIT_NS)))
    return run_kinetic(ic, kcfg, cfg.T, observers, rng=rng)


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run one experiment, write its artifacts, print the summary line."""
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    steps = round(cfg.T / cfg.dt)
    snapper = SnapshotWriter(outdir, cfg, steps, RngStream(cfg.seed))

    start = time.perf_counter()
    summary = _run_solver(
        cfg, observers=(snapper,), initial_hook=lambda e0: snapper.emit(0, e0)
    )
    runtime = time.perf_counter() - start

    trace = summary.cost
    a_final, c_metric = sweep_metrics(trace, cfg.kappa, cfg.T)
    vdiam = velocity_diameter(summary.final)
    trace.write_csv(outdir / "cost.csv")
    with open(outdir / "summary.csv", "w", encoding="utf-8", newline="\n") as f:
        f.write("A,C_T,velocity_diameter\n")
        f.write(f"{format_real(a_final)},{format_real(trace.total)},{format_real(vdiam)}\n")

    result = {
        "A": a_final,
        "C": c_metric,
        "C_T": trace.total,
        "velocity_diameter": vdiam,
        "steps": summary.steps,
        "runtime": runtime,
    }
    print(
        f"A={a_final!r} C_T={trace.total!r} velocity_diameter={vdiam!r} "
        f"steps={summary.steps} runtime={runtime:.3f}s"
    )
    return result


def _thread_cap() -> int:
    value = os.environ.get("FLOCKSEL_THREADS", "")
    if value.strip():
        return max(1, int(value))
    return 1


def _sweep_cell(cfg: ExperimentConfig, radius, kappa, seed):
    cell = replace(
        cfg, selector_spec=f"ball:{radius!r}", kappa=float(kappa), seed=int(seed)
    )
    try:
        summary = _run_solver(cell)
        a_final, c_metric = sweep_metrics(summary.cost, cell.kappa, cell.T)
        return (radius, kappa, seed, repr(a_final), repr(c_metric), repr(summary.cost.total), "ok")
    except Exception as err:  # recorded in-row; the sweep continues
        return (radius, kappa, seed, "", "", "", f"error:{type(err).__name__}")


def run_sweep(cfg: ExperimentConfig, radii, kappas, seeds) -> Path:
    """Grid of (R, kappa, seed) runs; one CSV row per cell, failures included."""
    if not (radii and kappas and seeds):
        raise ConfigError(["sweep needs nonempty R, kappa and seed lists"])
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    jobs = sorted((float(r), float(k), int(s)) for r in radii for k in kappas for s in seeds)
    workers = min(_thread_cap(), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda j: _sweep_cell(cfg, *j), jobs))
    else:
        rows = [_sweep_cell(cfg, *job) for job in jobs]
    rows.sort(key=lambda row: (row[0], row[1], row[2]))

    path = outdir / "sweep.csv"
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("R,kappa,seed,A,C,C_T,status\n")
        for r, k, s, a, c, ct, status in rows:
            f.write(f"{r!r},{k!r},{s},{a},{c},{ct},{status}\n")
    return path


def _load_config(path: str) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def _parse_list(value: str):
    return [p.strip() for p in value.split(",") if p.strip()]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="flocksel",
        description="Selectively controlled flocking experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a config file")
    p_run.add_argument("config")

    p_sweep = sub.add_parser("sweep", help="grid of (R, kappa, seed) runs")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--R", required=True, help="comma-separated ball radii")
    p_sweep.add_argument("--kappa", required=True, help="comma-separated penalizations")
    p_sweep.add_argument("--seeds", required=True, help="comma-separated seeds")

    p_preset = sub.add_parser("preset", help="run a named preset with overrides")
    p_preset.add_argument("name")
    p_preset.add_argument("overrides", nargs="*", help="key=value overrides")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            cfg = _load_config(args.config)
            run_experiment(cfg)
        elif args.command == "sweep":
            cfg = _load_config(args.config)
            path = run_sweep(
                cfg, _parse_list(args.R), _parse_list(args.kappa), _parse_list(args.seeds)
            )
            print(f"sweep written to {path}")
        else:
            text = f"preset = {args.name}\n" + "\n".join(args.overrides)
            cfg = parse_config(text)
            run_experiment(cfg)
    except ConfigError as err:
        for violation in err.violations:
            print(f"config error: {violation}", file=sys.stderr)
        return 2
    except ValueError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except RuntimeError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        print(f"i/o failure: {err}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
