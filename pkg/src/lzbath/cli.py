"""Command-line front end: sweeps, single trajectories, rate windows and QUAPI scans.

Configuration comes from an optional flat ``key = value`` file (``--config``)
overridden by command-line flags. Grids are written ``start:stop:count``
with an optional ``:lin`` or ``:log`` suffix (sweep speeds default to
logarithmic spacing), as comma-separated lists, or as single numbers.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis, neqb, quapi
from .model import BathParams, ModelParams, eigenstates

log = logging.getLogger("lzbath")

HEADER = ("v", "T", "theta", "omega_c", "gamma", "s", "engine", "initial",
          "probability", "dt", "k_max", "t_max", "status", "wall_ms")
ENGINES = ("neqb", "quapi")
CONVERGED = "converged"
BUDGET_EXCEEDED = "budget-exceeded"

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def sig9(x):
    """Round to the 9 significant digits used on output."""
    if x is None:
        return None
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return int(x)
    return float(f"{float(x):.9g}")


def parse_grid(key: str, text: str, *, log_default: bool = False) -> tuple[float, ...]:
    text = str(text).strip()
    try:
        if ":" in text:
            parts = text.split(":")
            if len(parts) not in (3, 4):
                raise ValueError("expected start:stop:count[:lin|log]")
            start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
            spacing = parts[3] if len(parts) == 4 else ("log" if log_default else "lin")
            if count < 1:
                raise ValueError("count must be >= 1")
            if spacing == "log":
                if start <= 0 or stop <= 0:
                    raise ValueError("log grids need positive bounds")
                values = np.geomspace(start, stop, count)
            elif spacing == "lin":
                values = np.linspace(start, stop, count)
            else:
                raise ValueError(f"unknown spacing {spacing!r}")
        else:
            values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(key, f"cannot parse grid {text!r} ({exc})") from None
    values = tuple(sig9(v) for v in values)
    if not values:
        raise ConfigError(key, "grid is empty")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError(key, "grid must be strictly increasing")
    return values


@dataclass(frozen=True)
class RunConfig:
    engine: str = "neqb"
    v_grid: tuple[float, ...] = (1.0,)
    theta_grid: tuple[float, ...] = (0.0,)
    s: float = 3.0
    gamma: float = 5e-4
    omega_c_grid: tuple[float, ...] = (5.0,)
    temperature_grid: tuple[float, ...] = (0.0,)
    initial: str = "both"
    dt: float | None = None
    k_max: int | None = None
    t_max: float | None = None
    tol: float = 1e-2
    neqb_tol: float = 1e-4
    times: tuple[float, ...] | None = None
    out: str | None = None
    format: str = "csv"
    workers: int = 0
    no_timing: bool = False

    @property
    def engines(self) -> tuple[str, ...]:
        return ENGINES if self.engine == "both" else (self.engine,)

    @property
    def initials(self) -> tuple[str, ...]:
        return neqb.INITIAL_STATES if self.initial == "both" else (self.initial,)

    def validate(self) -> "RunConfig":
        if self.engine not in ENGINES + ("both",):
            raise ConfigError("engine", f"must be neqb, quapi or both, got {self.engine!r}")
        if self.initial not in neqb.INITIAL_STATES + ("both",):
            raise ConfigError("initial", f"must be ground, excited or both, got {self.initial!r}")
        if self.format not in ("csv", "json"):
            raise ConfigError("format", f"must be csv or json, got {self.format!r}")
        _check(lambda: BathParams(s=self.s), "s")
        _check(lambda: BathParams(gamma=self.gamma), "gamma")
        for v in self.v_grid:
            _check(lambda: ModelParams(sweep_speed=v), "v-grid")
        for th in self.theta_grid:
            _check(lambda: ModelParams(theta=th), "theta")
        for wc in self.omega_c_grid:
            _check(lambda: BathParams(s=self.s, gamma=self.gamma, omega_c=wc), "omega-c")
        for temp in self.temperature_grid:
            _check(lambda: BathParams(s=self.s, gamma=self.gamma, temperature=temp), "temperature")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError("dt", "must be positive")
        if self.t_max is not None and not self.t_max > 0:
            raise ConfigError("t_max", "must be positive")
        if not self.tol > 0:
            raise ConfigError("tol", "must be positive")
        if "quapi" in self.engines:
            if self.tol < 1e-3:
                raise ConfigError("tol", "QUAPI convergence tolerance must be >= 1e-3")
            k = self.k_max if self.k_max is not None else 10
            if not 1 <= k <= quapi.K_MAX_CAP:
                raise ConfigError("k_max", f"must be in [1, {quapi.K_MAX_CAP}] for engine quapi, got {k}")
            try:
                quapi.check_memory(k)
            except quapi.MemoryBudgetError as exc:
                raise ConfigError("k_max", str(exc)) from None
        if self.workers < 0:
            raise ConfigError("workers", "must be >= 0")
        return self


def _check(build, key):
    try:
        build()
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None


# --- config assembly -------------------------------------------------------------

_KEYS = {
    "engine": str, "v_grid": "vgrid", "theta": "grid", "s": float, "gamma": float,
    "omega_c": "grid", "temperature": "grid", "initial": str, "dt": float, "k_max": int,
    "t_max": float, "tol": float, "neqb_tol": float, "t_grid": "grid", "times": "grid", "out": str,
    "format": str, "workers": int, "no_timing": "bool",
}
_FIELD = {"theta": "theta_grid", "omega_c": "omega_c_grid", "temperature": "temperature_grid",
          "t_grid": "temperature_grid"}


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected key = value, got {line!r}")
        key, value = (x.strip() for x in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _KEYS:
            raise ConfigError(key, "unknown configuration key")
        values[key] = value
    return values


def build_config(raw: dict[str, object]) -> RunConfig:
    kwargs = {}
    if raw.get("temperature") is not None and raw.get("t_grid") is not None:
        raise ConfigError("t_grid", "give either temperature or t-grid, not both")
    for key, value in raw.items():
        if value is None:
            continue
        kind = _KEYS.get(key)
        if kind is None:
            raise ConfigError(key, "unknown configuration key")
        name = _FIELD.get(key, key)
        try:
            if kind == "vgrid":
                kwargs[name] = parse_grid("v-grid", value, log_default=True)
            elif kind == "grid":
                kwargs[name] = parse_grid(key.replace("_", "-"), value)
            elif kind == "bool":
                kwargs[name] = value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes")
            else:
                kwargs[name] = kind(value)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(key, f"invalid value {value!r} ({exc})") from None
    return RunConfig(**kwargs).validate()


# --- sweep ---------------------------------------------------------------------

@dataclass(frozen=True)
class GridPoint:
    v: float
    temperature: float
    theta: float
    omega_c: float
    engine: str
    initial: str


def grid_points(cfg: RunConfig) -> list[GridPoint]:
    pts = [GridPoint(v, temp, th, wc, eng, ini)
           for v in cfg.v_grid for temp in cfg.temperature_grid for th in cfg.theta_grid
           for wc in cfg.omega_c_grid for eng in cfg.engines for ini in cfg.initials]
    return sorted(pts, key=_order)


def _order(pt: GridPoint):
    return (pt.v, pt.temperature, pt.theta, pt.omega_c, ENGINES.index(pt.engine),
            neqb.INITIAL_STATES.index(pt.initial))


def run_point(cfg: RunConfig, pt: GridPoint) -> dict:
    """Evaluate one grid point; failures become flagged rows, never values."""
    p = ModelParams(delta=1.0, sweep_speed=pt.v, theta=pt.theta)
    b = BathParams(s=cfg.s, gamma=cfg.gamma, omega_c=pt.omega_c, temperature=pt.temperature)
    row = {"v": pt.v, "T": pt.temperature, "theta": pt.theta, "omega_c": pt.omega_c,
           "gamma": cfg.gamma, "s": cfg.s, "engine": pt.engine, "initial": pt.initial,
           "probability": None, "dt": None, "k_max": None, "t_max": None,
           "status": BUDGET_EXCEEDED, "wall_ms": None}
    start = time.perf_counter()
    try:
        if pt.engine == "neqb":
            res = neqb.run_converged(p, b, pt.initial, prob_tol=cfg.neqb_tol,
                                     t_max_start=cfg.t_max or 50.0)
            row["t_max"] = res.t_max
            if res.converged:
                row["probability"], row["status"] = res.probability, CONVERGED
        else:
            opts = {}
            if cfg.dt is not None:
                opts["dt_start"] = cfg.dt
            if cfg.k_max is not None:
                opts["k_max_cap"] = cfg.k_max
            if cfg.t_max is not None:
                opts["t_max_start"] = cfg.t_max
            prob, cp, report = quapi.converge(p, b, pt.initial, cfg.tol, raise_on_failure=False, **opts)
            if report.converged:
                row.update(probability=prob, dt=cp.dt, k_max=cp.k_max, t_max=cp.t_max, status=CONVERGED)
            else:
                log.warning("QUAPI point %s not converged: %s", pt, report.reason)
    except Exception as exc:  # one failing point must not abort the sweep
        log.warning("grid point %s failed: %s", pt, exc)
    if not cfg.no_timing:
        row["wall_ms"] = 1000.0 * (time.perf_counter() - start)
    return {k: sig9(v) if isinstance(v, (float, int, np.floating, np.integer)) and not isinstance(v, bool) else v
            for k, v in row.items()}


def _run_point_args(args):
    return run_point(*args)


def run_sweep(cfg: RunConfig) -> list[dict]:
    """Evaluate every grid point and return rows in deterministic order."""
    cfg.validate()
    pts = grid_points(cfg)
    workers = cfg.workers or os.cpu_count() or 1
    if workers == 1 or len(pts) == 1:
        rows = [run_point(cfg, pt) for pt in pts]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(pts))) as pool:
            rows = list(pool.map(_run_point_args, [(cfg, pt) for pt in pts]))
    return rows


# --- output ----------------------------------------------------------------------

def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.9g}"
    return str(x)


def format_table(rows: list[dict], fmt: str = "csv", header=HEADER) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(row.get(k)) for k in header])
        return buf.getvalue()
    if fmt == "json":
        return json.dumps([{k: sig9(row.get(k)) if isinstance(row.get(k), float) else row.get(k)
                            for k in header} for row in rows], indent=1) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def emit(rows: list[dict], fmt: str = "csv", path: str | Path | None = None, header=HEADER) -> str:
    """Serialize rows as CSV or JSON; write to ``path`` (stdout when None)."""
    text = format_table(rows, fmt, header)
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)
    return text


_INT_KEYS = {"k_max"}
_STR_KEYS = {"engine", "initial", "status", "stage"}


def _parse_cell(key: str, text: str):
    if text == "":
        return None
    if key in _STR_KEYS:
        return text
    if key in _INT_KEYS:
        return int(text)
    return float(text)


def load_table(path: str | Path, fmt: str = "csv") -> list[dict]:
    """Inverse of :func:`emit`."""
    text = Path(path).read_text()
    if fmt == "json":
        return json.loads(text)
    reader = csv.DictReader(io.StringIO(text))
    return [{k: _parse_cell(k, v) for k, v in row.items()} for row in reader]


# --- subcommands -------------------------------------------------------------------

def _single_point(cfg: RunConfig) -> tuple[ModelParams, BathParams]:
    p = ModelParams(delta=1.0, sweep_speed=cfg.v_grid[0], theta=cfg.theta_grid[0])
    b = BathParams(s=cfg.s, gamma=cfg.gamma, omega_c=cfg.omega_c_grid[0], temperature=cfg.temperature_grid[0])
    return p, b


TRACE_HEADER = ("engine", "initial", "t", "p_ground", "r_x", "r_y", "r_z", "trace")


def cmd_trace(cfg: RunConfig) -> tuple[list[dict], tuple, int]:
    p, b = _single_point(cfg)
    rows = []
    for engine in cfg.engines:
        for initial in cfg.initials:
            if engine == "neqb":
                t_max = cfg.t_max or neqb.run_converged(p, b, initial, prob_tol=cfg.neqb_tol).t_max
                tr = neqb.run_protocol(p, b, initial, t_max)
                for t, r in zip(tr.times, tr.states):
                    rows.append({"engine": engine, "initial": initial, "t": sig9(t), "p_ground": sig9(0.5 * (1 + r[0])),
                                 "r_x": sig9(r[0]), "r_y": sig9(r[1]), "r_z": sig9(r[2]), "trace": 1.0})
            else:
                cp = quapi.ConvergenceParams.snapped(cfg.dt or 0.1, cfg.k_max or 5, cfg.t_max or 200.0, cfg.tol)
                n = cp.n_slices
                tr = quapi.propagate(p, b, cp, initial, record_every=max(1, n // 200))
                for t, rho in zip(tr.times, tr.rho):
                    g, _ = eigenstates(p, t)
                    pg = float(np.real(g.conj() @ rho @ g))
                    rows.append({"engine": engine, "initial": initial, "t": sig9(t), "p_ground": sig9(pg),
                                 "r_x": sig9(2 * pg - 1), "r_y": None, "r_z": None,
                                 "trace": sig9(np.real(np.trace(rho)))})
    return rows, TRACE_HEADER, EXIT_OK


WINDOW_HEADER = ("t", "gamma1")


def cmd_window(cfg: RunConfig) -> tuple[list[dict], tuple, int]:
    p, b = _single_point(cfg)
    t_grid = cfg.times or tuple(np.linspace(-60 * b.omega_c / p.sweep_speed, 60 * b.omega_c / p.sweep_speed, 1201))
    prof = analysis.window_profile(p, b, t_grid)
    summary = {"peaks": [sig9(x) for x in prof.peaks], "peak_gaps": [sig9(x) for x in prof.peak_gaps],
               "half_width": sig9(prof.half_width)}
    if b.temperature == 0:
        summary["xi"] = sig9(analysis.xi_weight(p, b))
    print(" ".join(f"{k}={v}" for k, v in summary.items()), file=sys.stderr)
    rows = [{"t": sig9(t), "gamma1": sig9(g)} for t, g in zip(prof.t, prof.gamma1)]
    return rows, WINDOW_HEADER, EXIT_OK


CONVERGE_HEADER = ("initial", "stage", "dt", "k_max", "t_max", "probability", "change", "wall_ms")


def cmd_converge(cfg: RunConfig) -> tuple[list[dict], tuple, int]:
    p, b = _single_point(cfg)
    rows, status = [], EXIT_OK
    for initial in cfg.initials:
        opts = {}
        if cfg.dt is not None:
            opts["dt_start"] = cfg.dt
        if cfg.k_max is not None:
            opts["k_max_cap"] = cfg.k_max
        if cfg.t_max is not None:
            opts["t_max_start"] = cfg.t_max
        prob, cp, report = quapi.converge(p, b, initial, cfg.tol, raise_on_failure=False, **opts)
        for r in report.rows:
            rows.append({"initial": initial, "stage": r.stage, "dt": sig9(r.dt), "k_max": r.k_max,
                         "t_max": sig9(r.t_max), "probability": sig9(r.probability),
                         "change": sig9(r.change), "wall_ms": None if cfg.no_timing else sig9(1000 * r.wall_time)})
        if report.converged:
            print(f"{initial}: probability={prob:.9g} dt={cp.dt:g} k_max={cp.k_max} t_max={cp.t_max:g}",
                  file=sys.stderr)
        else:
            print(f"{initial}: not converged ({report.reason})", file=sys.stderr)
            status = EXIT_PARTIAL
    return rows, CONVERGE_HEADER, status


def cmd_sweep(cfg: RunConfig) -> tuple[list[dict], tuple, int]:
    rows = run_sweep(cfg)
    status = EXIT_OK if all(r["status"] == CONVERGED for r in rows) else EXIT_PARTIAL
    return rows, HEADER, status


COMMANDS = {"sweep": cmd_sweep, "trace": cmd_trace, "window": cmd_window, "converge": cmd_converge}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lzbath", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="flat key = value configuration file")
    parser.add_argument("--engine", choices=ENGINES + ("both",))
    parser.add_argument("--s", type=str, help="spectral exponent")
    parser.add_argument("--gamma", type=str, help="coupling strength")
    parser.add_argument("--theta", help="coupling angle (radians) or grid")
    parser.add_argument("--omega-c", dest="omega_c", help="cut-off frequency or grid")
    parser.add_argument("--temperature", help="temperature or grid")
    parser.add_argument("--v-grid", dest="v_grid", help="sweep speeds, start:stop:count (log spacing by default)")
    parser.add_argument("--t-grid", dest="t_grid", help="temperature grid (same as a grid given to --temperature)")
    parser.add_argument("--times", help="time grid for the window command (default: the full window)")
    parser.add_argument("--initial", choices=neqb.INITIAL_STATES + ("both",))
    parser.add_argument("--tol", type=str, help="QUAPI probability tolerance")
    parser.add_argument("--dt", type=str, help="QUAPI starting slice width")
    parser.add_argument("--k-max", dest="k_max", type=str, help="QUAPI memory-length cap")
    parser.add_argument("--t-max", dest="t_max", type=str, help="starting protocol window")
    parser.add_argument("--out", help="output file (stdout when omitted)")
    parser.add_argument("--format", choices=("csv", "json"))
    parser.add_argument("--workers", type=str, help="worker processes (default: all cores)")
    parser.add_argument("--no-timing", dest="no_timing", action="store_true", default=None,
                        help="leave wall_ms empty for byte-reproducible output")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw: dict[str, object] = read_config_file(args.config) if args.config else {}
        for key in _KEYS:
            value = getattr(args, key, None)
            if value is not None:
                raw[key] = value
        cfg = build_config(raw)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    rows, header, status = COMMANDS[args.command](cfg)
    emit(rows, cfg.format, cfg.out, header)
    return status


if __name__ == "__main__":
    sys.exit(main())
