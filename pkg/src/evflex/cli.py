"""``evflex`` command line.

Every subcommand reads an optional flat JSON run configuration (see
``docs/example_config.json``); command-line flags override it. Exit codes:
0 success, 1 configuration error, 2 data error, 3 solver error.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import click

from . import __version__
from .departure import (
    DataError,
    read_sessions,
    read_u_samples,
    sessions_from_acn,
    u_from_sessions,
    write_sessions,
    write_u_samples,
)
from .evaluator import Method, RobustConfig
from .fleet import DEFAULT_DT, DEFAULT_FLEET, FleetSpec, load_fleet
from .optmodel import BackendUnavailable, BACKENDS, SolverConfig, SolverError
from .sim import (
    SIGNAL_KINDS,
    ScenarioTimeline,
    Scorecard,
    SimConfig,
    read_trace_rows,
    run_rolling,
    scaling_bench,
    score_trace,
    synthetic_scenario,
    timeline_from_sessions,
    write_score_table,
    write_trace,
)
from .sim import config_hash as _hash

logger = logging.getLogger("evflex")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Flat run configuration; every field maps one-to-one onto a JSON key."""

    fleet: Optional[str] = None  # fleet JSON; None = the built-in 50+50 case-study fleet
    sessions: Optional[str] = None  # normalized session CSV; None = synthetic scenario
    u_samples: Optional[str] = None  # u history CSV (m,u); None = synthetic history
    methods: Tuple[str, ...] = ("M1", "M2", "M3", "M4")
    gamma: float = 1.0
    epsilon: float = 0.02
    window: int = 20
    seeds: Tuple[int, ...] = (0,)
    n_intervals: int = 12
    dt_hours: float = DEFAULT_DT
    early_prob: float = 0.006
    history_lo: float = 0.8
    history_hi: float = 1.0
    alpha: float = 1.0
    signal: str = "uniform"
    gammas: Tuple[float, ...] = (1.0, 0.7, 0.3)
    counts: Tuple[int, ...] = (100, 200, 500, 1000)
    out_dir: str = "evflex-out"
    solver: str = "highs"
    time_limit: Optional[float] = None
    export_lp: Optional[str] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma <= 1.0 or any(not 0.0 <= g <= 1.0 for g in self.gammas):
            raise ConfigError("gamma must lie in [0, 1]")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if self.n_intervals < 1 or self.dt_hours <= 0:
            raise ConfigError("n_intervals must be >= 1 and dt_hours > 0")
        if not 0.0 <= self.early_prob <= 1.0:
            raise ConfigError("early_prob must lie in [0, 1]")
        if not 0.0 <= self.history_lo <= self.history_hi <= 1.0:
            raise ConfigError("need 0 <= history_lo <= history_hi <= 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError("alpha must lie in (0, 1]")
        if self.signal not in SIGNAL_KINDS:
            raise ConfigError(f"signal must be one of {SIGNAL_KINDS}")
        for m in self.methods:
            if m not in {x.value for x in Method}:
                raise ConfigError(f"unknown method {m!r}")
        if any(c < 1 for c in self.counts):
            raise ConfigError("counts must be positive")
        if self.time_limit is not None and self.time_limit <= 0:
            raise ConfigError("time_limit must be positive")
        for key in ("fleet", "sessions", "u_samples"):
            path = getattr(self, key)
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"{key}: file not found: {path}")

    @classmethod
    def from_dict(cls, doc: dict, base: Optional[Path] = None) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kw = dict(doc)
        for key in ("methods", "seeds", "gammas", "counts"):
            if key in kw:
                if not isinstance(kw[key], list):
                    raise ConfigError(f"{key} must be a list")
                kw[key] = tuple(kw[key])
        for key in ("fleet", "sessions", "u_samples", "out_dir", "export_lp"):
            if kw.get(key) is not None and base is not None and not Path(kw[key]).is_absolute():
                kw[key] = str(base / kw[key])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: Optional[str]) -> "RunConfig":
        if path is None:
            return cls()
        p = Path(path)
        try:
            doc = json.loads(p.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_dict(doc, p.parent)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("methods", "seeds", "gammas", "counts"):
            d[key] = list(d[key])
        return d

    @property
    def hash(self) -> str:
        return _hash(self.to_dict())

    def solver_config(self) -> SolverConfig:
        if self.solver not in BACKENDS:
            raise BackendUnavailable(
                f"solver backend {self.solver!r} is not available; set the 'solver' config key "
                f"(or --solver) to one of {sorted(BACKENDS)}"
            )
        return SolverConfig(backend=self.solver, time_limit=self.time_limit, export_dir=self.export_lp)

    def robust(self, gamma: Optional[float] = None) -> RobustConfig:
        return RobustConfig(self.gamma if gamma is None else gamma, self.epsilon, self.window)

    def sim_config(self, gamma: Optional[float] = None) -> SimConfig:
        return SimConfig(self.robust(gamma), self.alpha, self.signal, self.solver_config())

    def fleet_spec(self) -> FleetSpec:
        if self.fleet is None:
            return DEFAULT_FLEET
        try:
            return load_fleet(self.fleet)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"fleet file {self.fleet}: {exc}") from None

    def timeline(self, seed: int) -> ScenarioTimeline:
        spec = self.fleet_spec()
        if self.sessions is None:
            tl = synthetic_scenario(
                seed, spec, self.n_intervals, self.dt_hours, self.early_prob,
                history=(self.history_lo, self.history_hi), window=self.window,
            )
            if self.u_samples is not None:
                tl = replace(tl, u_history=tuple(read_u_samples(self.u_samples)[-self.window:]))
            return tl
        sessions = read_sessions(self.sessions)
        if self.u_samples is not None:
            history = read_u_samples(self.u_samples)[-self.window:]
        else:
            history = [s.value for s in u_from_sessions(sessions, spec.types, dt=self.dt_hours)][-self.window:]
        try:
            return timeline_from_sessions(sessions, spec.types, history, self.n_intervals, self.dt_hours, seed)
        except ValueError as exc:
            raise DataError(str(exc)) from None


# -- run helpers ------------------------------------------------------------


def _preamble(rc: RunConfig) -> List[str]:
    return [f"evflex {__version__}", f"config {rc.hash}"]


def _one_run(args) -> Tuple[str, int, Scorecard, object]:
    rc, method, seed, gamma = args
    trace = run_rolling(rc.timeline(seed), method, rc.sim_config(gamma))
    return method, seed, score_trace(trace), trace


def _run_many(rc: RunConfig, jobs: Sequence[Tuple[str, int, Optional[float]]], n_jobs: int):
    tasks = [(rc, m, s, g) for m, s, g in jobs]
    if n_jobs <= 1 or len(tasks) == 1:
        return [_one_run(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_one_run, tasks))


def _sum_cards(cards: Sequence[Scorecard]) -> Scorecard:
    return Scorecard(
        sum(c.ubc for c in cards), sum(c.lbc for c in cards),
        sum(c.oef for c in cards), sum(c.uef for c in cards),
    )


def _print_table(rows: Sequence[Tuple[str, Scorecard]]) -> None:
    click.echo(f"{'case':<12}{'UBC':>6}{'LBC':>6}{'OEF(MW)':>10}{'UEF(MW)':>10}")
    for case, sc in rows:
        click.echo(f"{case:<12}{sc.ubc:>6}{sc.lbc:>6}{sc.oef:>10.3f}{sc.uef:>10.3f}")


# -- click plumbing ---------------------------------------------------------


def _common(f):
    f = click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON run configuration.")(f)
    f = click.option("--seed", type=int, help="Run a single seed (overrides 'seeds').")(f)
    f = click.option("--jobs", type=int, default=1, show_default=True, help="Parallel runs.")(f)
    f = click.option("--solver", help="Solver backend (overrides 'solver').")(f)
    f = click.option("--time-limit", type=float, help="Per-solve time limit in seconds.")(f)
    f = click.option("--out-dir", type=click.Path(file_okay=False), help="Output directory.")(f)
    f = click.option("--export-lp", type=click.Path(file_okay=False), help="Write every model as an LP file here.")(f)
    return f


def _resolve(config_path, seed, solver, time_limit, out_dir, export_lp, **extra) -> RunConfig:
    rc = RunConfig.load(config_path)
    over = {k: v for k, v in extra.items() if v is not None}
    if seed is not None:
        over["seeds"] = (seed,)
    if solver is not None:
        over["solver"] = solver
    if time_limit is not None:
        over["time_limit"] = time_limit
    if out_dir is not None:
        over["out_dir"] = out_dir
    if export_lp is not None:
        over["export_lp"] = export_lp
    try:
        return replace(rc, **over)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _guard(fn):
    """Map library exceptions onto the documented exit codes."""

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except DataError as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(EXIT_DATA)
        except (SolverError, BackendUnavailable) as exc:
            click.echo(f"solver error: {exc}", err=True)
            sys.exit(EXIT_SOLVER)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@click.group()
@click.version_option(__version__, prog_name="evflex")
@click.option("-v", "--verbose", count=True, help="More logging (-v info, -vv debug).")
def main(verbose: int) -> None:
    """Real-time flexibility evaluation for EV aggregators."""
    level = logging.ERROR if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("source", type=click.Path(exists=True, dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(["csv", "acn"]), default="csv", show_default=True,
              help="Normalized session CSV or an ACN-Data JSON export.")
@_common
@_guard
def ingest(source, fmt, config_path, seed, jobs, solver, time_limit, out_dir, export_lp):
    """Validate and normalize a session file, then compute its u samples."""
    rc = _resolve(config_path, seed, solver, time_limit, out_dir, export_lp)
    spec = rc.fleet_spec()
    if fmt == "acn":
        try:
            doc = json.loads(Path(source).read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{source}: invalid JSON ({exc})") from None
        sessions = sessions_from_acn(doc, sorted(spec.types), spec.types, rc.dt_hours)
    else:
        sessions = read_sessions(source)
    samples = u_from_sessions(sessions, spec.types, dt=rc.dt_hours, solver=rc.solver_config())
    out = Path(rc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    p1 = write_sessions(sessions, out / "sessions.csv", _preamble(rc))
    p2 = write_u_samples(samples, out / "u_samples.csv", _preamble(rc))
    early = sum(s.left_early for s in sessions)
    click.echo(f"{len(sessions)} sessions ({early} early), {len(samples)} u samples")
    click.echo(f"wrote {p1}\nwrote {p2}")


@main.command()
@_common
@_guard
def simulate(config_path, seed, jobs, solver, time_limit, out_dir, export_lp):
    """Rolling simulation for every configured method and seed; writes traces and scores."""
    rc = _resolve(config_path, seed, solver, time_limit, out_dir, export_lp)
    results = _run_many(rc, [(m, s, None) for m in rc.methods for s in rc.seeds], jobs)
    out = Path(rc.out_dir)
    rows = []
    for method, s, card, trace in results:
        write_trace(trace, out, rc.hash)
        rows.append((f"{method}/seed{s}", card))
    path = write_score_table(rows, out / "scores.csv", rc.hash)
    _print_table(rows)
    click.echo(f"wrote {path}")


@main.command()
@_common
@_guard
def compare(config_path, seed, jobs, solver, time_limit, out_dir, export_lp):
    """Four-method scorecard, summed over seeds."""
    rc = _resolve(config_path, seed, solver, time_limit, out_dir, export_lp)
    methods = [m.value for m in Method]
    results = _run_many(rc, [(m, s, None) for m in methods for s in rc.seeds], jobs)
    rows = [(m, _sum_cards([c for mm, _, c, _ in results if mm == m])) for m in methods]
    path = write_score_table(rows, Path(rc.out_dir) / "compare.csv", rc.hash)
    _print_table(rows)
    click.echo(f"wrote {path}")


@main.command("gamma-sweep")
@click.option("--gammas", help="Comma-separated values (overrides 'gammas').")
@_common
@_guard
def gamma_sweep(gammas, config_path, seed, jobs, solver, time_limit, out_dir, export_lp):
    """M4 scorecard for each robustness parameter, summed over seeds."""
    extra = {}
    if gammas:
        try:
            extra["gammas"] = tuple(float(g) for g in gammas.split(","))
        except ValueError:
            raise ConfigError(f"--gammas: not a list of numbers: {gammas!r}") from None
    rc = _resolve(config_path, seed, solver, time_limit, out_dir, export_lp, **extra)
    results = _run_many(rc, [("M4", s, g) for g in rc.gammas for s in rc.seeds], jobs)
    rows = []
    per = len(rc.seeds)
    for i, g in enumerate(rc.gammas):
        cards = [c for _, _, c, _ in results[i * per:(i + 1) * per]]
        rows.append((f"gamma={g:g}", _sum_cards(cards)))
    path = write_score_table(rows, Path(rc.out_dir) / "gamma_sweep.csv", rc.hash)
    _print_table(rows)
    click.echo(f"wrote {path}")


SCALE_COLUMNS = ("evs", "vars", "binaries", "constraints", "build_s", "solve_s", "total_s", "objective_kw", "config")


@main.command()
@click.option("--counts", help="Comma-separated EV counts (overrides 'counts').")
@_common
@_guard
def scale(counts, config_path, seed, jobs, solver, time_limit, out_dir, export_lp):
    """Build and solve one robust model per fleet size; report model size and timing."""
    extra = {}
    if counts:
        try:
            extra["counts"] = tuple(int(c) for c in counts.split(","))
        except ValueError:
            raise ConfigError(f"--counts: not a list of integers: {counts!r}") from None
    rc = _resolve(config_path, seed, solver, time_limit, out_dir, export_lp, **extra)
    rows = scaling_bench(rc.counts, rc.robust(), rc.solver_config(), rc.seeds[0], rc.fleet_spec())
    out = Path(rc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "scale.csv"
    with path.open("w", newline="") as fh:
        for line in _preamble(rc):
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCALE_COLUMNS)
        for r in rows:
            w.writerow([r.count, r.vars, r.binaries, r.constraints, f"{r.build_seconds:.4f}",
                        f"{r.solve_seconds:.4f}", f"{r.seconds:.4f}", f"{r.objective:.6f}", rc.hash])
    click.echo(f"{'EVs':>6}{'binaries':>10}{'seconds':>10}")
    for r in rows:
        click.echo(f"{r.count:>6}{r.binaries:>10}{r.seconds:>10.3f}")
    click.echo(f"wrote {path}")


SERIES_COLUMNS = ("interval", "eval_lo", "eval_hi", "actual_lo", "actual_hi")


@main.command()
@click.argument("trace", type=click.Path(exists=True, dir_okay=False))
@_common
@_guard
def plot(trace, config_path, seed, jobs, solver, time_limit, out_dir, export_lp):
    """Turn an interval trace into a band-versus-actual series file (data only)."""
    rc = _resolve(config_path, seed, solver, time_limit, out_dir, export_lp)
    try:
        rows = read_trace_rows(trace)
    except (OSError, csv.Error) as exc:
        raise DataError(f"{trace}: {exc}") from None
    if not rows:
        raise DataError("empty trace")
    missing = [c for c in ("k", "eval_lo", "eval_hi", "actual_lo", "actual_hi") if c not in rows[0]]
    if missing:
        raise DataError(f"{trace}: not an interval trace (missing {', '.join(missing)})")
    src_hash = _trace_hash(trace)
    out = Path(out_dir) if out_dir else Path(trace).parent
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{Path(trace).stem}_series.csv"
    with path.open("w", newline="") as fh:
        fh.write(f"# evflex {__version__}\n# config {src_hash or rc.hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_COLUMNS)
        for r in rows:
            # the band evaluated at step k is for interval k + 1
            w.writerow([int(r["k"]) + 1] + [r[c] for c in SERIES_COLUMNS[1:]])
    click.echo(f"wrote {path}")


def _trace_hash(path: str) -> Optional[str]:
    with Path(path).open() as fh:
        for line in fh:
            if not line.startswith("#"):
                return None
            if line.startswith("# config "):
                return line.split()[2]
    return None


if __name__ == "__main__":  # pragma: no cover
    main()
