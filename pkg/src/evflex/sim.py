"""Rolling bid / clear / regulate simulation and scoring.

Timeline for each step ``k`` (bidding happens at the start of ``k``):

1. SOC intervals for the end of ``k`` from the band cleared for ``k``.
2. Evaluate the band for ``k+1`` from observable state only.
3. Clear it through the market stub.
4. Draw the regulation signal for ``k`` inside its cleared band.
5. Dispatch the signal across connected EVs.
6. Roll SOC forward, apply departures and arrivals for ``k+1``.
7. Post-hoc actual band for ``k+1``; append the realized u sample.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .departure import (
    DEFAULT_EPSILON,
    DEFAULT_WINDOW,
    SampleWindow,
    SessionRecord,
    build_ambiguity,
    compute_u,
)
from .evaluator import EvalInputs, Method, RobustConfig, build_m4_model, evaluate
from .fleet import (
    DEFAULT_DT,
    DEFAULT_FLEET,
    EvParams,
    EvState,
    FleetSpec,
    FlexibilityBand,
    ObservedEv,
    separable_band,
    next_soc,
    power_interval,
)
from .optmodel import ObjSense, OptModel, SolverConfig, SolverError, solve
from .socband import ClearedBand, SocInterval, estimate_soc_intervals, point_intervals

logger = logging.getLogger(__name__)

CROSS_TOL_KW = 1e-3  # one watt; exceedances below this are solver noise
CONTAIN_TOL = 1e-7


# -- scenario ---------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioTimeline:
    sessions: Tuple[SessionRecord, ...]
    types: Dict[str, EvParams]
    n_intervals: int = 12
    dt: float = DEFAULT_DT
    seed: int = 0
    u_history: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.n_intervals < 1:
            raise ValueError("need at least one interval")
        if self.dt <= 0:
            raise ValueError("interval duration must be positive")
        ids = [s.ev_id for s in self.sessions]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate ev_id in scenario")
        for s in self.sessions:
            if s.ev_type not in self.types:
                raise ValueError(f"session {s.ev_id}: unknown EV type {s.ev_type!r}")
            ev = self.types[s.ev_type]
            if not ev.e_min <= s.arrival_soc <= ev.e_max:
                raise ValueError(f"session {s.ev_id}: arrival SOC outside [{ev.e_min}, {ev.e_max}]")

    @property
    def intervals(self) -> List[int]:
        return list(range(self.n_intervals))


def synthetic_scenario(
    seed: int = 0,
    fleet: FleetSpec = DEFAULT_FLEET,
    n_intervals: int = 12,
    dt: float = DEFAULT_DT,
    early_prob: float = 0.006,
    soc_fraction: Tuple[float, float] = (0.0, 1.0),
    history: Tuple[float, float] = (0.8, 1.0),
    window: int = DEFAULT_WINDOW,
) -> ScenarioTimeline:
    """Case-study style scenario: the whole fleet plugged in at interval 0.

    Every EV reports a departure beyond the horizon; each one independently
    leaves early at the end of any interval with probability ``early_prob``
    (geometric hazard). Arrival SOCs are uniform over the given fraction of
    each EV's usable range. ``history`` bounds the pre-seeded u window.
    """
    rng = np.random.default_rng(seed)
    sessions = []
    for ev_id, params in fleet.expand():
        lo = params.e_min + soc_fraction[0] * (params.e_max - params.e_min)
        hi = params.e_min + soc_fraction[1] * (params.e_max - params.e_min)
        soc = float(rng.uniform(lo, hi))
        reported = n_intervals + 1 + int(rng.integers(0, 12))
        actual = reported
        for m in range(1, n_intervals + 1):
            if rng.random() < early_prob:
                actual = m
                break
        sessions.append(SessionRecord(ev_id, params.name, 0, reported, actual, soc))
    u_hist = tuple(float(x) for x in rng.uniform(history[0], history[1], size=window))
    return ScenarioTimeline(tuple(sessions), dict(fleet.types), n_intervals, dt, seed, u_hist)


def timeline_from_sessions(
    sessions: Sequence[SessionRecord],
    types: Dict[str, EvParams],
    u_history: Sequence[float],
    n_intervals: Optional[int] = None,
    dt: float = DEFAULT_DT,
    seed: int = 0,
) -> ScenarioTimeline:
    """Replay ingested sessions instead of sampling departures."""
    if n_intervals is None:
        n_intervals = max(s.actual_departure for s in sessions) - min(s.arrival for s in sessions)
    return ScenarioTimeline(tuple(sessions), dict(types), n_intervals, dt, seed, tuple(u_history))


# -- market and regulation stubs --------------------------------------------


@dataclass(frozen=True)
class MarketStub:
    """Clears ``alpha`` times the evaluated band (shrunk toward zero power)."""

    alpha: float = 1.0

    def __post_init__(self) -> None:
        if not 0 < self.alpha <= 1:
            raise ValueError("acceptance factor must lie in (0, 1]")

    def clear(self, k: int, band: FlexibilityBand) -> ClearedBand:
        lo = self.alpha * band.lower if band.lower < 0 else band.lower
        hi = self.alpha * band.upper if band.upper > 0 else band.upper
        return ClearedBand(k, lo, max(lo, hi))


SIGNAL_KINDS = ("uniform", "random-walk", "extreme-hold")


@dataclass
class RegulationSignalGen:
    kind: str = "uniform"
    seed: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)
    _state: float = field(init=False, default=0.5, repr=False)
    _side: float = field(init=False, default=0.0, repr=False)

    def __post_init__(self) -> None:
        if self.kind not in SIGNAL_KINDS:
            raise ValueError(f"unknown signal kind {self.kind!r}; choose from {SIGNAL_KINDS}")
        self._rng = np.random.default_rng([self.seed, 0x5EED])
        self._side = float(self._rng.integers(0, 2))

    def draw(self, band: ClearedBand) -> float:
        """Next regulation setpoint; always inside ``band``."""
        if self.kind == "uniform":
            frac = float(self._rng.random())
        elif self.kind == "random-walk":
            self._state = min(max(self._state + float(self._rng.normal(0.0, 0.25)), 0.0), 1.0)
            frac = self._state
        else:
            if self._rng.random() < 0.2:
                self._side = 1.0 - self._side
            frac = self._side
        value = band.p_lo + frac * (band.p_hi - band.p_lo)
        return min(max(value, band.p_lo), band.p_hi)


# -- dispatch ---------------------------------------------------------------


@dataclass(frozen=True)
class Dispatch:
    p_ch: Dict[str, float]
    p_dis: Dict[str, float]
    requested: float
    delivered: float
    clamped: bool


FleetEntry = Tuple[str, EvParams, float]


def _split(
    ranges: Sequence[Tuple[float, float]], ids: Sequence[str], p_total: float, solver: SolverConfig
) -> Dict[str, float]:
    """Least-deviation split of ``p_total`` around a capacity-proportional seed."""
    model = OptModel("dispatch")
    side = [hi if p_total >= 0 else -lo for lo, hi in ranges]
    total_cap = sum(side)
    ps, objective = [], {}
    for (lo, hi), cap, ev_id in zip(ranges, side, ids):
        seed_p = p_total * cap / total_cap if total_cap > 0 else 0.0
        p = model.add_var(f"p_{ev_id}", lower=lo, upper=hi)
        d = model.add_var(f"dev_{ev_id}")
        model.add_constraint({d: 1.0, p: -1.0}, ">=", -seed_p)
        model.add_constraint({d: 1.0, p: 1.0}, ">=", seed_p)
        ps.append(p)
        objective[d] = 1.0
    model.add_constraint({p: 1.0 for p in ps}, "=", p_total, "target")
    model.set_objective(objective, ObjSense.MIN)
    out = solve(model, solver)
    if not out.optimal:
        raise SolverError(f"dispatch split failed ({out.status.value})", out)
    return {
        ev_id: min(max(out[p], lo), hi) for p, (lo, hi), ev_id in zip(ps, ranges, ids)
    }


def dispatch(
    fleet: Sequence[FleetEntry],
    target: float,
    dt: float = DEFAULT_DT,
    intervals: Optional[Sequence[SocInterval]] = None,
    solver: Optional[SolverConfig] = None,
) -> Dispatch:
    """Split ``target`` kW across the fleet as close as possible to a proportional share.

    Each EV's operating region projects onto a net-power interval (with its
    end SOC kept inside the estimated interval when ``intervals`` are
    given), so the split is an LP over those intervals. A target the fleet
    cannot deliver is clamped to the deliverable range and flagged.
    """
    if not fleet:
        return Dispatch({}, {}, target, 0.0, target != 0.0)
    bounds = {}
    if intervals is not None:
        bounds = {iv.ev_id: (iv.e_lo - CONTAIN_TOL, iv.e_hi + CONTAIN_TOL) for iv in intervals}
    ranges, ids = [], []
    for ev_id, ev, soc in fleet:
        r = power_interval(ev, soc, dt, bounds.get(ev_id))
        if r is None:
            # Containment unattainable for this EV; fall back to its physical range.
            logger.warning("EV %s cannot stay inside its SOC interval; relaxing", ev_id)
            r = power_interval(ev, soc, dt)
        ranges.append(r)
        ids.append(ev_id)
    lo = sum(r[0] for r in ranges)
    hi = sum(r[1] for r in ranges)
    clamped = not (lo - 1e-9 <= target <= hi + 1e-9)
    achievable = min(max(target, lo), hi)
    if clamped:
        logger.warning(
            "regulation signal %.2f kW outside deliverable [%.2f, %.2f]; clamping", target, lo, hi
        )
    net = _split(ranges, ids, achievable, solver or SolverConfig())
    p_ch = {ev_id: max(p, 0.0) for ev_id, p in net.items()}
    p_dis = {ev_id: max(-p, 0.0) for ev_id, p in net.items()}
    delivered = sum(p_ch.values()) - sum(p_dis.values())
    return Dispatch(p_ch, p_dis, target, delivered, clamped)


# -- rolling simulation -----------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    robust: RobustConfig = RobustConfig()
    alpha: float = 1.0
    signal: str = "uniform"
    solver: SolverConfig = SolverConfig()


@dataclass(frozen=True)
class StepRecord:
    k: int
    cleared: ClearedBand  # as cleared by the market; the signal is drawn from it
    cleared_clamped: bool
    deliverable: ClearedBand  # cleared band intersected with what the fleet can do
    signal: float
    delivered: float
    dispatch_clamped: bool
    soc_start: Dict[str, float]
    p_ch: Dict[str, float]
    p_dis: Dict[str, float]
    soc_end: Dict[str, float]
    soc_intervals: Dict[str, Tuple[float, float]]
    evaluated_next: FlexibilityBand
    actual_next: FlexibilityBand
    virtual_next: FlexibilityBand
    u_next: float
    window_mean: float


@dataclass(frozen=True)
class SimulationTrace:
    method: Method
    config: SimConfig
    seed: int
    steps: Tuple[StepRecord, ...]
    types: Dict[str, EvParams]
    ev_types: Dict[str, str]
    dt: float
    elapsed: float = 0.0

    @property
    def evaluated(self) -> List[FlexibilityBand]:
        return [s.evaluated_next for s in self.steps]

    @property
    def actual(self) -> List[FlexibilityBand]:
        return [s.actual_next for s in self.steps]


class _World:
    """Ground truth of the simulation; only :meth:`observe` leaks to the aggregator."""

    def __init__(self, timeline: ScenarioTimeline) -> None:
        self.timeline = timeline
        self.states: Dict[str, EvState] = {}
        self.last_soc: Dict[str, float] = {}
        self._sessions = {s.ev_id: s for s in timeline.sessions}

    def advance_to(self, m: int) -> None:
        """Apply departures and arrivals so that ``states`` reflects interval ``m``."""
        for s in self.timeline.sessions:
            st = self.states.get(s.ev_id)
            if st is None and s.arrival == m:
                self.states[s.ev_id] = EvState(
                    s.ev_id, self.timeline.types[s.ev_type], s.arrival_soc, True,
                    s.reported_departure, s.actual_departure,
                )
                self.last_soc[s.ev_id] = s.arrival_soc
            elif st is not None and st.connected and s.actual_departure <= m:
                st.connected = False

    def observe(self) -> List[ObservedEv]:
        return [st.observed() for st in self.states.values() if st.connected]

    def present(self) -> List[Tuple[EvParams, float]]:
        return [(st.params, st.soc) for st in self.states.values() if st.connected]

    def scheduled(self, m: int) -> List[Tuple[EvParams, float]]:
        """Members had nobody left early; early leavers idle at their departure SOC."""
        return [
            (st.params, st.soc)
            for st in self.states.values()
            if self._sessions[st.ev_id].scheduled(m)
        ]


def _entries(obs: Sequence[ObservedEv]) -> List[FleetEntry]:
    return [(o.ev_id, o.params, o.soc) for o in obs]


def _eval_inputs(
    obs: Sequence[ObservedEv], intervals: Sequence[SocInterval], k_next: int,
    window: SampleWindow, cfg: RobustConfig, dt: float,
) -> EvalInputs:
    by_id = {iv.ev_id: iv for iv in intervals}
    members = [o for o in obs if o.reported_departure > k_next]
    return EvalInputs.build(
        [(o.ev_id, o.params) for o in members],
        [by_id[o.ev_id] for o in members],
        window.ambiguity(cfg.epsilon),
        dt,
    )


def run_rolling(
    timeline: ScenarioTimeline, method: Method | str, cfg: SimConfig = SimConfig()
) -> SimulationTrace:
    """Simulate ``timeline.n_intervals`` bidding steps for one evaluation method."""
    method = Method(method)
    t0 = time.perf_counter()
    dt = timeline.dt
    rc = cfg.robust
    market = MarketStub(cfg.alpha)
    signal = RegulationSignalGen(cfg.signal, timeline.seed)
    world = _World(timeline)
    window = SampleWindow(rc.window)
    window.extend(timeline.u_history or (1.0,))
    world.advance_to(0)

    # Bootstrap: the band for interval 0 is bid with SOC known exactly.
    obs = world.observe()
    boot = _eval_inputs(obs, point_intervals(_entries(obs)), 0, window, rc, dt)
    cleared = market.clear(0, evaluate(method, boot, rc, cfg.solver))

    steps = []
    for k in range(timeline.n_intervals):
        obs = world.observe()
        entries = _entries(obs)
        est = estimate_soc_intervals(entries, cleared, dt, cfg.solver)
        inputs = _eval_inputs(obs, est.intervals, k + 1, window, rc, dt)
        evaluated = evaluate(method, inputs, rc, cfg.solver)
        window_mean = inputs.ambiguity.mean
        next_cleared = market.clear(k + 1, evaluated)

        target = signal.draw(cleared)
        disp = dispatch(entries, target, dt, est.intervals, cfg.solver)
        soc_start = {e[0]: e[2] for e in entries}
        soc_end = {}
        for ev_id, ev, soc in entries:
            e_new = next_soc(ev, soc, disp.p_ch[ev_id], disp.p_dis[ev_id], dt)
            world.states[ev_id].soc = e_new
            soc_end[ev_id] = e_new

        world.advance_to(k + 1)
        actual = separable_band(world.present(), dt)
        scheduled = world.scheduled(k + 1)
        if len(scheduled) == len(world.present()):
            virtual = actual
        else:
            virtual = separable_band(scheduled, dt)
        u = compute_u(actual, virtual, k + 1)
        window.append(u)

        steps.append(
            StepRecord(
                k=k,
                cleared=cleared,
                cleared_clamped=est.clamped,
                deliverable=est.cleared,
                signal=target,
                delivered=disp.delivered,
                dispatch_clamped=disp.clamped,
                soc_start=soc_start,
                p_ch=disp.p_ch,
                p_dis=disp.p_dis,
                soc_end=soc_end,
                soc_intervals={iv.ev_id: (iv.e_lo, iv.e_hi) for iv in est.intervals},
                evaluated_next=evaluated,
                actual_next=actual,
                virtual_next=virtual,
                u_next=u.value,
                window_mean=window_mean,
            )
        )
        cleared = next_cleared

    ev_types = {s.ev_id: s.ev_type for s in timeline.sessions}
    return SimulationTrace(
        method, cfg, timeline.seed, tuple(steps), dict(timeline.types), ev_types, dt,
        time.perf_counter() - t0,
    )


# -- scoring ----------------------------------------------------------------


@dataclass(frozen=True)
class IntervalScore:
    k: int
    evaluated: FlexibilityBand
    actual: FlexibilityBand
    over: float  # kW
    under: float  # kW
    upper_cross: bool
    lower_cross: bool


@dataclass(frozen=True)
class Scorecard:
    ubc: int
    lbc: int
    oef: float  # MW
    uef: float  # MW
    intervals: Tuple[IntervalScore, ...] = ()

    def row(self) -> Tuple[int, int, float, float]:
        return self.ubc, self.lbc, self.oef, self.uef


def _pos(x: float) -> float:
    return x if x > CROSS_TOL_KW else 0.0


def score(evaluated: Sequence[FlexibilityBand], actual: Sequence[FlexibilityBand], first_k: int = 1) -> Scorecard:
    """Boundary-crossing counts and over/under-evaluated flexibility (MW) against post-hoc bands."""
    if len(evaluated) != len(actual):
        raise ValueError("evaluated and actual series differ in length")
    ubc = lbc = 0
    oef = uef = 0.0
    rows = []
    for i, (ev, act) in enumerate(zip(evaluated, actual)):
        up_over = _pos(ev.upper - act.upper)
        lo_over = _pos(act.lower - ev.lower)
        up_under = _pos(act.upper - ev.upper)
        lo_under = _pos(ev.lower - act.lower)
        ubc += up_over > 0
        lbc += lo_over > 0
        over, under = up_over + lo_over, up_under + lo_under
        oef += over
        uef += under
        rows.append(IntervalScore(first_k + i, ev, act, over, under, up_over > 0, lo_over > 0))
    return Scorecard(ubc, lbc, oef / 1000.0, uef / 1000.0, tuple(rows))


def score_trace(trace: SimulationTrace) -> Scorecard:
    return score(trace.evaluated, trace.actual, first_k=1)


# -- replay checks ----------------------------------------------------------


def replay_violations(trace: SimulationTrace) -> Dict[str, float]:
    """Worst SOC replay error (kWh) and worst signal excursion outside its cleared band (kW)."""
    soc_err = 0.0
    band_err = 0.0
    current: Dict[str, float] = {}
    for step in trace.steps:
        for ev_id, soc in step.soc_start.items():
            if ev_id in current:
                soc_err = max(soc_err, abs(current[ev_id] - soc))
            ev = trace.types[trace.ev_types[ev_id]]
            e = next_soc(ev, soc, step.p_ch[ev_id], step.p_dis[ev_id], trace.dt)
            soc_err = max(soc_err, abs(e - step.soc_end[ev_id]))
            current[ev_id] = step.soc_end[ev_id]
        band_err = max(band_err, step.cleared.p_lo - step.signal, step.signal - step.cleared.p_hi, 0.0)
    return {"soc": soc_err, "signal": band_err}


# -- scaling benchmark ------------------------------------------------------


@dataclass(frozen=True)
class BenchRow:
    count: int
    vars: int
    binaries: int
    constraints: int
    build_seconds: float
    solve_seconds: float
    objective: float

    @property
    def seconds(self) -> float:
        return self.build_seconds + self.solve_seconds


def bench_instance(count: int, seed: int = 0, fleet: FleetSpec = DEFAULT_FLEET, window: int = DEFAULT_WINDOW,
                   epsilon: float = DEFAULT_EPSILON, dt: float = DEFAULT_DT) -> EvalInputs:
    """Single-interval instance with ``count`` EVs cycling through the fleet types."""
    rng = np.random.default_rng([seed, count])
    types = list(fleet.types.values())
    evs, soc = [], []
    for i in range(count):
        ev = types[i % len(types)]
        mid = rng.uniform(ev.e_min + 5.0, ev.e_max - 5.0)
        half = rng.uniform(0.0, 4.0)
        ev_id = f"{ev.name}-{i:05d}"
        evs.append((ev_id, ev))
        soc.append(SocInterval(ev_id, max(ev.e_min, mid - half), min(ev.e_max, mid + half)))
    amb = build_ambiguity(rng.uniform(0.8, 1.0, size=window), epsilon)
    return EvalInputs.build(evs, soc, amb, dt)


def scaling_bench(
    ev_counts: Iterable[int], cfg: RobustConfig = RobustConfig(), solver: Optional[SolverConfig] = None,
    seed: int = 0, fleet: FleetSpec = DEFAULT_FLEET,
) -> List[BenchRow]:
    """Build and solve one lower-band robust model per EV count."""
    rows = []
    for n in ev_counts:
        inputs = bench_instance(n, seed, fleet, cfg.window, cfg.epsilon)
        t0 = time.perf_counter()
        model, _ = build_m4_model(inputs, cfg)
        t1 = time.perf_counter()
        out = solve(model, solver)
        t2 = time.perf_counter()
        if not out.optimal:
            raise SolverError(f"benchmark instance with {n} EVs: {out.status.value}", out)
        st = model.stats()
        rows.append(BenchRow(n, st["vars"], st["binaries"], st["constraints"], t1 - t0, t2 - t1, out.objective))
    return rows


# -- config hashing and trace files -----------------------------------------


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def sim_config_dict(cfg: SimConfig) -> dict:
    return {
        "gamma": cfg.robust.gamma,
        "epsilon": cfg.robust.epsilon,
        "window": cfg.robust.window,
        "alpha": cfg.alpha,
        "signal": cfg.signal,
        "solver": cfg.solver.backend,
        "time_limit": cfg.solver.time_limit,
    }


def _preamble(chash: str) -> List[str]:
    return [f"evflex {__version__}", f"config {chash}"]


TRACE_COLUMNS = (
    "method", "k", "cleared_lo", "cleared_hi", "cleared_clamped", "deliverable_lo", "deliverable_hi", "signal", "delivered",
    "dispatch_clamped", "eval_lo", "eval_hi", "actual_lo", "actual_hi", "virtual_lo",
    "virtual_hi", "u", "window_mean",
)
EV_TRACE_COLUMNS = ("method", "k", "ev_id", "type", "soc_start", "p_ch", "p_dis", "soc_end", "e_lo", "e_hi")


def write_trace(trace: SimulationTrace, out_dir: str | Path, chash: str, stem: Optional[str] = None) -> Tuple[Path, Path]:
    """Interval-level trace plus per-EV trace; floats written with ``repr`` for exact replay."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = stem or f"trace_{trace.method.value}_seed{trace.seed}"
    p1, p2 = out_dir / f"{stem}.csv", out_dir / f"{stem}_ev.csv"
    with p1.open("w", newline="") as fh:
        for line in _preamble(chash):
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for s in trace.steps:
            w.writerow([
                trace.method.value, s.k, repr(s.cleared.p_lo), repr(s.cleared.p_hi), int(s.cleared_clamped),
                repr(s.deliverable.p_lo), repr(s.deliverable.p_hi),
                repr(s.signal), repr(s.delivered), int(s.dispatch_clamped),
                repr(s.evaluated_next.lower), repr(s.evaluated_next.upper),
                repr(s.actual_next.lower), repr(s.actual_next.upper),
                repr(s.virtual_next.lower), repr(s.virtual_next.upper), repr(s.u_next), repr(s.window_mean),
            ])
    with p2.open("w", newline="") as fh:
        for line in _preamble(chash):
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EV_TRACE_COLUMNS)
        for s in trace.steps:
            for ev_id in sorted(s.soc_start):
                lo, hi = s.soc_intervals.get(ev_id, (math.nan, math.nan))
                w.writerow([
                    trace.method.value, s.k, ev_id, trace.ev_types[ev_id], repr(s.soc_start[ev_id]),
                    repr(s.p_ch[ev_id]), repr(s.p_dis[ev_id]), repr(s.soc_end[ev_id]), repr(lo), repr(hi),
                ])
    return p1, p2


def read_trace_rows(path: str | Path) -> List[Dict[str, str]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
    return rows


SCORE_COLUMNS = ("case", "UBC", "LBC", "OEF(MW)", "UEF(MW)", "config")


def write_score_table(rows: Sequence[Tuple[str, Scorecard]], path: str | Path, chash: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for line in _preamble(chash):
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_COLUMNS)
        for case, sc in rows:
            w.writerow([case, sc.ubc, sc.lbc, f"{sc.oef:.4f}", f"{sc.uef:.4f}", chash])
    return path
