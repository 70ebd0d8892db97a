"""Early-departure uncertainty from charging-session history.

A sample ``u`` is the share of flexibility that survived early departures in
one historical interval: the width of the band of EVs actually present
divided by the width of the band had everyone stayed until their reported
departure. The last ``S`` samples define an empirical distribution and a
1-Wasserstein ball around it, supported on ``[min u, max u]``.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime
from email.utils import parsedate_to_datetime
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog

from .fleet import DEFAULT_DT, EvParams, FlexibilityBand, fleet_band
from .optmodel import SolverConfig

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 20
DEFAULT_EPSILON = 0.02

SESSION_COLUMNS = ("ev_id", "type", "arrival", "reported_departure", "actual_departure", "arrival_soc")


class DataError(ValueError):
    """Malformed or inconsistent session data."""


@dataclass(frozen=True)
class SessionRecord:
    ev_id: str
    ev_type: str
    arrival: int
    reported_departure: int
    actual_departure: int
    arrival_soc: float

    def __post_init__(self) -> None:
        if not self.arrival <= self.actual_departure <= self.reported_departure:
            raise DataError(
                f"session {self.ev_id}: need arrival <= actual_departure <= reported_departure, got "
                f"{self.arrival}, {self.actual_departure}, {self.reported_departure}"
            )

    @property
    def left_early(self) -> bool:
        return self.actual_departure < self.reported_departure

    def present(self, m: int) -> bool:
        return self.arrival <= m < self.actual_departure

    def scheduled(self, m: int) -> bool:
        return self.arrival <= m < self.reported_departure


@dataclass(frozen=True)
class USample:
    m: int
    value: float


def compute_u(actual: FlexibilityBand, virtual: FlexibilityBand, m: int = -1) -> USample:
    """Width ratio of actual to virtual flexibility, clamped to [0, 1]."""
    denom = virtual.width
    if denom <= 1e-12:
        logger.info("interval %d: virtual band has zero width; u := 1", m)
        return USample(m, 1.0)
    return USample(m, min(max(actual.width / denom, 0.0), 1.0))


def compute_actual_band(
    fleet: Sequence[Tuple[EvParams, float]], dt: float = DEFAULT_DT, solver: Optional[SolverConfig] = None
) -> FlexibilityBand:
    """Band of the EVs actually present (caller passes only those)."""
    return fleet_band(fleet, dt, solver)


def compute_virtual_band(
    fleet: Sequence[Tuple[EvParams, float]], dt: float = DEFAULT_DT, solver: Optional[SolverConfig] = None
) -> FlexibilityBand:
    """Band of the EVs that would be present without early departures.

    Early leavers are passed with their counterfactual SOC (idle since leaving).
    """
    return fleet_band(fleet, dt, solver)


def u_from_sessions(
    sessions: Sequence[SessionRecord],
    types: Dict[str, EvParams],
    intervals: Optional[Iterable[int]] = None,
    dt: float = DEFAULT_DT,
    solver: Optional[SolverConfig] = None,
) -> List[USample]:
    """Historical u per interval with SOC held at arrival values (no regulation record)."""
    if not sessions:
        raise DataError("no sessions")
    for s in sessions:
        if s.ev_type not in types:
            raise DataError(f"session {s.ev_id}: unknown EV type {s.ev_type!r}")
    if intervals is None:
        lo = min(s.arrival for s in sessions)
        hi = max(s.reported_departure for s in sessions)
        intervals = range(lo, hi)
    out = []
    for m in intervals:
        actual = [(types[s.ev_type], s.arrival_soc) for s in sessions if s.present(m)]
        virtual = [(types[s.ev_type], s.arrival_soc) for s in sessions if s.scheduled(m)]
        if not virtual:
            continue
        out.append(compute_u(compute_actual_band(actual, dt, solver), compute_virtual_band(virtual, dt, solver), m))
    return out


@dataclass(frozen=True)
class AmbiguitySet:
    """Wasserstein ball of radius ``epsilon`` around the uniform empirical distribution.

    The support ``u_min <= u <= u_max`` is encoded as ``H u <= h`` with
    ``H = [-1, 1]^T`` and ``h = [-u_min, u_max]^T``.
    """

    samples: Tuple[float, ...]
    epsilon: float
    u_min: float
    u_max: float

    def __post_init__(self) -> None:
        if len(self.samples) == 0:
            raise ValueError("ambiguity set needs at least one sample")
        if self.epsilon < 0 or not math.isfinite(self.epsilon):
            raise ValueError("Wasserstein radius must be finite and non-negative")
        if self.u_min > self.u_max:
            raise ValueError("support lower end exceeds upper end")
        tol = 1e-12
        if any(u < self.u_min - tol or u > self.u_max + tol for u in self.samples):
            raise ValueError("every sample must lie inside the support")

    @property
    def S(self) -> int:
        return len(self.samples)

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.S, 1.0 / self.S)

    @property
    def mean(self) -> float:
        return float(np.mean(self.samples))

    @property
    def H(self) -> np.ndarray:
        return np.array([[-1.0], [1.0]])

    @property
    def h(self) -> np.ndarray:
        return np.array([-self.u_min, self.u_max])


def build_ambiguity(
    samples: Sequence[float | USample],
    epsilon: float = DEFAULT_EPSILON,
    support: Optional[Tuple[float, float]] = None,
) -> AmbiguitySet:
    values = tuple(float(s.value if isinstance(s, USample) else s) for s in samples)
    if not values:
        raise ValueError("cannot build an ambiguity set from zero samples")
    lo, hi = support if support is not None else (min(values), max(values))
    return AmbiguitySet(values, float(epsilon), float(lo), float(hi))


def worst_case_expectation_oracle(a: float, amb: AmbiguitySet) -> float:
    """``sup_{P in ball} E_P[a u]`` by a transport linear program.

    For a linear loss the adversary only ever keeps mass at a sample or moves
    it to a support endpoint, so the candidate destinations
    ``{u_min, u_max} ∪ samples`` make the finite LP exact.
    """
    src = np.asarray(amb.samples, dtype=float)
    dst = np.unique(np.concatenate([src, [amb.u_min, amb.u_max]]))
    S, T = len(src), len(dst)
    cost = np.abs(src[:, None] - dst[None, :])
    c = -np.tile(a * dst, S)
    A_eq = np.zeros((S, S * T))
    for i in range(S):
        A_eq[i, i * T:(i + 1) * T] = 1.0
    b_eq = np.full(S, 1.0 / S)
    A_ub = cost.reshape(1, -1)
    b_ub = np.array([amb.epsilon])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(-res.fun)


def worst_case_expectation_closed_form(a: float, amb: AmbiguitySet) -> float:
    """Same quantity in closed form: shift the mean toward the favourable endpoint by at most epsilon."""
    if a >= 0:
        return a * min(amb.mean + amb.epsilon, amb.u_max)
    return a * max(amb.mean - amb.epsilon, amb.u_min)


@dataclass
class SampleWindow:
    """Trailing window of the ``size`` most recent u samples (single writer)."""

    size: int = DEFAULT_WINDOW
    _buf: deque = field(default_factory=deque, repr=False)

    def __post_init__(self) -> None:
        if self.size < 1:
            raise ValueError("window size must be at least 1")
        self._buf = deque(self._buf, maxlen=self.size)

    def append(self, sample: float | USample) -> None:
        self._buf.append(float(sample.value if isinstance(sample, USample) else sample))

    def extend(self, samples: Iterable[float | USample]) -> None:
        for s in samples:
            self.append(s)

    def snapshot(self) -> Tuple[float, ...]:
        return tuple(self._buf)

    def __len__(self) -> int:
        return len(self._buf)

    def ambiguity(self, epsilon: float = DEFAULT_EPSILON) -> AmbiguitySet:
        return build_ambiguity(self.snapshot(), epsilon)


# -- session files ----------------------------------------------------------


def _parse_session_row(row: List[str]) -> SessionRecord:
    if len(row) != len(SESSION_COLUMNS):
        raise DataError(f"expected {len(SESSION_COLUMNS)} fields, got {len(row)}")
    try:
        return SessionRecord(
            ev_id=row[0].strip(),
            ev_type=row[1].strip(),
            arrival=int(row[2]),
            reported_departure=int(row[3]),
            actual_departure=int(row[4]),
            arrival_soc=float(row[5]),
        )
    except DataError:
        raise
    except ValueError as exc:
        raise DataError(str(exc)) from None


def read_sessions(path: str | Path) -> List[SessionRecord]:
    """Parse a normalized session CSV (header ``SESSION_COLUMNS``, ``#`` comments allowed).

    Raises :class:`DataError` naming the offending line.
    """
    path = Path(path)
    records: List[SessionRecord] = []
    header_seen = False
    seen = set()
    with path.open(newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.startswith("#") or not line.strip():
                continue
            row = next(csv.reader([line]))
            if not header_seen:
                if tuple(h.strip() for h in row) != SESSION_COLUMNS:
                    raise DataError(f"{path}:{lineno}: expected header {','.join(SESSION_COLUMNS)}")
                header_seen = True
                continue
            try:
                rec = _parse_session_row(row)
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if rec.ev_id in seen:
                raise DataError(f"{path}:{lineno}: duplicate ev_id {rec.ev_id!r}")
            seen.add(rec.ev_id)
            records.append(rec)
    if not records:
        raise DataError(f"{path}: no sessions")
    return records


def write_sessions(records: Sequence[SessionRecord], path: str | Path, preamble: Sequence[str] = ()) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        for line in preamble:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SESSION_COLUMNS)
        for r in records:
            w.writerow([r.ev_id, r.ev_type, r.arrival, r.reported_departure, r.actual_departure, repr(r.arrival_soc)])
    return path


def _strip_comments(lines: Iterable[str]) -> Iterable[str]:
    return (ln for ln in lines if not ln.startswith("#"))


def read_u_samples(path: str | Path) -> List[float]:
    """Read a u-sample file (``m,u`` rows, ``#`` comments allowed)."""
    out = []
    with Path(path).open(newline="") as fh:
        rows = csv.reader(_strip_comments(fh))
        header = next(rows, None)
        if header is None or [h.strip() for h in header] != ["m", "u"]:
            raise DataError(f"{path}: expected header m,u")
        for row in rows:
            if row:
                out.append(float(row[1]))
    return out


def write_u_samples(samples: Sequence[USample], path: str | Path, preamble: Sequence[str] = ()) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        for line in preamble:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "u"])
        for s in samples:
            w.writerow([s.m, f"{s.value:.12g}"])
    return path


# -- ACN-Data export --------------------------------------------------------


def _acn_time(value, key: str, sid: str) -> datetime:
    if not value:
        raise DataError(f"session {sid}: missing {key}")
    try:
        return parsedate_to_datetime(value)
    except (TypeError, ValueError):
        raise DataError(f"session {sid}: unparseable {key} {value!r}") from None


def sessions_from_acn(
    doc: dict,
    type_names: Sequence[str],
    types: Dict[str, EvParams],
    dt: float = DEFAULT_DT,
    soc_fraction: float = 0.5,
) -> List[SessionRecord]:
    """Convert an ACN-Data JSON export (``{"_items": [...]}``) into session records.

    Times become interval indices counted from the earliest connection. The
    reported departure is the user's ``requestedDeparture``; sessions without
    one are skipped. ACN has no SOC readings, so every EV arrives at
    ``soc_fraction`` of its usable range. Types are assigned round-robin in
    file order. Drivers who stay past their requested time are clipped to it
    (they are late, not early, and carry no early-departure signal).
    """
    items = doc.get("_items") if isinstance(doc, dict) else None
    if not isinstance(items, list):
        raise DataError("ACN document has no '_items' list")
    rows = []
    for item in items:
        sid = str(item.get("sessionID", "?"))
        inputs = item.get("userInputs") or []
        requested = inputs[-1].get("requestedDeparture") if inputs else None
        if not requested:
            logger.info("session %s: no requested departure, skipped", sid)
            continue
        rows.append((
            sid,
            _acn_time(item.get("connectionTime"), "connectionTime", sid),
            _acn_time(requested, "requestedDeparture", sid),
            _acn_time(item.get("disconnectTime"), "disconnectTime", sid),
        ))
    if not rows:
        raise DataError("no sessions")
    t0 = min(r[1] for r in rows)
    step = dt * 3600.0

    def index(t: datetime) -> int:
        return int(math.floor((t - t0).total_seconds() / step))

    out = []
    clipped = 0
    for n, (sid, conn, req, disc) in enumerate(rows):
        ev_type = type_names[n % len(type_names)]
        ev = types[ev_type]
        arrival = index(conn)
        reported = max(index(req), arrival + 1)
        actual = min(max(index(disc), arrival + 1), reported)
        clipped += index(disc) > reported
        soc = ev.e_min + soc_fraction * (ev.e_max - ev.e_min)
        out.append(SessionRecord(sid, ev_type, arrival, reported, actual, soc))
    if clipped:
        logger.info("%d sessions stayed past their requested departure; clipped", clipped)
    return out
