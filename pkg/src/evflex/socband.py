"""Extreme-case SOC intervals at the end of the regulation interval.

At bidding time the aggregator knows the band cleared for the current
interval but not the regulation signal inside it. Pinning the aggregate
power to each end of the cleared band and optimizing the fleet's total
energy gives per-EV SOC endpoints that bracket what regulation can do.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

from .fleet import DEFAULT_DT, EvParams, FlexibilityBand, build_phi, headroom_band, separable_band
from .optmodel import ObjSense, OptModel, SolverConfig, solve

logger = logging.getLogger(__name__)

# Minimizing total SOC at a fixed aggregate power is a partition problem
# (which EVs charge while the rest discharge); a 1e-6 gap is not provable in
# reasonable time, 1e-4 closes in milliseconds.
SOC_MIP_GAP = 1e-4
BAND_TOL = 1e-7


@dataclass(frozen=True)
class SocInterval:
    ev_id: str
    e_lo: float
    e_hi: float

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.e_lo + self.e_hi)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.e_hi - self.e_lo)


@dataclass(frozen=True)
class ClearedBand:
    k: int
    p_lo: float
    p_hi: float

    def __post_init__(self) -> None:
        if self.p_lo > self.p_hi:
            raise ValueError(f"cleared band for interval {self.k} has p_lo > p_hi")

    @property
    def band(self) -> FlexibilityBand:
        return FlexibilityBand(self.p_lo, self.p_hi)


class CouplingInfeasible(ValueError):
    """Cleared power lies outside what the connected fleet can deliver."""

    def __init__(self, message: str, feasible: FlexibilityBand) -> None:
        super().__init__(message)
        self.feasible = feasible


FleetEntry = Tuple[str, EvParams, float]


def _solver(solver: Optional[SolverConfig]) -> SolverConfig:
    base = solver or SolverConfig()
    return replace(base, mip_rel_gap=max(base.mip_rel_gap, SOC_MIP_GAP))


def _extreme_soc(
    fleet: Sequence[FleetEntry], p_total: float, dt: float, sense: ObjSense, solver: Optional[SolverConfig]
) -> List[float]:
    model = OptModel(f"soc_{sense.value}")
    handles = []
    for ev_id, ev, soc in fleet:
        h = build_phi(model, ev, soc, dt, ev_id)
        hb = headroom_band(ev, soc, dt)
        cap_ch, cap_dis = hb.upper, -hb.lower
        # Convex hull of the exclusive charge/discharge set; implied by the binaries.
        if cap_ch > 1e-9 and cap_dis > 1e-9:
            model.add_constraint({h.p_ch: 1.0 / cap_ch, h.p_dis: 1.0 / cap_dis}, "<=", 1.0, f"hull_{ev_id}")
        handles.append(h)
    model.add_constraint({h.p: 1.0 for h in handles}, "=", p_total, "coupling")
    model.set_objective({h.e: 1.0 for h in handles}, sense)
    out = solve(model, _solver(solver))
    if not out.optimal:
        feasible = separable_band([(ev, soc) for _, ev, soc in fleet], dt)
        raise CouplingInfeasible(
            f"aggregate power {p_total:.3f} kW not deliverable (status {out.status.value}); "
            f"fleet band is [{feasible.lower:.3f}, {feasible.upper:.3f}]",
            feasible,
        )
    return [
        min(max(out[h.e], ev.e_min), ev.e_max) for h, (_, ev, _) in zip(handles, fleet)
    ]


def estimate_soc_min(
    fleet: Sequence[FleetEntry], cleared: ClearedBand, dt: float = DEFAULT_DT,
    solver: Optional[SolverConfig] = None,
) -> List[float]:
    """Per-EV SOC at the minimum-total-energy dispatch of ``cleared.p_lo``."""
    if not fleet:
        return []
    return _extreme_soc(fleet, cleared.p_lo, dt, ObjSense.MIN, solver)


def estimate_soc_max(
    fleet: Sequence[FleetEntry], cleared: ClearedBand, dt: float = DEFAULT_DT,
    solver: Optional[SolverConfig] = None,
) -> List[float]:
    """Per-EV SOC at the maximum-total-energy dispatch of ``cleared.p_hi``."""
    if not fleet:
        return []
    return _extreme_soc(fleet, cleared.p_hi, dt, ObjSense.MAX, solver)


@dataclass(frozen=True)
class SocEstimate:
    intervals: List[SocInterval]
    cleared: ClearedBand
    clamped: bool
    sum_lo: float
    sum_hi: float

    @property
    def aggregate_width(self) -> float:
        return self.sum_hi - self.sum_lo


def clamp_cleared(
    fleet: Sequence[FleetEntry], cleared: ClearedBand, dt: float = DEFAULT_DT,
    solver: Optional[SolverConfig] = None,
) -> Tuple[ClearedBand, bool]:
    """Intersect ``cleared`` with the fleet's physical band (warns when it bites)."""
    feasible = separable_band([(ev, soc) for _, ev, soc in fleet], dt)
    lo = min(max(cleared.p_lo, feasible.lower), feasible.upper)
    hi = max(min(cleared.p_hi, feasible.upper), feasible.lower)
    changed = lo > cleared.p_lo + BAND_TOL or hi < cleared.p_hi - BAND_TOL
    if changed:
        logger.warning(
            "interval %d: cleared band [%.2f, %.2f] exceeds fleet capability [%.2f, %.2f]; clamping",
            cleared.k, cleared.p_lo, cleared.p_hi, feasible.lower, feasible.upper,
        )
    return ClearedBand(cleared.k, lo, hi), changed


def estimate_soc_intervals(
    fleet: Sequence[FleetEntry], cleared: ClearedBand, dt: float = DEFAULT_DT,
    solver: Optional[SolverConfig] = None,
) -> SocEstimate:
    """SOC intervals for every connected EV, clamping an undeliverable cleared band.

    The two extreme solves each pick one (generally non-unique) split of the
    aggregate; an EV may end up with a lower reading above its upper one when
    the minimizing split uses it to absorb circulating power. The reported
    interval is the hull of both readings, which every convex combination of
    the two extreme dispatches stays inside.
    """
    if not fleet:
        return SocEstimate([], cleared, False, 0.0, 0.0)
    clamped = False
    try:
        lo = estimate_soc_min(fleet, cleared, dt, solver)
        hi = estimate_soc_max(fleet, cleared, dt, solver)
    except CouplingInfeasible:
        cleared, clamped = clamp_cleared(fleet, cleared, dt, solver)
        lo = estimate_soc_min(fleet, cleared, dt, solver)
        hi = estimate_soc_max(fleet, cleared, dt, solver)
    intervals = [
        SocInterval(ev_id, min(a, b), max(a, b)) for (ev_id, _, _), a, b in zip(fleet, lo, hi)
    ]
    return SocEstimate(intervals, cleared, clamped, sum(lo), sum(hi))


def point_intervals(fleet: Sequence[FleetEntry]) -> List[SocInterval]:
    """Zero-width intervals at the currently measured SOC."""
    return [SocInterval(ev_id, soc, soc) for ev_id, _, soc in fleet]
