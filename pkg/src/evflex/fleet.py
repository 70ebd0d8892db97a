"""EV data model and the per-EV feasible operating region.

Each EV contributes charge/discharge power variables gated by mutually
exclusive binaries and a one-step SOC update::

    0 <= p_ch <= p_ch_max * z_ch,   0 <= p_dis <= p_dis_max * z_dis
    z_ch + z_dis <= 1,              p = p_ch - p_dis
    E = e_prev + eta_ch * p_ch * dt - p_dis * dt / eta_dis
    e_min <= E <= e_max
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .optmodel import INF, ObjSense, OptModel, SolverConfig, Var, VarKind, solve_optimal

DEFAULT_DT = 1.0 / 12.0
SOC_TOL = 1e-6


@dataclass(frozen=True)
class EvParams:
    p_ch_max: float
    p_dis_max: float
    e_max: float
    e_min: float
    eta_ch: float = 0.95
    eta_dis: float = 0.95
    name: str = "ev"

    def __post_init__(self) -> None:
        if not 0 < self.e_min < self.e_max:
            raise ValueError(f"{self.name}: need 0 < e_min < e_max, got {self.e_min}, {self.e_max}")
        if self.p_ch_max <= 0 or self.p_dis_max <= 0:
            raise ValueError(f"{self.name}: power ratings must be positive")
        for eta in (self.eta_ch, self.eta_dis):
            if not 0 < eta <= 1:
                raise ValueError(f"{self.name}: efficiencies must lie in (0, 1]")

    def scaled(self, factor: float) -> "EvParams":
        """Copy with both power ratings multiplied by ``factor``."""
        return EvParams(
            self.p_ch_max * factor, self.p_dis_max * factor, self.e_max, self.e_min,
            self.eta_ch, self.eta_dis, self.name,
        )


# Case-study EV types.
TYPE1 = EvParams(p_ch_max=40.0, p_dis_max=40.0, e_max=60.0, e_min=5.0, name="type1")
TYPE2 = EvParams(p_ch_max=60.0, p_dis_max=60.0, e_max=82.0, e_min=10.0, name="type2")
DEFAULT_TYPES: Dict[str, EvParams] = {"type1": TYPE1, "type2": TYPE2}
DEFAULT_QUANTITIES: Dict[str, int] = {"type1": 50, "type2": 50}


@dataclass
class EvState:
    """Per-interval state of one EV; ``actual_departure`` is simulator ground truth."""

    ev_id: str
    params: EvParams
    soc: float
    connected: bool
    reported_departure: int
    actual_departure: int

    def observed(self) -> "ObservedEv":
        return ObservedEv(self.ev_id, self.params, self.soc, self.reported_departure)


@dataclass(frozen=True)
class ObservedEv:
    """What the aggregator can see at bidding time: no actual departure."""

    ev_id: str
    params: EvParams
    soc: float
    reported_departure: int


@dataclass(frozen=True)
class IntervalSpec:
    index: int
    dt: float = DEFAULT_DT

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError("interval duration must be positive")


@dataclass(frozen=True)
class FlexibilityBand:
    lower: float
    upper: float

    def __post_init__(self) -> None:
        if self.lower > self.upper + 1e-9:
            raise ValueError(f"band lower {self.lower} exceeds upper {self.upper}")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, other: "FlexibilityBand", tol: float = 1e-6) -> bool:
        return self.lower <= other.lower + tol and other.upper <= self.upper + tol

    def clip(self, value: float) -> float:
        return min(max(value, self.lower), self.upper)

    def __iter__(self):
        yield self.lower
        yield self.upper


ZERO_BAND = FlexibilityBand(0.0, 0.0)


@dataclass(frozen=True)
class PowerHandles:
    p_ch: Var
    p_dis: Var
    z_ch: Var
    z_dis: Var
    p: Var


@dataclass(frozen=True)
class PhiHandles(PowerHandles):
    e: Var


def check_soc(ev: EvParams, e_prev: float) -> float:
    """Validate ``e_prev`` against the EV's limits, absorbing solver-level noise."""
    if e_prev < ev.e_min - SOC_TOL or e_prev > ev.e_max + SOC_TOL or math.isnan(e_prev):
        raise ValueError(f"{ev.name}: SOC {e_prev} outside [{ev.e_min}, {ev.e_max}]")
    return min(max(e_prev, ev.e_min), ev.e_max)


def add_power_block(model: OptModel, ev: EvParams, tag: str) -> PowerHandles:
    """Power, binary and exclusivity constraints of the operating region."""
    p_ch = model.add_var(f"pch_{tag}", lower=0.0, upper=ev.p_ch_max)
    p_dis = model.add_var(f"pdis_{tag}", lower=0.0, upper=ev.p_dis_max)
    z_ch = model.add_var(f"zch_{tag}", VarKind.BINARY)
    z_dis = model.add_var(f"zdis_{tag}", VarKind.BINARY)
    p = model.add_var(f"p_{tag}", lower=-ev.p_dis_max, upper=ev.p_ch_max)
    model.add_constraint({p_ch: 1.0, z_ch: -ev.p_ch_max}, "<=", 0.0, f"chcap_{tag}")
    model.add_constraint({p_dis: 1.0, z_dis: -ev.p_dis_max}, "<=", 0.0, f"discap_{tag}")
    model.add_constraint({z_ch: 1.0, z_dis: 1.0}, "<=", 1.0, f"excl_{tag}")
    model.add_constraint({p: 1.0, p_ch: -1.0, p_dis: 1.0}, "=", 0.0, f"net_{tag}")
    return PowerHandles(p_ch, p_dis, z_ch, z_dis, p)


def build_phi(
    model: OptModel,
    ev: EvParams,
    e_prev: float,
    dt: float,
    tag: str,
    e_bounds: Optional[Tuple[float, float]] = None,
) -> PhiHandles:
    """Add one EV's operating region to ``model``.

    ``e_bounds`` optionally tightens the end-of-interval SOC range (used by
    the dispatcher to keep realized SOC inside its estimated interval).
    """
    e_prev = check_soc(ev, e_prev)
    lo, hi = ev.e_min, ev.e_max
    if e_bounds is not None:
        lo, hi = max(lo, e_bounds[0]), min(hi, e_bounds[1])
    pw = add_power_block(model, ev, tag)
    e = model.add_var(f"E_{tag}", lower=lo, upper=hi)
    model.add_constraint(
        {e: 1.0, pw.p_ch: -ev.eta_ch * dt, pw.p_dis: dt / ev.eta_dis}, "=", e_prev, f"soc_{tag}"
    )
    return PhiHandles(pw.p_ch, pw.p_dis, pw.z_ch, pw.z_dis, pw.p, e)


def next_soc(ev: EvParams, e_prev: float, p_ch: float, p_dis: float, dt: float) -> float:
    return e_prev + ev.eta_ch * p_ch * dt - p_dis * dt / ev.eta_dis


def _extreme_sum(
    fleet: Sequence[Tuple[EvParams, float]], dt: float, sense: ObjSense, solver: Optional[SolverConfig]
) -> float:
    model = OptModel(f"fleet_band_{sense.value}")
    handles = [build_phi(model, ev, soc, dt, str(i)) for i, (ev, soc) in enumerate(fleet)]
    model.set_objective({h.p: 1.0 for h in handles}, sense)
    return solve_optimal(model, solver).objective


def fleet_band(
    fleet: Sequence[Tuple[EvParams, float]],
    dt: float = DEFAULT_DT,
    solver: Optional[SolverConfig] = None,
) -> FlexibilityBand:
    """Aggregate [min, max] of total power over every EV's operating region."""
    if not fleet:
        return ZERO_BAND
    lo = _extreme_sum(fleet, dt, ObjSense.MIN, solver)
    hi = _extreme_sum(fleet, dt, ObjSense.MAX, solver)
    return FlexibilityBand(min(lo, hi), max(lo, hi))


# -- fleet definition files -------------------------------------------------
#
# JSON document:
#   {"dt_hours": 0.0833, "types": [{"name": "type1", "p_ch_max": 40, "p_dis_max": 40,
#     "e_max": 60, "e_min": 5, "eta_ch": 0.95, "eta_dis": 0.95, "quantity": 50}, ...]}


@dataclass(frozen=True)
class FleetSpec:
    types: Dict[str, EvParams]
    quantities: Dict[str, int]

    def expand(self) -> List[Tuple[str, EvParams]]:
        """One ``(ev_id, params)`` entry per vehicle, ids ``<type>-<k>``."""
        out = []
        for name, params in self.types.items():
            out.extend((f"{name}-{k:04d}", params) for k in range(self.quantities.get(name, 0)))
        return out

    def to_json(self) -> dict:
        return {
            "types": [
                {
                    "name": name,
                    "p_ch_max": p.p_ch_max,
                    "p_dis_max": p.p_dis_max,
                    "e_max": p.e_max,
                    "e_min": p.e_min,
                    "eta_ch": p.eta_ch,
                    "eta_dis": p.eta_dis,
                    "quantity": self.quantities.get(name, 0),
                }
                for name, p in self.types.items()
            ]
        }


DEFAULT_FLEET = FleetSpec(dict(DEFAULT_TYPES), dict(DEFAULT_QUANTITIES))

_REQUIRED = ("name", "p_ch_max", "p_dis_max", "e_max", "e_min")


def parse_fleet(doc: dict) -> FleetSpec:
    if not isinstance(doc, dict) or not isinstance(doc.get("types"), list) or not doc["types"]:
        raise ValueError("fleet file must contain a non-empty 'types' list")
    types: Dict[str, EvParams] = {}
    quantities: Dict[str, int] = {}
    for i, block in enumerate(doc["types"]):
        missing = [k for k in _REQUIRED if k not in block]
        if missing:
            raise ValueError(f"fleet type #{i}: missing keys {missing}")
        name = str(block["name"])
        if name in types:
            raise ValueError(f"fleet type {name!r} declared twice")
        types[name] = EvParams(
            p_ch_max=float(block["p_ch_max"]),
            p_dis_max=float(block["p_dis_max"]),
            e_max=float(block["e_max"]),
            e_min=float(block["e_min"]),
            eta_ch=float(block.get("eta_ch", 0.95)),
            eta_dis=float(block.get("eta_dis", 0.95)),
            name=name,
        )
        qty = int(block.get("quantity", 0))
        if qty < 0:
            raise ValueError(f"fleet type {name!r}: negative quantity")
        quantities[name] = qty
    return FleetSpec(types, quantities)


def load_fleet(path: str | Path) -> FleetSpec:
    return parse_fleet(json.loads(Path(path).read_text()))


def headroom_band(ev: EvParams, e_prev: float, dt: float) -> FlexibilityBand:
    """Closed-form single-EV band; used for diagnostics and proportional seeds."""
    e_prev = check_soc(ev, e_prev)
    up = min(ev.p_ch_max, (ev.e_max - e_prev) / (ev.eta_ch * dt))
    down = min(ev.p_dis_max, (e_prev - ev.e_min) * ev.eta_dis / dt)
    return FlexibilityBand(-max(down, 0.0), max(up, 0.0))


def power_interval(
    ev: EvParams, e_prev: float, dt: float, e_bounds: Optional[Tuple[float, float]] = None
) -> Optional[Tuple[float, float]]:
    """Net powers p whose end SOC stays in ``e_bounds`` (default the battery limits).

    End SOC is continuous and increasing in p, so the set is one interval;
    None when it is empty.
    """
    e_prev = check_soc(ev, e_prev)
    lo_e, hi_e = ev.e_min, ev.e_max
    if e_bounds is not None:
        lo_e, hi_e = max(lo_e, e_bounds[0]), min(hi_e, e_bounds[1])
    gain, loss = ev.eta_ch * dt, dt / ev.eta_dis

    def power_for(target: float) -> float:
        d = target - e_prev
        return d / gain if d >= 0 else d / loss

    lo = max(-ev.p_dis_max, power_for(lo_e))
    hi = min(ev.p_ch_max, power_for(hi_e))
    if lo > hi:
        return None
    return lo, hi


def separable_band(fleet: Sequence[Tuple[EvParams, float]], dt: float = DEFAULT_DT) -> FlexibilityBand:
    """Same result as :func:`fleet_band` without a solver: the region decouples per EV."""
    lo = hi = 0.0
    for ev, soc in fleet:
        b = headroom_band(ev, soc, dt)
        lo += b.lower
        hi += b.upper
    return FlexibilityBand(lo, hi)


__all__ = [
    "DEFAULT_DT", "DEFAULT_FLEET", "DEFAULT_TYPES", "EvParams", "EvState", "FleetSpec",
    "FlexibilityBand", "INF", "IntervalSpec", "ObservedEv", "PhiHandles", "PowerHandles",
    "TYPE1", "TYPE2", "ZERO_BAND", "add_power_block", "build_phi", "check_soc", "fleet_band",
    "headroom_band", "load_fleet", "power_interval", "separable_band", "next_soc", "parse_fleet",
]
