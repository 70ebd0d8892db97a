"""Flexibility evaluation for the next market interval.

M4 solves the distributionally robust model as a single MILP. The outer
problem picks per-EV powers for interval k+1; the inner adversary moves the
distribution of ``u`` inside a 1-Wasserstein ball (dualized per sample) and
the uncertain starting SOC inside its interval (budgeted robust counterpart
with parameter ``gamma``). M1-M3 are the same machinery with one or both
uncertainty channels switched off.

Dual of ``sup_{P in ball} E_P[a u]`` for support ``H u <= h``::

    min  eps * lam + 1/S * sum_i beta_i
    s.t. a u_i + tau_i^T (h - H u_i) <= beta_i,  |H^T tau_i - a| <= lam,  tau_i >= 0

The upper band maximizes ``inf E[a u] = -sup E[(-a) u]``, i.e. the same
constraints with ``a`` replaced by ``-a``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

from .departure import AmbiguitySet, build_ambiguity
from .fleet import DEFAULT_DT, EvParams, FlexibilityBand, ZERO_BAND, add_power_block, fleet_band
from .optmodel import INF, ObjSense, OptModel, SolveOutcome, SolverConfig, SolverError, Var, solve
from .socband import SocInterval

logger = logging.getLogger(__name__)


class Method(str, Enum):
    M1 = "M1"  # departure uncertainty only
    M2 = "M2"  # SOC uncertainty only
    M3 = "M3"  # no uncertainty
    M4 = "M4"  # both (distributionally robust)


@dataclass(frozen=True)
class RobustConfig:
    gamma: float = 1.0
    epsilon: float = 0.02
    window: int = 20

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.window < 1:
            raise ValueError("window must be at least 1")


@dataclass(frozen=True)
class EvalInputs:
    """Members of interval k+1 (by reported departure), their SOC intervals and the u ambiguity set."""

    evs: Tuple[Tuple[str, EvParams], ...]
    soc: Tuple[SocInterval, ...]
    ambiguity: AmbiguitySet
    dt: float = DEFAULT_DT

    def __post_init__(self) -> None:
        if len(self.evs) != len(self.soc):
            raise ValueError("every member EV needs a SOC interval")
        for (ev_id, ev), iv in zip(self.evs, self.soc):
            if iv.ev_id != ev_id:
                raise ValueError(f"SOC interval for {iv.ev_id} paired with EV {ev_id}")
            if not (ev.e_min - 1e-6 <= iv.e_lo <= iv.e_hi + 1e-9 and iv.e_hi <= ev.e_max + 1e-6):
                raise ValueError(f"SOC interval of {ev_id} outside the EV limits or inverted")

    @classmethod
    def build(
        cls,
        evs: Sequence[Tuple[str, EvParams]],
        soc: Sequence[SocInterval],
        ambiguity: AmbiguitySet,
        dt: float = DEFAULT_DT,
    ) -> "EvalInputs":
        return cls(tuple(evs), tuple(soc), ambiguity, dt)

    def with_point_soc(self) -> "EvalInputs":
        """Collapse every SOC interval to its midpoint."""
        pts = tuple(SocInterval(iv.ev_id, iv.midpoint, iv.midpoint) for iv in self.soc)
        return replace(self, soc=pts)

    def with_certain_u(self) -> "EvalInputs":
        return replace(self, ambiguity=build_ambiguity([1.0], 0.0))


@dataclass
class M4Handles:
    p: List[Var]
    a: Var
    lam: Var
    beta: List[Var]
    tau: List[Tuple[Var, Var]]


def build_m4_model(
    inputs: EvalInputs,
    cfg: RobustConfig,
    upper: bool = False,
    fix_aggregate: Optional[float] = None,
) -> Tuple[OptModel, M4Handles]:
    """Construct the dual MILP for the lower (default) or upper band endpoint.

    ``fix_aggregate`` pins the total power, which turns the model into an
    evaluation of the inner worst-case expectation at that dispatch.
    """
    model = OptModel("m4_upper" if upper else "m4_lower")
    dt = inputs.dt
    gamma = cfg.gamma
    amb = inputs.ambiguity
    y1 = model.add_var("y1", lower=1.0)
    y2 = model.add_var("y2", lower=1.0)
    p_vars: List[Var] = []
    for (ev_id, ev), iv in zip(inputs.evs, inputs.soc):
        pw = add_power_block(model, ev, ev_id)
        mid, half = iv.midpoint, iv.half_width
        e_next = model.add_var(f"E_{ev_id}", lower=ev.e_min, upper=ev.e_max)
        q1 = model.add_var(f"q1_{ev_id}")
        q2 = model.add_var(f"q2_{ev_id}")
        z1 = model.add_var(f"Z1_{ev_id}")
        z2 = model.add_var(f"Z2_{ev_id}")
        gain, loss = ev.eta_ch * dt, dt / ev.eta_dis
        # E_next <= E_k + gain*p_ch - loss*p_dis for every admissible E_k (lower SOC side)
        model.add_constraint(
            {q1: 1.0, pw.p_ch: -gain, pw.p_dis: loss, e_next: 1.0, z1: gamma}, "<=", mid, f"soclo_{ev_id}"
        )
        # E_k + gain*p_ch - loss*p_dis <= e_max for every admissible E_k (upper SOC side)
        model.add_constraint(
            {q2: 1.0, pw.p_ch: gain, pw.p_dis: -loss, z2: gamma}, "<=", ev.e_max - mid, f"sochi_{ev_id}"
        )
        model.add_constraint({z1: 1.0, q1: 1.0, y1: -half}, ">=", 0.0, f"prot1_{ev_id}")
        model.add_constraint({z2: 1.0, q2: 1.0, y2: -half}, ">=", 0.0, f"prot2_{ev_id}")
        # Valid hull cut: charge-only and discharge-only points respect the robust
        # energy-limited caps, so the relaxation cannot mix the two modes.
        cap_ch = min(ev.p_ch_max, (ev.e_max - mid - gamma * half) / gain)
        cap_dis = min(ev.p_dis_max, (mid - gamma * half - ev.e_min) / loss)
        if cap_ch > 1e-9 and cap_dis > 1e-9:
            model.add_constraint({pw.p_ch: 1.0 / cap_ch, pw.p_dis: 1.0 / cap_dis}, "<=", 1.0, f"hull_{ev_id}")
        p_vars.append(pw.p)

    a = model.add_var("a", lower=-INF, upper=INF)
    model.add_constraint({a: 1.0, **{p: -1.0 for p in p_vars}}, "=", 0.0, "aggregate")
    if fix_aggregate is not None:
        model.add_constraint({a: 1.0}, "=", fix_aggregate, "fix_aggregate")

    lam = model.add_var("lam", lower=0.0)
    s = 1.0 / amb.S
    sgn = -1.0 if upper else 1.0  # the upper model sees loss (-a) u
    betas, taus = [], []
    for i, u in enumerate(amb.samples):
        beta = model.add_var(f"beta_{i}", lower=-INF, upper=INF)
        t_lo = model.add_var(f"tau_lo_{i}")  # multiplier of -u <= -u_min
        t_hi = model.add_var(f"tau_hi_{i}")  # multiplier of  u <=  u_max
        model.add_constraint(
            {a: sgn * u, t_lo: u - amb.u_min, t_hi: amb.u_max - u, beta: -1.0}, "<=", 0.0, f"dual_{i}"
        )
        # |H^T tau - sgn*a| <= lam, with H^T tau = t_hi - t_lo
        model.add_constraint({t_hi: 1.0, t_lo: -1.0, a: -sgn, lam: -1.0}, "<=", 0.0, f"lip_up_{i}")
        model.add_constraint({t_hi: -1.0, t_lo: 1.0, a: sgn, lam: -1.0}, "<=", 0.0, f"lip_dn_{i}")
        betas.append(beta)
        taus.append((t_lo, t_hi))

    obj = {lam: amb.epsilon, **{b: s for b in betas}}
    if upper:
        model.set_objective({v: -c for v, c in obj.items()}, ObjSense.MAX)
    else:
        model.set_objective(obj, ObjSense.MIN)
    return model, M4Handles(p_vars, a, lam, betas, taus)


def _solve_m4(
    inputs: EvalInputs, cfg: RobustConfig, upper: bool, solver: Optional[SolverConfig]
) -> Tuple[float, SolveOutcome]:
    model, _ = build_m4_model(inputs, cfg, upper=upper)
    out = solve(model, solver)
    if not out.optimal:
        # p = 0 is always feasible, so anything but optimal is a solver-side problem.
        raise SolverError(f"{model.name}: {out.status.value} ({out.message})", out)
    return out.objective, out


def evaluate_m4_lower(
    inputs: EvalInputs, cfg: RobustConfig, solver: Optional[SolverConfig] = None
) -> Tuple[float, SolveOutcome]:
    return _solve_m4(inputs, cfg, False, solver)


def evaluate_m4_upper(
    inputs: EvalInputs, cfg: RobustConfig, solver: Optional[SolverConfig] = None
) -> Tuple[float, SolveOutcome]:
    return _solve_m4(inputs, cfg, True, solver)


def evaluate_m4(inputs: EvalInputs, cfg: RobustConfig, solver: Optional[SolverConfig] = None) -> FlexibilityBand:
    lo, _ = evaluate_m4_lower(inputs, cfg, solver)
    hi, _ = evaluate_m4_upper(inputs, cfg, solver)
    return FlexibilityBand(min(lo, hi), max(lo, hi))


def evaluate_m1(inputs: EvalInputs, cfg: RobustConfig, solver: Optional[SolverConfig] = None) -> FlexibilityBand:
    return evaluate_m4(inputs.with_point_soc(), cfg, solver)


def evaluate_m2(inputs: EvalInputs, cfg: RobustConfig, solver: Optional[SolverConfig] = None) -> FlexibilityBand:
    return evaluate_m4(inputs.with_certain_u(), cfg, solver)


def evaluate_m3(inputs: EvalInputs, cfg: Optional[RobustConfig] = None, solver: Optional[SolverConfig] = None) -> FlexibilityBand:
    if not inputs.evs:
        return ZERO_BAND
    fleet = [(ev, iv.midpoint) for (_, ev), iv in zip(inputs.evs, inputs.soc)]
    return fleet_band(fleet, inputs.dt, solver)


EVALUATORS = {
    Method.M1: evaluate_m1,
    Method.M2: evaluate_m2,
    Method.M3: evaluate_m3,
    Method.M4: evaluate_m4,
}


def evaluate(
    method: Method | str, inputs: EvalInputs, cfg: RobustConfig, solver: Optional[SolverConfig] = None
) -> FlexibilityBand:
    return EVALUATORS[Method(method)](inputs, cfg, solver)


def evaluate_all(
    inputs: EvalInputs, cfg: RobustConfig, solver: Optional[SolverConfig] = None
) -> Dict[Method, FlexibilityBand]:
    return {m: evaluate(m, inputs, cfg, solver) for m in Method}
