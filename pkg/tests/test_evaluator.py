import numpy as np
import pytest

from evflex.departure import build_ambiguity, worst_case_expectation_oracle
from evflex.evaluator import (
    EvalInputs,
    Method,
    RobustConfig,
    build_m4_model,
    evaluate,
    evaluate_all,
    evaluate_m2,
    evaluate_m3,
    evaluate_m4,
    evaluate_m4_lower,
    evaluate_m4_upper,
)
from evflex.fleet import TYPE1, TYPE2, EvParams, fleet_band
from evflex.optmodel import solve_optimal
from evflex.socband import SocInterval

from oracles import compose, random_instance, vertex_robust_range

DT = 1 / 12
CERTAIN = build_ambiguity([1.0], 0.0)


def inputs_for(evs, boxes, amb):
    ids = [f"ev{i}" for i in range(len(evs))]
    return EvalInputs.build(
        list(zip(ids, evs)), [SocInterval(i, a, b) for i, (a, b) in zip(ids, boxes)], amb, DT
    )


def close(a, b, rel=1e-5, abs_=1e-6):
    return abs(a - b) <= max(abs_, rel * max(abs(a), abs(b)))


class TestExamples:
    def test_empty_fleet(self):
        inp = inputs_for([], [], build_ambiguity([0.9, 1.0], 0.1))
        for band in evaluate_all(inp, RobustConfig()).values():
            assert band.lower == 0.0 and band.upper == 0.0

    def test_hand_instance(self):
        # one TYPE1 near full and one TYPE2 near empty; values checked by hand
        amb = build_ambiguity([0.85, 0.9, 1.0], 0.05)
        inp = inputs_for([TYPE1, TYPE2], [(56.0, 59.0), (12.0, 20.0)], amb)
        band = evaluate_m4(inp, RobustConfig(gamma=1.0))
        # a in [-(40 + 2*0.95*12), (60 - 59)/(0.95/12) + 60] = [-62.8, 72.63]
        a_lo = -(40.0 + (12.0 - 10.0) * 0.95 * 12)
        a_hi = (60.0 - 59.0) / (0.95 / 12) + 60.0
        mean = np.mean([0.85, 0.9, 1.0])
        assert band.lower == pytest.approx(a_lo * max(mean - 0.05, 0.85), abs=1e-6)
        assert band.upper == pytest.approx(a_hi * max(mean - 0.05, 0.85), abs=1e-6)

    def test_symmetric_fleet(self):
        ev = EvParams(30.0, 30.0, e_max=50.0, e_min=10.0, eta_ch=1.0, eta_dis=1.0)
        amb = build_ambiguity([0.8, 0.95, 1.0], 0.03)
        inp = inputs_for([ev, ev], [(29.0, 31.0), (28.0, 32.0)], amb)
        band = evaluate_m4(inp, RobustConfig(gamma=0.6))
        assert band.upper == pytest.approx(-band.lower, abs=1e-7)
        assert band.lower < 0

    def test_upper_at_least_lower(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            evs, boxes, amb = random_instance(rng)
            b = evaluate_m4(inputs_for(evs, boxes, amb), RobustConfig(gamma=float(rng.uniform())))
            assert b.lower <= 1e-9 and b.upper >= -1e-9


class TestReductions:
    def test_deterministic_equals_fleet_band(self):
        rng = np.random.default_rng(1)
        for _ in range(15):
            evs, boxes, _ = random_instance(rng)
            inp = inputs_for(evs, boxes, CERTAIN)
            band = evaluate_m4(inp, RobustConfig(gamma=0.0, epsilon=0.0))
            ref = fleet_band([(ev, (a + b) / 2) for ev, (a, b) in zip(evs, boxes)], DT)
            assert band.lower == pytest.approx(ref.lower, abs=1e-6)
            assert band.upper == pytest.approx(ref.upper, abs=1e-6)

    def test_box_robust_equals_vertex_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(15):
            evs, boxes, _ = random_instance(rng)
            band = evaluate_m4(inputs_for(evs, boxes, CERTAIN), RobustConfig(gamma=1.0, epsilon=0.0))
            lo, hi = vertex_robust_range(evs, boxes, DT)
            assert band.lower == pytest.approx(lo, abs=1e-6)
            assert band.upper == pytest.approx(hi, abs=1e-6)

    def test_zero_width_soc_collapses_m2_to_m3(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            evs, boxes, amb = random_instance(rng)
            pts = [((a + b) / 2,) * 2 for a, b in boxes]
            inp = inputs_for(evs, pts, amb)
            m2, m3 = evaluate_m2(inp, RobustConfig()), evaluate_m3(inp)
            assert m2.lower == pytest.approx(m3.lower, abs=1e-6)
            assert m2.upper == pytest.approx(m3.upper, abs=1e-6)


class TestFixAndVerify:
    def test_inner_value_matches_transport_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            evs, boxes, amb = random_instance(rng)
            if not evs:
                continue
            inp = inputs_for(evs, boxes, amb)
            lo, hi = vertex_robust_range(evs, boxes, DT)
            target = float(rng.uniform(lo, hi))
            m, _ = build_m4_model(inp, RobustConfig(), fix_aggregate=target)
            got = solve_optimal(m).objective
            assert got == pytest.approx(worst_case_expectation_oracle(target, amb), abs=1e-6)
            m, _ = build_m4_model(inp, RobustConfig(), upper=True, fix_aggregate=target)
            got = solve_optimal(m).objective
            assert got == pytest.approx(-worst_case_expectation_oracle(-target, amb), abs=1e-6)

    def test_random_instances_against_composition(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            evs, boxes, amb = random_instance(rng)
            gamma = float(rng.choice([0.0, 1.0]))
            inp = inputs_for(evs, boxes, amb)
            cfg = RobustConfig(gamma=gamma, epsilon=amb.epsilon)
            got_lo, _ = evaluate_m4_lower(inp, cfg)
            got_hi, _ = evaluate_m4_upper(inp, cfg)
            srcs = boxes if gamma == 1.0 else [((a + b) / 2,) * 2 for a, b in boxes]
            want_lo, want_hi = compose(vertex_robust_range(evs, srcs, DT), amb)
            assert close(got_lo, want_lo) and close(got_hi, want_hi)


class TestProperties:
    def test_gamma_monotone(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            evs, boxes, amb = random_instance(rng)
            inp = inputs_for(evs, boxes, amb)
            bands = [evaluate_m4(inp, RobustConfig(gamma=g, epsilon=amb.epsilon)) for g in (0.0, 0.3, 0.7, 1.0)]
            for a, b in zip(bands, bands[1:]):
                assert b.lower >= a.lower - 1e-7 and b.upper <= a.upper + 1e-7

    def test_epsilon_monotone(self):
        rng = np.random.default_rng(10)
        for _ in range(10):
            evs, boxes, amb = random_instance(rng)
            prev = None
            for eps in (0.0, 0.05, 0.1, 0.4):
                inp = inputs_for(evs, boxes, build_ambiguity(amb.samples, eps))
                b = evaluate_m4(inp, RobustConfig(epsilon=eps))
                if prev is not None:
                    assert b.lower >= prev.lower - 1e-7 and b.upper <= prev.upper + 1e-7
                prev = b

    def test_nesting(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            evs, boxes, amb = random_instance(rng)
            bands = evaluate_all(inputs_for(evs, boxes, amb), RobustConfig(epsilon=amb.epsilon))
            m1, m2, m3, m4 = (bands[m] for m in Method)
            tol = 1e-7
            for inner, outer in ((m4, m2), (m2, m3), (m4, m1), (m1, m3)):
                assert inner.lower >= outer.lower - tol and inner.upper <= outer.upper + tol

    def test_power_scaling_slack_energy(self):
        # mid SOC, short interval: energy limits never bind, so only powers matter
        amb = build_ambiguity([0.9, 0.97], 0.02)
        boxes = [(30.0, 31.0), (45.0, 47.0)]
        base = evaluate_m4(inputs_for([TYPE1, TYPE2], boxes, amb), RobustConfig())
        for c in (0.5, 1.7):
            evs = [TYPE1.scaled(c), TYPE2.scaled(c)]
            b = evaluate_m4(inputs_for(evs, boxes, amb), RobustConfig())
            assert b.lower == pytest.approx(c * base.lower, rel=1e-9)
            assert b.upper == pytest.approx(c * base.upper, rel=1e-9)

    def test_unit_rescaling(self):
        rng = np.random.default_rng(13)
        for _ in range(8):
            evs, boxes, amb = random_instance(rng)
            c = float(rng.uniform(0.5, 3.0))
            base = evaluate_m4(inputs_for(evs, boxes, amb), RobustConfig())
            big = [
                EvParams(e.p_ch_max * c, e.p_dis_max * c, e.e_max * c, e.e_min * c, e.eta_ch, e.eta_dis)
                for e in evs
            ]
            b = evaluate_m4(inputs_for(big, [(a * c, z * c) for a, z in boxes], amb), RobustConfig())
            assert close(b.lower, c * base.lower, 1e-6) and close(b.upper, c * base.upper, 1e-6)


def test_dispatch_by_name():
    inp = inputs_for([TYPE1], [(30.0, 30.0)], CERTAIN)
    assert evaluate("M3", inp, RobustConfig()) == evaluate(Method.M3, inp, RobustConfig())


def test_bad_inputs():
    with pytest.raises(ValueError):
        EvalInputs.build([("a", TYPE1)], [], CERTAIN)
    with pytest.raises(ValueError):
        EvalInputs.build([("a", TYPE1)], [SocInterval("b", 20, 21)], CERTAIN)
    with pytest.raises(ValueError):
        EvalInputs.build([("a", TYPE1)], [SocInterval("a", 2, 21)], CERTAIN)
    with pytest.raises(ValueError):
        RobustConfig(gamma=1.5)
