from dataclasses import replace

import numpy as np
import pytest

from hems_relax.analysis import (
    CertificateRefused,
    battery_stationarity_residual,
    bill_subgradient_interval,
    certify,
    certify_schedule,
    check_complementarity,
    default_eps_c,
    recover_duals,
)
from hems_relax.model import (
    BatteryParams,
    Horizon,
    HouseholdScenario,
    RegularizationParams,
    Tariff,
)
from hems_relax.profiles import synth_houses
from hems_relax.program import build_qp, extract_solution, schedule_from_controls
from hems_relax.qp import SolverSettings, solve

from scenario_factory import random_scenario


def one_step(battery, p=0.5, s=0.2, reg=RegularizationParams()):
    return HouseholdScenario(Horizon(1), Tariff([p], [s]), [0.0], [0.0], battery=battery, reg=reg)


def solved(s):
    qp = build_qp(s)
    res = solve(qp)
    assert res.optimal
    return qp, res, extract_solution(qp, res.primal, s)


def reference_setup(table):
    battery = BatteryParams(3.0, 3.0, 0.9, 0.9, 0.0, 10.0, 0.5, 0.1, 0.9)
    return HouseholdScenario(Horizon(table.K), Tariff(table.p_buy, table.p_sell),
                             table.d_kw, table.r_kw, battery=battery)


# --------------------------------------------------------------------------
# complementarity margins
# --------------------------------------------------------------------------


def sched(u_ch, u_dch):
    K = len(u_ch)
    s = HouseholdScenario(Horizon(K), Tariff([0.5] * K, [0.2] * K), [0.0] * K, [0.0] * K,
                          battery=BatteryParams(3, 3))
    return schedule_from_controls(s, u_ch, u_dch)


@pytest.mark.parametrize("u_ch, u_dch, margins, ok", [
    ([1, 0], [0, 2], [0, 0], True),
    ([0.5], [0.5], [0.5], False),
    ([0], [0], [0], True),
])
def test_check_complementarity(u_ch, u_dch, margins, ok):
    m, flag = check_complementarity(sched(u_ch, u_dch), 1e-6)
    assert m.tolist() == margins and flag is ok


def test_default_eps_c_scales_with_rating():
    assert default_eps_c(BatteryParams(0.2, 0.5)) == pytest.approx(1e-6)
    assert default_eps_c(BatteryParams(4.0, 3.0)) == pytest.approx(4e-6)
    assert default_eps_c(BatteryParams(0.0, 0.0)) >= 1e-9


# --------------------------------------------------------------------------
# bill subgradient
# --------------------------------------------------------------------------


@pytest.mark.parametrize("g, p, s, interval", [
    (2.0, 0.5, 0.2, (0.5, 0.5)),
    (-1.0, 0.5, 0.2, (0.2, 0.2)),
    (0.0, 0.5, 0.2, (0.2, 0.5)),
    (0.0, 0.3, 0.3, (0.3, 0.3)),
])
def test_bill_subgradient_interval(g, p, s, interval):
    assert bill_subgradient_interval(g, p, s) == pytest.approx(interval)


def test_eps_subdifferential_widens_near_kink():
    lo, hi = bill_subgradient_interval(1e-9, 0.5, 0.2, eps=1e-10)
    assert hi == 0.5 and lo == pytest.approx(0.4)
    assert bill_subgradient_interval(-1e-9, 0.5, 0.2, eps=1e-7) == pytest.approx((0.2, 0.5))


# --------------------------------------------------------------------------
# battery stationarity
# --------------------------------------------------------------------------


def test_idle_step_balanced_by_charging_lower_bound_multiplier():
    # empty battery (x0 = x_min): discharging is impossible and charging costs money
    s = one_step(BatteryParams(2, 2, 0.9, 0.9, 0.0, 10, 0.1, 0.1, 0.9))
    qp, res, sol = solved(s)
    st = battery_stationarity_residual(s, sol, res, qp)
    assert st.kink[0] and not st.flags
    assert abs(st.residual[0]) <= 1e-6
    assert 0.0 <= st.delta[0] <= 1.0
    lam = dict(zip(qp.tags, res.lam))
    # v_e*(1 - eta^2) must be carried by the lower-bound multipliers
    lhs = lam[("ch_lb", 0)]
    rhs = st.v_e[0] * 0.19 - 0.81 * lam[("dch_lb", 0)]
    assert lhs == pytest.approx(rhs, abs=1e-8)


def test_charging_step_soc_dual():
    # self-discharge forces u_ch = u_sd / eta_ch = 0.5 at an empty battery
    s = one_step(BatteryParams(2, 2, 0.9, 0.9, 0.45, 10, 0.1, 0.1, 0.9))
    qp, res, sol = solved(s)
    assert sol.u_ch[0] == pytest.approx(0.5, abs=1e-7)
    lam = dict(zip(qp.tags, res.lam))
    # lower-minus-upper SoC multiplier equals E*p/eta_ch
    assert lam[("x_lb", 0)] - lam[("x_ub", 0)] == pytest.approx(10 * 0.5 / 0.9, abs=1e-6)
    st = battery_stationarity_residual(s, sol, res, qp)
    assert st.v_e[0] == pytest.approx(0.5) and abs(st.residual[0]) <= 1e-6


def test_negative_multiplier_is_flagged():
    s = one_step(BatteryParams(2, 2, 0.9, 0.9, 0.0, 10, 0.1, 0.1, 0.9))
    qp, res, sol = solved(s)
    lam = res.lam.copy()
    lam[qp.rows("ch_ub")[0]] = -0.1
    st = battery_stationarity_residual(s, sol, replace(res, lam=lam), qp)
    assert any("contradicts dual feasibility" in why for _, why in st.flags)


def test_simultaneous_operation_is_never_silent():
    s = one_step(BatteryParams(2, 2, 0.9, 0.9, 0.0, 10, 0.5, 0.1, 0.9))
    qp, res, _ = solved(s)
    fake = schedule_from_controls(s, [0.5], [0.5])
    st = battery_stationarity_residual(s, fake, res, qp)
    assert 0 in st.proof_lhs and st.proof_lhs[0] > 0
    assert any("simultaneous" in why for _, why in st.flags)


def test_missing_duals():
    s = one_step(BatteryParams(2, 2))
    qp, res, sol = solved(s)
    with pytest.raises(ValueError, match="missing duals"):
        battery_stationarity_residual(s, sol, None, qp)


# --------------------------------------------------------------------------
# certificates
# --------------------------------------------------------------------------


def test_certify_synthetic_house():
    s = reference_setup(synth_houses(42, 1)[0])
    qp, res, sol = solved(s)
    cert = certify(s, sol, res, qp)
    assert cert.passed and cert.non_simultaneous
    assert cert.condition.holds and cert.condition.margin == pytest.approx(0.19)


def test_certify_boundary_reports_without_asserting():
    base = reference_setup(synth_houses(42, 1)[0])
    s = replace(base, battery=replace(base.battery, eta_ch=1.0, eta_dch=1.0))
    qp, res, sol = solved(s)
    cert = certify(s, sol, res, qp)
    assert not cert.condition.holds
    assert cert.margins is not None
    assert not any("simultaneous" in r for r in cert.reasons)


def test_certify_without_battery():
    s = random_scenario(np.random.default_rng(2), K=6, battery=False, tcl=True)
    qp, res, sol = solved(s)
    cert = certify(s, sol, res, qp)
    assert not cert.applicable and cert.passed
    assert cert.kkt.within()


def test_certify_refuses_non_optimal():
    s = random_scenario(np.random.default_rng(0), K=12)
    qp = build_qp(s)
    res = solve(qp, SolverSettings(max_iter=1))
    with pytest.raises(CertificateRefused):
        certify(s, extract_solution(qp, res.primal, s), res, qp)


def test_certificate_properties_on_random_scenarios():
    rng = np.random.default_rng(33)
    for _ in range(40):
        s = random_scenario(rng)
        qp, res, sol = solved(s)
        cert = certify(s, sol, res, qp)
        assert cert.passed, cert.reasons
        # passing implies every individual residual is within its own tolerance
        assert cert.kkt.within()
        assert cert.non_simultaneous == (cert.max_margin <= cert.eps_c)
        st = cert.stationarity
        assert np.all((st.delta[st.kink] >= 0) & (st.delta[st.kink] <= 1))


def test_recovered_duals_certify_a_stored_schedule():
    s = reference_setup(synth_houses(42, 2)[1])
    qp, res, sol = solved(s)
    rec = recover_duals(qp, res.primal)
    assert rec.optimal and rec.lam.min() >= 0
    assert certify_schedule(s, sol).passed


def test_certify_schedule_refuses_suboptimal_controls():
    s = reference_setup(synth_houses(42, 1)[0])
    with pytest.raises(CertificateRefused):
        certify_schedule(s, schedule_from_controls(s, np.full(24, 0.01), np.zeros(24)))
