import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from acmtdc.dcgrid import (check_dc_limits, conductance_matrix, dc_current_balance,
                           solve_dc_network, solve_dc_with_characteristics)
from acmtdc.errors import DisconnectedGraph, SingularJacobian

from builders import two_bus_dc


def test_uniform_voltage_no_current(case):
    np.testing.assert_array_equal(dc_current_balance(case, np.full(4, 1.02)), 0.0)


def test_two_bus_currents():
    I = dc_current_balance(two_bus_dc(10.0), [1.00, 0.99])
    np.testing.assert_allclose(I, [0.1, -0.1], rtol=1e-12)


@given(arrays(float, 4, elements=st.floats(0.5, 1.5)))
def test_kirchhoff(case, v):
    I = dc_current_balance(case, v)
    assert abs(I.sum()) <= 1e-12
    np.testing.assert_allclose(I, conductance_matrix(case) @ v, atol=1e-12)


def test_zero_injections(case):
    sol = solve_dc_network(case, {}, "DC1", 1.01)
    np.testing.assert_array_equal(sol.vdc_pu, 1.01)


def test_two_bus_quadratic_root():
    sol = solve_dc_network(two_bus_dc(10.0), {"D2": -0.0999}, "D1", 1.0)
    # upper root of 10 U (1 - U) = 0.0999
    root = (1.0 + np.sqrt(1.0 - 4 * 0.00999)) / 2.0
    assert sol.voltage("D2") == pytest.approx(root, abs=1e-12)
    assert sol.voltage("D2") == pytest.approx(0.99, abs=2e-4)
    assert sol.max_residual_pu <= 1e-10
    # the withdrawal that gives exactly 0.99
    exact = solve_dc_network(two_bus_dc(10.0), {"D2": -0.099}, "D1", 1.0)
    assert exact.voltage("D2") == pytest.approx(0.99, abs=1e-12)


def _check_solution(case, sol, inj):
    I = dc_current_balance(case, sol.vdc_pu)
    assert abs(I.sum()) <= 1e-13
    P = sol.vdc_pu * I
    for bus, p in inj.items():
        if bus != sol.slack_bus:
            assert abs(P[sol.bus_ids.index(bus)] - p) <= 1e-10
    losses = sum(br.conductance_pu * (sol.voltage(br.from_bus) - sol.voltage(br.to_bus)) ** 2
                 for br in case.dc_branches if br.in_service)
    assert sol.losses_pu == pytest.approx(losses, rel=1e-9, abs=1e-14)
    assert sol.losses_pu >= 0


def test_bundled_grid(case):
    inj = {"DC2": 1.5, "DC3": 1.2, "DC4": -1.0}
    sol = solve_dc_network(case, inj, "DC1", 1.0)
    _check_solution(case, sol, inj)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(0.95, 1.05))
def test_bundled_grid_random(case, a, b, c, u0):
    inj = {"DC2": a, "DC3": b, "DC4": c}
    sol = solve_dc_network(case, inj, "DC1", u0)
    _check_solution(case, sol, inj)


def test_cable1_outage_still_connected(case):
    out = case.with_dc_branch_status("cable1", False)
    inj = {"DC2": 1.5, "DC3": 1.2, "DC4": -1.0}
    sol = solve_dc_network(out, inj, "DC1", 1.0)
    _check_solution(out, sol, inj)
    base = solve_dc_network(case, inj, "DC1", 1.0)
    assert not np.allclose(sol.vdc_pu, base.vdc_pu)
    again = solve_dc_network(out.with_dc_branch_status("cable1", True), inj, "DC1", 1.0)
    np.testing.assert_array_equal(again.vdc_pu, base.vdc_pu)


def test_islanded_grid(case):
    cut = case.with_dc_branch_status("cable1", False).with_dc_branch_status("cable4", False)
    with pytest.raises(DisconnectedGraph) as info:
        solve_dc_network(cut, {"DC2": 1.0}, "DC2", 1.0)
    assert len(info.value.components) == 2


def test_limits(case):
    sol = solve_dc_network(case, {"DC2": 1.0}, "DC1", 1.0)
    assert check_dc_limits(case, sol) == []
    pmax_pu = case.converter("VSC2").pmax_mw / case.base_mva
    eps = 1e-3
    high = solve_dc_network(case, {"DC2": pmax_pu + eps, "DC3": -pmax_pu + 1}, "DC1", 1.0)
    viol = [v for v in check_dc_limits(case, high) if v.quantity == "p_dc"]
    assert len(viol) == 1 and viol[0].element == "DC2"
    assert viol[0].margin == pytest.approx(eps * case.base_mva, rel=1e-6)  # MW
    assert pmax_pu == 20.0  # 2000 MW rating on 100 MVA


def test_voltage_limit(case):
    sol = solve_dc_network(case, {}, "DC1", 1.03)
    v = check_dc_limits(case, sol)
    assert {x.quantity for x in v} == {"u_dc"}
    assert len(v) == 4


def test_characteristics_match_fixed_powers(case):
    inj = {"DC2": 1.5, "DC3": 1.2, "DC4": -1.0}
    ref = solve_dc_network(case, inj, "DC1", 1.0)
    chars = {b: (lambda u, p=p: (p, 0.0)) for b, p in inj.items()}
    sol = solve_dc_with_characteristics(case, chars, {"DC1": 1.0})
    np.testing.assert_allclose(sol.vdc_pu, ref.vdc_pu, atol=1e-12)


def test_droop_closes_system_without_slack(case):
    # two droop lines p = (1 - u)/k around 1.0 pu plus two fixed injections
    k = 0.05
    chars = {"DC1": lambda u: ((1.0 - u) / k, -1.0 / k), "DC4": lambda u: ((1.0 - u) / k, -1.0 / k),
             "DC2": lambda u: (1.0, 0.0), "DC3": lambda u: (0.5, 0.0)}
    sol = solve_dc_with_characteristics(case, chars)
    P = sol.pdc_pu
    assert abs(P.sum() - sol.losses_pu) < 1e-15
    for b in ("DC1", "DC4"):
        assert sol.power(b) == pytest.approx((1.0 - sol.voltage(b)) / k, abs=1e-10)
    assert sol.voltage("DC1") > 1.0  # surplus pushes voltages up


def test_no_reference_is_singular(case):
    chars = {b: (lambda u: (0.0, 0.0)) for b in ("DC1", "DC3", "DC4")}
    chars["DC2"] = lambda u: (0.1, 0.0)
    with pytest.raises(SingularJacobian):
        solve_dc_with_characteristics(case, chars)
