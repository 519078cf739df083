import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from acmtdc.acpf import (AreaPowerFlow, ac_injections, admittance_from_branches, build_admittance,
                         power_derivatives, solve_powerflow)
from acmtdc.errors import SingularNetwork, ValidationError
from acmtdc.netmodel import AcBranch, AcBus, Generator, NetworkCase, validate

from oracles import (branch_losses_pu, case9_ybus, gauss_seidel_case9,
                     injections_termwise)

CASE9_DISPATCH = {"G2": 163.0, "G3": 85.0}


def test_single_branch_admittance():
    Y = admittance_from_branches([1, 2], [AcBranch(1, 2, 0.0, 0.1)])
    np.testing.assert_allclose(Y.B, [[-10.0, 10.0], [10.0, -10.0]], atol=1e-12)
    assert np.all(Y.G == 0.0)


def test_parallel_branches_double():
    one = admittance_from_branches([1, 2], [AcBranch(1, 2, 0.01, 0.1, 0.02)]).matrix.toarray()
    two = admittance_from_branches([1, 2], [AcBranch(1, 2, 0.01, 0.1, 0.02)] * 2).matrix.toarray()
    np.testing.assert_array_equal(two, 2 * one)


def test_empty_branch_set_isolated():
    with pytest.raises(ValidationError):
        admittance_from_branches([1, 2], [])
    assert issubclass(SingularNetwork, ValidationError)


def test_bundled_ybus_matches_hand_assembly(case):
    Y = build_admittance(case, "ac1")
    assert Y.bus_ids == tuple(range(1, 10))
    np.testing.assert_allclose(Y.matrix.toarray(), case9_ybus(), atol=1e-12)


def test_flat_lossless_injections():
    Y = admittance_from_branches([1, 2, 3], [AcBranch(1, 2, 0, 0.1, 0.2), AcBranch(2, 3, 0, 0.2, 0.1)])
    P, Q = ac_injections(Y, np.ones(3), np.zeros(3))
    np.testing.assert_allclose(P, 0.0, atol=1e-14)
    np.testing.assert_allclose(Q, -Y.B.sum(axis=1), atol=1e-12)


def test_two_bus_angle():
    Y = admittance_from_branches([1, 2], [AcBranch(1, 2, 0.0, 0.1)])
    P, _ = ac_injections(Y, [1.0, 1.0], [0.1, 0.0])
    assert P[0] == pytest.approx(10 * np.sin(0.1), rel=1e-12)
    assert P[0] == pytest.approx(0.99833, abs=1e-5)
    assert P[0] == -P[1]


@given(arrays(float, 9, elements=st.floats(0.8, 1.2)), arrays(float, 9, elements=st.floats(-0.5, 0.5)))
def test_injections_match_termwise_sum(case, U, d):
    Y = build_admittance(case, "ac1")
    P, Q = ac_injections(Y, U, d)
    Po, Qo = injections_termwise(Y.G, Y.B, U, d)
    np.testing.assert_allclose(P, Po, atol=1e-12)
    np.testing.assert_allclose(Q, Qo, atol=1e-12)


@given(arrays(float, 9, elements=st.floats(0.85, 1.15)), arrays(float, 9, elements=st.floats(-0.4, 0.4)))
def test_jacobian_matches_central_differences(case, U, d):
    Y = build_admittance(case, "ac1").matrix.toarray()
    V = U * np.exp(1j * d)
    dS_dVa, dS_dVm = power_derivatives(Y, V)
    h = 1e-6
    for k in range(9):
        e = np.zeros(9)
        e[k] = h
        Sp = np.array(ac_injections(Y, U, d + e))
        Sm = np.array(ac_injections(Y, U, d - e))
        fd = (Sp - Sm) / (2 * h)
        np.testing.assert_allclose(fd[0], dS_dVa[:, k].real, rtol=1e-6, atol=1e-6)
        np.testing.assert_allclose(fd[1], dS_dVa[:, k].imag, rtol=1e-6, atol=1e-6)
        Sp = np.array(ac_injections(Y, U + e, d))
        Sm = np.array(ac_injections(Y, U - e, d))
        fd = (Sp - Sm) / (2 * h)
        np.testing.assert_allclose(fd[0], dS_dVm[:, k].real, rtol=1e-6, atol=1e-6)
        np.testing.assert_allclose(fd[1], dS_dVm[:, k].imag, rtol=1e-6, atol=1e-6)


def test_zero_load_flat_solution():
    case = validate(NetworkCase(100.0, (AcBus(1, "a"), AcBus(2, "a"), AcBus(3, "a")),
                                (AcBranch(1, 2, 0.01, 0.1), AcBranch(2, 3, 0.02, 0.2)),
                                (Generator("G", 1, 0, 100, -50, 50),), (), (), ()))
    sol = solve_powerflow(case, "a")
    np.testing.assert_array_equal(sol.voltages_pu, 1.0)
    np.testing.assert_array_equal(sol.angles_rad, 0.0)
    assert sol.iterations <= 1


@pytest.fixture(scope="module")
def base_solution(case):
    return solve_powerflow(case, "ac1", gen_dispatch=CASE9_DISPATCH)


def test_case9_mismatch(base_solution):
    assert base_solution.converged
    assert base_solution.max_mismatch_pu <= 1e-8


def test_case9_matches_gauss_seidel(base_solution):
    V = gauss_seidel_case9()
    np.testing.assert_allclose(base_solution.voltages_pu, np.abs(V), atol=1e-4)
    np.testing.assert_allclose(base_solution.angles_rad, np.angle(V), atol=1e-4)


def test_case9_textbook_voltages(base_solution):
    textbook = [1.0, 1.0, 1.0, 0.987, 0.975, 1.003, 0.986, 0.996, 0.958]
    np.testing.assert_allclose(base_solution.voltages_pu, textbook, atol=6e-4)
    assert base_solution.gen_p_mw["G1"] == pytest.approx(71.95, abs=0.01)


def test_power_balance_with_independent_losses(case, base_solution):
    sol = base_solution
    vm = dict(zip(sol.bus_ids, sol.voltages_pu))
    va = dict(zip(sol.bus_ids, sol.angles_rad))
    branches = [br for br in case.ac_branches if br.from_bus in vm]
    losses = branch_losses_pu(branches, vm, va) * 100.0
    gen = sum(sol.gen_p_mw[g] for g in ("G1", "G2", "G3"))
    load = 90 + 100 + 125
    assert gen - load - losses == pytest.approx(0.0, abs=1e-4)  # 1e-6 pu
    assert sol.losses_mw == pytest.approx(losses, abs=1e-6)


def test_pcc_draw_enters_balance(case):
    sol = solve_powerflow(case, "ac1", {"VSC1": (50.0, 10.0)}, gen_dispatch=CASE9_DISPATCH)
    gen = sum(sol.gen_p_mw.values())
    assert gen - 315.0 - 50.0 - sol.losses_mw == pytest.approx(0.0, abs=1e-6)


def test_constant_power_load_step(case, base_solution):
    step = solve_powerflow(case, "ac1", gen_dispatch=CASE9_DISPATCH, extra_loads={5: (100.0, 0.0)})
    d_slack = step.gen_p_mw["G1"] - base_solution.gen_p_mw["G1"]
    d_loss = step.losses_mw - base_solution.losses_mw
    assert d_loss > 0
    assert d_slack == pytest.approx(100.0 + d_loss, abs=1e-6)


def test_impedance_load_step_500mw(case, base_solution):
    """500 MW at 1 pu as a constant-impedance load at bus 5."""
    step = solve_powerflow(case, "ac1", gen_dispatch=CASE9_DISPATCH, impedance_loads={5: (500.0, 0.0)})
    v5 = step.voltage(5)
    drawn = 500.0 * v5 ** 2
    assert step.impedance_load_p_mw == pytest.approx(drawn, rel=1e-12)
    d_slack = step.gen_p_mw["G1"] - base_solution.gen_p_mw["G1"]
    d_loss = step.losses_mw - base_solution.losses_mw
    assert d_slack == pytest.approx(drawn + d_loss, abs=1e-6)
    # losses still agree with the branch-by-branch sum
    vm = dict(zip(step.bus_ids, step.voltages_pu))
    va = dict(zip(step.bus_ids, step.angles_rad))
    branches = [br for br in case.ac_branches if br.from_bus in vm]
    assert step.losses_mw == pytest.approx(branch_losses_pu(branches, vm, va) * 100.0, abs=1e-6)


def test_q_limit_switching(case):
    capped = case.__class__(**{**case.__dict__, "generators": tuple(
        g.__class__(**{**g.__dict__, "qmax_mvar": 5.0}) if g.id == "G2" else g
        for g in case.generators)})
    sol = solve_powerflow(capped, "ac1", gen_dispatch=CASE9_DISPATCH)
    assert sol.pq_switched == [2]
    assert sol.gen_q_mvar["G2"] == pytest.approx(5.0, abs=1e-6)
    assert sol.voltage(2) < 1.0
    assert sol.max_mismatch_pu <= 1e-8


def test_reused_solver_matches_function(case, base_solution):
    pf = AreaPowerFlow(case, "ac1")
    again = pf.solve(gen_dispatch=CASE9_DISPATCH)
    np.testing.assert_array_equal(again.voltages_pu, base_solution.voltages_pu)


def test_unknown_area(case):
    with pytest.raises(ValidationError):
        build_admittance(case, "nowhere")
