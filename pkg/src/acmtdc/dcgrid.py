"""DC network nodal equations: currents I = sum Y_mn (U_m - U_n), powers P = U I.

All quantities per unit on (base_mva, dc_base_kv).  Powers are positive when
injected into the DC grid.  Only in-service physical branches contribute to the
sums.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Hashable

import numpy as np

from .errors import DisconnectedGraph, NonConvergence, SingularJacobian
from .netmodel import NetworkCase, dc_components

TOL = 1e-10
MAX_ITER = 50


@dataclass
class DcSolution:
    bus_ids: tuple
    vdc_pu: np.ndarray
    idc_pu: np.ndarray
    pdc_pu: np.ndarray
    slack_bus: Hashable | None
    converged: bool
    iterations: int = 0
    max_residual_pu: float = 0.0

    def voltage(self, bus_id) -> float:
        return float(self.vdc_pu[self.bus_ids.index(bus_id)])

    def power(self, bus_id) -> float:
        return float(self.pdc_pu[self.bus_ids.index(bus_id)])

    @property
    def losses_pu(self) -> float:
        return float(np.sum(self.pdc_pu))


@dataclass(frozen=True)
class LimitViolation:
    element: Hashable
    quantity: str  # "p_dc" or "u_dc"
    value: float
    bound: float
    margin: float  # amount by which the bound is exceeded (> 0)


def _bus_index(case: NetworkCase) -> dict:
    return {b.id: i for i, b in enumerate(case.dc_buses)}


def conductance_matrix(case: NetworkCase) -> np.ndarray:
    """Nodal conductance (Laplacian) matrix over in-service branches."""
    pos = _bus_index(case)
    n = len(pos)
    G = np.zeros((n, n))
    for br in case.dc_branches:
        if not br.in_service:
            continue
        f, t = pos[br.from_bus], pos[br.to_bus]
        g = br.conductance_pu
        G[f, f] += g
        G[t, t] += g
        G[f, t] -= g
        G[t, f] -= g
    return G


def dc_current_balance(case: NetworkCase, vdc) -> np.ndarray:
    """Injected current at every DC bus, summed branch by branch."""
    pos = _bus_index(case)
    vdc = np.asarray(vdc, dtype=float)
    current = np.zeros(len(pos))
    for br in case.dc_branches:
        if not br.in_service:
            continue
        f, t = pos[br.from_bus], pos[br.to_bus]
        flow = br.conductance_pu * (vdc[f] - vdc[t])
        current[f] += flow
        current[t] -= flow
    return current


def _check_connected(case: NetworkCase):
    comps = dc_components(case)
    if len(comps) > 1:
        raise DisconnectedGraph(f"DC grid split into {len(comps)} islands: {comps}", comps)


def solve_dc_network(case: NetworkCase, injections: dict, slack_bus, slack_voltage: float = 1.0,
                     tol: float = TOL, max_iter: int = MAX_ITER) -> DcSolution:
    """Newton solve of U_m * I_m(U) = P_m for all buses but the voltage-reference one.

    ``injections`` maps DC bus id -> P (pu, positive into the grid); buses not
    listed inject nothing.  The slack injection is whatever closes the balance.
    """
    _check_connected(case)
    pos = _bus_index(case)
    ids = tuple(pos)
    n = len(ids)
    s = pos[slack_bus]
    G = conductance_matrix(case)
    p = np.zeros(n)
    for bus, val in injections.items():
        if bus != slack_bus:
            p[pos[bus]] = val
    free = [i for i in range(n) if i != s]
    u = np.full(n, float(slack_voltage))
    it = 0
    while True:
        cur = G @ u
        res = (u * cur - p)[free]
        err = float(np.max(np.abs(res))) if free else 0.0
        if err <= tol:
            break
        if it >= max_iter or not np.isfinite(err):
            raise NonConvergence(f"DC power flow did not converge (residual {err:.3e})",
                                 {"iterations": it, "max_residual_pu": err, "vdc": u})
        J = (np.diag(cur) + u[:, None] * G)[np.ix_(free, free)]
        try:
            du = np.linalg.solve(J, -res)
        except np.linalg.LinAlgError:
            raise SingularJacobian("singular DC Jacobian") from None
        u[free] += du
        it += 1
    cur = dc_current_balance(case, u)
    return DcSolution(ids, u, cur, u * cur, slack_bus, True, it, err)


def solve_dc_with_characteristics(case: NetworkCase,
                                  characteristics: dict[Hashable, Callable[[float], tuple[float, float]]],
                                  fixed_voltages: dict | None = None, initial=None,
                                  tol: float = TOL, max_iter: int = MAX_ITER) -> DcSolution:
    """Solve the DC grid when terminal powers depend on the local voltage.

    ``characteristics[bus](u) -> (p, dp_du)`` gives the injection at a bus as a
    function of its own voltage (a droop line, or a constant).  Buses in
    ``fixed_voltages`` are voltage-controlled.  Without any fixed voltage, at
    least one characteristic must have a non-zero slope or the system is
    singular.
    """
    _check_connected(case)
    fixed_voltages = fixed_voltages or {}
    pos = _bus_index(case)
    ids = tuple(pos)
    n = len(ids)
    G = conductance_matrix(case)
    u = np.ones(n) if initial is None else np.array(initial, dtype=float)
    for bus, v in fixed_voltages.items():
        u[pos[bus]] = v
    fixed = {pos[b] for b in fixed_voltages}
    free = [i for i in range(n) if i not in fixed]
    chars = [characteristics.get(b) for b in ids]
    it = 0
    while True:
        cur = G @ u
        p = np.zeros(n)
        dp = np.zeros(n)
        for i in free:
            if chars[i] is not None:
                p[i], dp[i] = chars[i](u[i])
        res = (u * cur - p)[free]
        err = float(np.max(np.abs(res))) if free else 0.0
        if err <= tol:
            break
        if it >= max_iter or not np.isfinite(err):
            raise NonConvergence(f"DC droop solve did not converge (residual {err:.3e})",
                                 {"iterations": it, "max_residual_pu": err, "vdc": u})
        J = (np.diag(cur - dp) + u[:, None] * G)[np.ix_(free, free)]
        try:
            du = np.linalg.solve(J, -res)
        except np.linalg.LinAlgError:
            raise SingularJacobian("singular DC Jacobian: no voltage reference and no droop") from None
        if not np.all(np.isfinite(du)) or np.linalg.cond(J) > 1e14:
            raise SingularJacobian("singular DC Jacobian: no voltage reference and no droop")
        u[free] += du
        it += 1
    cur = dc_current_balance(case, u)
    slack = next(iter(fixed_voltages), None)
    return DcSolution(ids, u, cur, u * cur, slack, True, it, err)


def check_dc_limits(case: NetworkCase, sol: DcSolution, tol: float = 0.0) -> list[LimitViolation]:
    """Every DC bus whose power (via its converter's limits) or voltage is out of bounds."""
    out = []
    conv_at = {c.dc_bus: c for c in case.converters}
    for i, bus in enumerate(case.dc_buses):
        u = float(sol.vdc_pu[i])
        if u > bus.vdc_max_pu + tol:
            out.append(LimitViolation(bus.id, "u_dc", u, bus.vdc_max_pu, u - bus.vdc_max_pu))
        elif u < bus.vdc_min_pu - tol:
            out.append(LimitViolation(bus.id, "u_dc", u, bus.vdc_min_pu, bus.vdc_min_pu - u))
        conv = conv_at.get(bus.id)
        if conv is None:
            continue
        p_mw = float(sol.pdc_pu[i]) * case.base_mva
        if p_mw > conv.pmax_mw + tol:
            out.append(LimitViolation(bus.id, "p_dc", p_mw, conv.pmax_mw, p_mw - conv.pmax_mw))
        elif p_mw < conv.pmin_mw - tol:
            out.append(LimitViolation(bus.id, "p_dc", p_mw, conv.pmin_mw, conv.pmin_mw - p_mw))
    return out
