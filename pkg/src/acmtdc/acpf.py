"""AC admittance assembly and Newton-Raphson power flow, one synchronous area at a time.

Sign conventions
----------------
* ``ac_injections`` returns the net power injected *into the network* at each bus.
* converter PCC powers are given as the power *drawn* by the converter from the
  AC bus (AC -> DC positive), matching the DC-side convention that power into
  the DC grid is positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable

import numpy as np
from scipy.sparse import csr_matrix

from .errors import NonConvergence, SingularJacobian, SingularNetwork, ValidationError
from .netmodel import NetworkCase

TOL = 1e-8
MAX_ITER = 50


@dataclass(frozen=True)
class AdmittanceMatrix:
    bus_ids: tuple
    matrix: csr_matrix

    @property
    def dimension(self) -> int:
        return len(self.bus_ids)

    @property
    def G(self) -> np.ndarray:
        return self.matrix.real.toarray()

    @property
    def B(self) -> np.ndarray:
        return self.matrix.imag.toarray()

    def index(self, bus_id) -> int:
        return self.bus_ids.index(bus_id)


def admittance_from_branches(bus_ids, branches, allow_isolated: bool = False) -> AdmittanceMatrix:
    """Standard Y-bus from series impedance r + jx and total line charging b (pi model)."""
    bus_ids = tuple(bus_ids)
    pos = {b: i for i, b in enumerate(bus_ids)}
    n = len(bus_ids)
    connected = np.zeros(n, dtype=bool)
    rows, cols, vals = [], [], []
    for br in branches:
        f, t = pos[br.from_bus], pos[br.to_bus]
        ys = 1.0 / complex(br.resistance_pu, br.reactance_pu)
        ysh = 0.5j * br.shunt_susceptance_pu
        rows += [f, t, f, t]
        cols += [f, t, t, f]
        vals += [ys + ysh, ys + ysh, -ys, -ys]
        connected[[f, t]] = True
    if n > 1 and not allow_isolated and not connected.all():
        isolated = [bus_ids[i] for i in np.flatnonzero(~connected)]
        raise SingularNetwork(f"isolated bus(es) {isolated}", isolated[0])
    Y = csr_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(n, n))
    Y.sum_duplicates()
    return AdmittanceMatrix(bus_ids, Y)


def build_admittance(case: NetworkCase, area: str) -> AdmittanceMatrix:
    buses = case.area_buses(area)
    if not buses:
        raise ValidationError(f"unknown AC area {area!r}", area)
    ids = tuple(b.id for b in buses)
    members = set(ids)
    branches = [br for br in case.ac_branches if br.from_bus in members]
    return admittance_from_branches(ids, branches)


def ac_injections(Y, U, delta):
    """Active and reactive bus injections (P_i, Q_i) for magnitudes U and angles delta.

    Evaluated as the double sum over G_ij cos + B_ij sin terms (dense), so a
    lossless two-bus pair gives P_1 = -P_2 bit for bit.
    """
    Ym = Y.matrix if isinstance(Y, AdmittanceMatrix) else Y
    Ym = Ym.toarray() if hasattr(Ym, "toarray") else np.asarray(Ym)
    U = np.asarray(U, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if Ym.shape[0] != U.size or U.size != delta.size:
        raise ValueError("dimension mismatch between Y, U and delta")
    ang = delta[:, None] - delta[None, :]
    c, s = np.cos(ang), np.sin(ang)
    G, B = Ym.real, Ym.imag
    UU = U[:, None] * U[None, :]
    P = np.sum(UU * (G * c + B * s), axis=1)
    Q = np.sum(UU * (G * s - B * c), axis=1)
    return P, Q


def power_derivatives(Y: np.ndarray, V: np.ndarray):
    """Dense dS/dVa and dS/dVm of S = V conj(Y V)."""
    I = Y @ V
    Vn = V / np.abs(V)
    dS_dVm = V[:, None] * np.conj(Y * Vn[None, :]) + np.diag(np.conj(I) * Vn)
    dS_dVa = 1j * V[:, None] * np.conj(np.diag(I) - Y * V[None, :])
    return dS_dVa, dS_dVm


@dataclass
class AcSolution:
    area: str
    bus_ids: tuple
    voltages_pu: np.ndarray
    angles_rad: np.ndarray
    injections: tuple  # (P, Q) per bus, pu, into the network
    converged: bool
    iterations: int
    max_mismatch_pu: float
    slack_bus: Hashable = None
    gen_p_mw: dict = field(default_factory=dict)
    gen_q_mvar: dict = field(default_factory=dict)
    pq_switched: list = field(default_factory=list)
    voltage_violations: list = field(default_factory=list)
    base_mva: float = 100.0
    impedance_load_p_mw: float = 0.0  # drawn by constant-impedance loads

    @property
    def losses_mw(self) -> float:
        return float(np.sum(self.injections[0])) * self.base_mva - self.impedance_load_p_mw

    def voltage(self, bus_id) -> float:
        return float(self.voltages_pu[self.bus_ids.index(bus_id)])


class AreaPowerFlow:
    """Precomputed per-area structures so repeated solves (simulation) stay cheap."""

    def __init__(self, case: NetworkCase, area: str, slack_bus=None):
        self.case = case
        self.area = area
        self.Ybus = build_admittance(case, area)
        self.Y = self.Ybus.matrix.toarray()
        self.bus_ids = self.Ybus.bus_ids
        self.pos = {b: i for i, b in enumerate(self.bus_ids)}
        buses = case.area_buses(area)
        self.base = case.base_mva
        self.load_p = np.array([b.load_p_mw for b in buses]) / self.base
        self.load_q = np.array([b.load_q_mvar for b in buses]) / self.base
        self.v_set = np.array([b.voltage_pu for b in buses])
        self.vmin = np.array([b.vmin_pu for b in buses])
        self.vmax = np.array([b.vmax_pu for b in buses])
        self.gens = [g for g in case.generators if g.bus in self.pos]
        self.convs = [c for c in case.converters if c.ac_bus in self.pos]
        if slack_bus is None:
            slack_bus = case.area_info(area).get("slack_bus")
        if slack_bus is None:
            gen_buses = sorted({g.bus for g in self.gens})
            slack_bus = gen_buses[0] if gen_buses else min(self.bus_ids)
        if slack_bus not in self.pos:
            raise ValidationError(f"slack bus {slack_bus!r} not in area {area!r}", slack_bus)
        self.slack_bus = slack_bus
        self.slack = self.pos[slack_bus]
        self.gen_buses = sorted({g.bus for g in self.gens if g.bus != slack_bus})

    def _gen_limits(self, bus):
        gs = [g for g in self.gens if g.bus == bus]
        return (sum(g.qmin_mvar for g in gs) / self.base, sum(g.qmax_mvar for g in gs) / self.base)

    def solve(self, pcc_injections=None, gen_dispatch=None, extra_loads=None,
              extra_injections=None, v_setpoints=None, initial=None, tol=TOL,
              max_iter=MAX_ITER, enforce_q_limits=True, impedance_loads=None) -> AcSolution:
        """``impedance_loads`` maps bus -> (P, Q) drawn at 1 pu voltage by a
        constant-impedance load; it is folded into the bus admittance."""
        n = len(self.bus_ids)
        Y = self.Y
        if impedance_loads:
            Y = self.Y.copy()
            for bus, (p, q) in impedance_loads.items():
                i = self.pos[bus]
                Y[i, i] += (p - 1j * q) / self.base
        pcc_injections = pcc_injections or {}
        gen_dispatch = gen_dispatch or {}
        extra_loads = extra_loads or {}
        extra_injections = extra_injections or {}
        v_setpoints = v_setpoints or {}

        # net scheduled injection excluding generators at PV/slack buses
        p_sched = -self.load_p.copy()
        q_sched = -self.load_q.copy()
        for bus, (p, q) in extra_loads.items():
            p_sched[self.pos[bus]] -= p / self.base
            q_sched[self.pos[bus]] -= q / self.base
        for bus, (p, q) in extra_injections.items():
            p_sched[self.pos[bus]] += p / self.base
            q_sched[self.pos[bus]] += q / self.base
        for c in self.convs:
            p, q = pcc_injections.get(c.id, (0.0, 0.0))
            p_sched[self.pos[c.ac_bus]] -= p / self.base
            q_sched[self.pos[c.ac_bus]] -= q / self.base
        p_nongen = p_sched.copy()
        q_nongen = q_sched.copy()
        gen_p = {}
        for g in self.gens:
            p = gen_dispatch.get(g.id, 0.5 * (g.pmin_mw + g.pmax_mw))
            gen_p[g.id] = p
            if g.bus != self.slack_bus:
                p_sched[self.pos[g.bus]] += p / self.base

        vm = np.ones(n)
        va = np.zeros(n)
        if initial is not None:
            vm = np.array(initial[0], dtype=float).copy()
            va = np.array(initial[1], dtype=float).copy()
        pv = [self.pos[b] for b in self.gen_buses]
        for b in self.gen_buses + [self.slack_bus]:
            i = self.pos[b]
            vm[i] = v_setpoints.get(b, self.v_set[i])
        q_fixed = {}  # PV buses switched to PQ: bus index -> gen Q (pu)
        switched = []
        total_iter = 0
        while True:
            pq = [i for i in range(n) if i != self.slack and (i not in pv or i in q_fixed)]
            pvs = [i for i in pv if i not in q_fixed]
            q_spec = q_sched.copy()
            for i, qg in q_fixed.items():
                q_spec[i] += qg
            vm, va, it, mis = self._newton(Y, vm, va, p_sched, q_spec, pvs, pq, tol, max_iter)
            total_iter += it
            if mis > tol:
                raise NonConvergence(
                    f"AC power flow in area {self.area!r} did not converge "
                    f"(mismatch {mis:.3e} after {total_iter} iterations)",
                    {"area": self.area, "iterations": total_iter, "max_mismatch_pu": mis,
                     "voltages": vm, "angles": va})
            if not enforce_q_limits:
                break
            P, Q = ac_injections(Y, vm, va)
            violation = None
            for i in sorted(pvs, key=lambda i: self.bus_ids[i]):
                qg = Q[i] - q_nongen[i]
                qmin, qmax = self._gen_limits(self.bus_ids[i])
                if qg > qmax + tol:
                    violation = (i, qmax)
                elif qg < qmin - tol:
                    violation = (i, qmin)
                if violation:
                    break
            if violation is None:
                break
            q_fixed[violation[0]] = violation[1]
            switched.append(self.bus_ids[violation[0]])

        P, Q = ac_injections(Y, vm, va)
        gen_q = {}
        for b in sorted({g.bus for g in self.gens}):
            i = self.pos[b]
            gs = [g for g in self.gens if g.bus == b]
            pg_bus = (P[i] - p_nongen[i]) * self.base
            qg_bus = (Q[i] - q_nongen[i]) * self.base
            if b == self.slack_bus:
                share = [1.0 / len(gs)] * len(gs)
                for g, s in zip(gs, share):
                    gen_p[g.id] = pg_bus * s
            span = sum(g.qmax_mvar - g.qmin_mvar for g in gs)
            for g in gs:
                gen_q[g.id] = qg_bus * ((g.qmax_mvar - g.qmin_mvar) / span if span > 0
                                        else 1.0 / len(gs))
        mis_p = P - p_sched
        mis_p[self.slack] = 0.0
        mismatch = float(np.max(np.abs(mis_p))) if n else 0.0
        viol = [self.bus_ids[i] for i in range(n)
                if vm[i] < self.vmin[i] - 1e-9 or vm[i] > self.vmax[i] + 1e-9]
        z_load = sum(p * vm[self.pos[b]] ** 2 for b, (p, _) in (impedance_loads or {}).items())
        return AcSolution(self.area, self.bus_ids, vm, va, (P, Q), True, total_iter,
                          mismatch, self.slack_bus, gen_p, gen_q, switched, viol, self.base, z_load)

    def _newton(self, Y, vm, va, p_spec, q_spec, pv, pq, tol, max_iter):
        pvpq = sorted(pv + pq)
        pq = sorted(pq)
        npvpq = len(pvpq)
        it = 0
        while True:
            V = vm * np.exp(1j * va)
            S = V * np.conj(Y @ V)
            F = np.r_[S.real[pvpq] - p_spec[pvpq], S.imag[pq] - q_spec[pq]]
            mis = float(np.max(np.abs(F))) if F.size else 0.0
            if mis <= tol or it >= max_iter or not np.isfinite(mis):
                return vm, va, it, mis
            dS_dVa, dS_dVm = power_derivatives(Y, V)
            J = np.block([
                [dS_dVa.real[np.ix_(pvpq, pvpq)], dS_dVm.real[np.ix_(pvpq, pq)]],
                [dS_dVa.imag[np.ix_(pq, pvpq)], dS_dVm.imag[np.ix_(pq, pq)]],
            ])
            try:
                dx = np.linalg.solve(J, -F)
            except np.linalg.LinAlgError:
                raise SingularJacobian(f"singular power-flow Jacobian in area {self.area!r}") from None
            va[pvpq] += dx[:npvpq]
            vm[pq] += dx[npvpq:]
            it += 1


def solve_powerflow(case: NetworkCase, area: str, pcc_injections=None, **kwargs) -> AcSolution:
    """Newton-Raphson power flow of one AC area with converter PCC draws held fixed.

    ``pcc_injections`` maps converter id -> (P, Q) drawn from the PCC in MW/MVAr.
    Generator buses are PV (setpoint = bus ``voltage_pu``) until a reactive limit
    binds; violators are switched to PQ one at a time in bus-id order.
    """
    return AreaPowerFlow(case, area, kwargs.pop("slack_bus", None)).solve(pcc_injections, **kwargs)
