"""Combined AC/MTDC optimal power flow.

Minimises the quadratic generation cost over one or more time steps subject to
the polar AC power balances, the DC nodal power balance with converter losses,
the converter current relation P^2 + Q^2 = U^2 I^2, voltage/generator/converter
limits and, optionally, generator ramp limits between consecutive steps.

Per step the decision vector is laid out as

    (U, delta, P_G, Q_G, P_c, Q_c, U_dc, I_c [, P_w])

all in per unit on the case base.  ``P_c`` is the active power drawn by the
converter from its PCC (AC -> DC positive); the DC-side injection is
``P_c - loss(I_c)``.  Wind farms inject a fixed active power at their
converter's AC bus; with curtailment enabled the injection becomes a variable
in ``[0, forecast]``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import ipm
from .acpf import AreaPowerFlow, admittance_from_branches, power_derivatives
from .dcgrid import conductance_matrix
from .errors import Infeasible, ModelError, NonConvergence, NotOptimal, ParseError, SingularJacobian
from .netmodel import Generator, NetworkCase, to_per_unit

log = logging.getLogger(__name__)

OPTIMAL, INFEASIBLE, ITER_LIMIT = "Optimal", "Infeasible", "IterLimit"


def generation_cost(gen: Generator, p_mw: float) -> float:
    return gen.cost_alpha * p_mw * p_mw + gen.cost_beta * p_mw + gen.cost_gamma


@dataclass
class OpfOptions:
    ipm: ipm.IpmOptions = field(default_factory=ipm.IpmOptions)
    allow_curtailment: bool = False
    warm_start_powerflow: bool = True


@dataclass
class OpfProblem:
    case: NetworkCase
    wind_injections_mw: Sequence[dict] | dict = field(default_factory=dict)
    time_horizon: int = 1
    ramp_limits_mw_per_step: dict | float | None = None
    options: OpfOptions = field(default_factory=OpfOptions)
    load_scale: Sequence[float] | None = None

    def __post_init__(self):
        if self.time_horizon < 1:
            raise ModelError(f"time horizon must be >= 1, got {self.time_horizon}")
        wind = self.wind_injections_mw
        if isinstance(wind, dict):
            wind = [dict(wind)] * self.time_horizon
        wind = [dict(w) for w in wind]
        if len(wind) != self.time_horizon:
            raise ModelError(f"{len(wind)} wind injection steps for a horizon of {self.time_horizon}")
        farms = {w.id for w in self.case.wind_farms}
        for step in wind:
            unknown = set(step) - farms
            if unknown:
                raise ModelError(f"wind injections for unknown wind farms {sorted(map(str, unknown))}")
        self.wind_injections_mw = wind
        if self.load_scale is not None and len(self.load_scale) != self.time_horizon:
            raise ModelError("load_scale length must equal the time horizon")


@dataclass
class SystemState:
    step: int
    bus_vm_pu: dict
    bus_va_rad: dict
    gen_p_mw: dict
    gen_q_mvar: dict
    conv_p_mw: dict  # drawn at the PCC, AC -> DC positive
    conv_q_mvar: dict
    conv_i_pu: dict
    conv_loss_mw: dict
    conv_p_dc_mw: dict  # injected into the DC grid
    dc_v_pu: dict
    wind_mw: dict
    cost: float = 0.0


@dataclass
class OpfSolution:
    steps: list[SystemState]
    objective_cost: float
    kkt_residual: dict
    status: str
    iterations: int = 0
    max_violation: float = 0.0

    @property
    def snapshot(self) -> SystemState:
        return self.steps[0]


@dataclass(frozen=True)
class ConverterSetpoint:
    p_ref_mw: float
    q_ref_mvar: float
    u_dc_ref_pu: float
    u_ac_ref_pu: float
    p_dc_mw: float


@dataclass(frozen=True)
class GeneratorSetpoint:
    p_ref_mw: float
    u_ref_pu: float


@dataclass(frozen=True)
class Setpoints:
    step: int
    converters: dict
    generators: dict


# ---------------------------------------------------------------------------
# second derivatives of S = V conj(Y V)
# ---------------------------------------------------------------------------

def d2s_dv2(Y: np.ndarray, V: np.ndarray, lam: np.ndarray):
    """Blocks of d/dx (dS^T lam / dx) for x = (Va, Vm); lam may be complex-free (real)."""
    n = V.size
    I = Y @ V
    A = np.diag(lam * V)
    B = Y * V[None, :]
    C = A @ np.conj(B)
    D = Y.conj().T * V[None, :]
    E = np.diag(np.conj(V)) @ (D * lam[None, :] - np.diag(D @ lam))
    F = C - A * np.conj(I)[None, :]
    Gm = np.diag(1.0 / np.abs(V)) if n else np.zeros((0, 0))
    Gaa = E + F
    Gva = 1j * Gm @ (E - F)
    Gav = Gva.T
    Gvv = Gm @ (C + C.T) @ Gm
    return Gaa, Gav, Gva, Gvv


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

class _Layout:
    def __init__(self, nb, ng, nc, nd, nw):
        sizes = dict(vm=nb, va=nb, pg=ng, qg=ng, pc=nc, qc=nc, udc=nd, ic=nc, pw=nw)
        self.sl = {}
        start = 0
        for k, s in sizes.items():
            self.sl[k] = slice(start, start + s)
            start += s
        self.n = start


class OpfModel:
    """The NLP of one OPF problem, with index maps and row labels for reporting."""

    def __init__(self, problem: OpfProblem):
        self.problem = problem
        case = to_per_unit(problem.case)
        self.case = case
        self.base = base = case.base_mva
        T = self.T = problem.time_horizon
        self.buses = [b.id for b in case.ac_buses]
        self.bpos = {b: i for i, b in enumerate(self.buses)}
        nb = len(self.buses)
        self.gens = list(case.generators)
        self.convs = list(case.converters)
        self.dcb = [b.id for b in case.dc_buses]
        dpos = {b: i for i, b in enumerate(self.dcb)}
        self.farms = list(case.wind_farms)
        ng, nc, nd = len(self.gens), len(self.convs), len(self.dcb)
        curtail = problem.options.allow_curtailment
        nw = len(self.farms) if curtail else 0
        self.curtail = curtail
        self.lay = _Layout(nb, ng, nc, nd, nw)
        self.nx = self.lay.n
        self.n = self.nx * T

        for g in self.gens:
            if g.bus not in self.bpos:
                raise ModelError(f"generator {g.id!r} at unknown bus {g.bus!r}")
        for c in self.convs:
            if c.ac_bus not in self.bpos or c.dc_bus not in dpos:
                raise ModelError(f"converter {c.id!r} references unknown buses")

        # areas are disjoint, so one Y over all buses is block-diagonal by area
        self.Y = admittance_from_branches(self.buses, case.ac_branches, allow_isolated=True).matrix.toarray()
        self.Gdc = conductance_matrix(case) if nd else np.zeros((0, 0))
        self.Cg = sp.csr_matrix((np.ones(ng), ([self.bpos[g.bus] for g in self.gens], range(ng))),
                                shape=(nb, ng))
        self.Cc = sp.csr_matrix((np.ones(nc), ([self.bpos[c.ac_bus] for c in self.convs], range(nc))),
                                shape=(nb, nc))
        self.Cd = sp.csr_matrix((np.ones(nc), ([dpos[c.dc_bus] for c in self.convs], range(nc))),
                                shape=(nd, nc))
        self.conv_bus = np.array([self.bpos[c.ac_bus] for c in self.convs], dtype=int)
        abc = np.array([c.loss_coefficients_pu(base, problem.case.converter_base_kv(c.id))
                        for c in self.convs]).reshape(nc, 3)
        self.la, self.lb, self.lc = abc[:, 0], abc[:, 1], abc[:, 2]
        self.alpha = np.array([g.cost_alpha for g in self.gens])
        self.beta = np.array([g.cost_beta for g in self.gens])
        self.gamma = np.array([g.cost_gamma for g in self.gens])

        # slack angle reference per area
        self.areas = case.areas
        self.ref = [self.bpos[AreaPowerFlow(case, a).slack_bus] for a in self.areas]

        # per-step fixed data
        farm_conv = {w.id: w.converter for w in self.farms}
        conv_bus = {c.id: c.ac_bus for c in self.convs}
        self.Cw = sp.csr_matrix((np.ones(len(self.farms)),
                                 ([self.bpos[conv_bus[farm_conv[w.id]]] for w in self.farms],
                                  range(len(self.farms)))), shape=(nb, len(self.farms)))
        pd0 = np.array([b.load_p_mw for b in case.ac_buses]) / base
        qd0 = np.array([b.load_q_mvar for b in case.ac_buses]) / base
        scale = problem.load_scale or [1.0] * T
        self.pd = [pd0 * s for s in scale]
        self.qd = [qd0 * s for s in scale]
        self.wind = [np.array([step.get(w.id, 0.0) for w in self.farms]) / base
                     for step in problem.wind_injections_mw]

        # nonlinear inequality rows per step: converter DC-power limits, MVA cap
        self.pmax_rows = [k for k, c in enumerate(self.convs) if math.isfinite(c.pmax_mw)]
        self.pmin_rows = [k for k, c in enumerate(self.convs) if math.isfinite(c.pmin_mw)]
        self.pmax = np.array([c.pmax_mw for c in self.convs]) / base
        self.pmin = np.array([c.pmin_mw for c in self.convs]) / base
        self.smax = np.array([c.rated_mva for c in self.convs]) / base

        self._bounds()
        self._ramp(problem.ramp_limits_mw_per_step)
        n_eq_step = 2 * nb + nc + nd + len(self.ref)
        n_h_step = len(self.pmax_rows) + len(self.pmin_rows) + nc
        self.counts = {
            "power_balance": 2 * nb * T,
            "converter_current": nc * T,
            "dc_balance": nd * T,
            "angle_reference": len(self.ref) * T,
            "converter_dc_limits": (len(self.pmax_rows) + len(self.pmin_rows)) * T,
            "converter_mva": nc * T,
            "ramp": self.A.shape[0],
        }
        self.n_eq = n_eq_step * T
        self.n_ineq = n_h_step * T + self.A.shape[0]
        self.eq_labels = [lab for t in range(T) for lab in self._eq_labels(t)]
        self.ineq_labels = [lab for t in range(T) for lab in self._ineq_labels(t)] + self.ramp_labels

    # -- bounds -----------------------------------------------------------
    def _bounds(self):
        case, lay, base = self.case, self.lay, self.base
        lo = np.empty(self.nx)
        hi = np.empty(self.nx)
        sl = lay.sl
        lo[sl["vm"]] = [b.vmin_pu for b in case.ac_buses]
        hi[sl["vm"]] = [b.vmax_pu for b in case.ac_buses]
        lo[sl["va"]] = [b.amin_rad for b in case.ac_buses]
        hi[sl["va"]] = [b.amax_rad for b in case.ac_buses]
        lo[sl["pg"]] = [g.pmin_mw / base for g in self.gens]
        hi[sl["pg"]] = [g.pmax_mw / base for g in self.gens]
        lo[sl["qg"]] = [g.qmin_mvar / base for g in self.gens]
        hi[sl["qg"]] = [g.qmax_mvar / base for g in self.gens]
        lo[sl["pc"]] = -self.smax
        hi[sl["pc"]] = self.smax
        lo[sl["qc"]] = -self.smax
        hi[sl["qc"]] = self.smax
        lo[sl["udc"]] = [b.vdc_min_pu for b in case.dc_buses]
        hi[sl["udc"]] = [b.vdc_max_pu for b in case.dc_buses]
        vmin_pcc = lo[sl["vm"]][self.conv_bus] if self.convs else np.zeros(0)
        lo[sl["ic"]] = 0.0
        hi[sl["ic"]] = self.smax / np.maximum(vmin_pcc, 1e-3)
        self.step_lo, self.step_hi = lo, hi
        self.xmin = np.tile(lo, self.T)
        self.xmax = np.tile(hi, self.T)
        if self.curtail:
            for t in range(self.T):
                s = self._sl(t, "pw")
                self.xmin[s] = 0.0
                self.xmax[s] = self.wind[t]
        names = []
        for t in range(self.T):
            names += [("vm", t, b) for b in self.buses] + [("va", t, b) for b in self.buses]
            names += [("pg", t, g.id) for g in self.gens] + [("qg", t, g.id) for g in self.gens]
            names += [(k, t, c.id) for k in ("pc", "qc") for c in self.convs]
            names += [("udc", t, b) for b in self.dcb] + [("ic", t, c.id) for c in self.convs]
            if self.curtail:
                names += [("pw", t, w.id) for w in self.farms]
        self.var_names = names

    @property
    def free_variables(self) -> list:
        return [self.var_names[i] for i in range(self.n)
                if not (np.isfinite(self.xmin[i]) and np.isfinite(self.xmax[i]))]

    def _sl(self, t, key):
        s = self.lay.sl[key]
        off = t * self.nx
        return slice(off + s.start, off + s.stop)

    def _ramp(self, ramp):
        rows, cols, vals, rhs, labels = [], [], [], [], []
        r = 0
        if ramp is not None and self.T > 1:
            for t in range(self.T - 1):
                for j, g in enumerate(self.gens):
                    lim = ramp.get(g.id) if isinstance(ramp, dict) else ramp
                    if lim is None:
                        continue
                    a = self._sl(t, "pg").start + j
                    b = self._sl(t + 1, "pg").start + j
                    for sign in (1.0, -1.0):
                        rows += [r, r]
                        cols += [b, a]
                        vals += [sign, -sign]
                        rhs.append(lim / self.base)
                        labels.append(("ramp_up" if sign > 0 else "ramp_down", t, g.id))
                        r += 1
        self.A = sp.csr_matrix((vals, (rows, cols)), shape=(r, self.n))
        self.b = np.array(rhs)
        self.ramp_labels = labels

    def _eq_labels(self, t):
        return ([("P_balance", t, b) for b in self.buses] + [("Q_balance", t, b) for b in self.buses]
                + [("converter_current", t, c.id) for c in self.convs]
                + [("dc_balance", t, b) for b in self.dcb]
                + [("angle_reference", t, self.buses[i]) for i in self.ref])

    def _ineq_labels(self, t):
        return ([("p_dc_max", t, self.convs[k].id) for k in self.pmax_rows]
                + [("p_dc_min", t, self.convs[k].id) for k in self.pmin_rows]
                + [("converter_mva", t, c.id) for c in self.convs])

    # -- per-step pieces -------------------------------------------------------
    def _unpack(self, xs):
        sl = self.lay.sl
        return {k: xs[s] for k, s in sl.items()}

    def _loss(self, ic):
        return self.la + self.lb * ic + self.lc * ic * ic

    def _objective(self, x):
        f = 0.0
        grad = np.zeros(self.n)
        B = self.base
        for t in range(self.T):
            pg = x[self._sl(t, "pg")] * B
            f += float(np.sum(self.alpha * pg * pg + self.beta * pg + self.gamma))
            grad[self._sl(t, "pg")] = (2 * self.alpha * pg + self.beta) * B
        return f, grad

    def _eq_step(self, t, xs):
        v = self._unpack(xs)
        lay = self.lay.sl
        nb = len(self.buses)
        V = v["vm"] * np.exp(1j * v["va"])
        S = V * np.conj(self.Y @ V)
        winj = v["pw"] if self.curtail else self.wind[t]
        pbal = self.Cg @ v["pg"] - self.pd[t] - self.Cc @ v["pc"] + self.Cw @ winj - S.real
        qbal = self.Cg @ v["qg"] - self.qd[t] - self.Cc @ v["qc"] - S.imag
        vmc = v["vm"][self.conv_bus]
        cur = v["pc"] ** 2 + v["qc"] ** 2 - vmc ** 2 * v["ic"] ** 2
        Gu = self.Gdc @ v["udc"]
        dc = self.Cd @ (v["pc"] - self._loss(v["ic"])) - v["udc"] * Gu
        ref = v["va"][self.ref]
        g = np.r_[pbal, qbal, cur, dc, ref]

        dS_dVa, dS_dVm = power_derivatives(self.Y, V)
        J = np.zeros((g.size, self.nx))
        nc, nd = len(self.convs), len(self.dcb)
        rP, rQ = slice(0, nb), slice(nb, 2 * nb)
        J[rP, lay["va"]] = -dS_dVa.real
        J[rP, lay["vm"]] = -dS_dVm.real
        J[rQ, lay["va"]] = -dS_dVa.imag
        J[rQ, lay["vm"]] = -dS_dVm.imag
        J[rP, lay["pg"]] = self.Cg.toarray()
        J[rQ, lay["qg"]] = self.Cg.toarray()
        J[rP, lay["pc"]] = -self.Cc.toarray()
        J[rQ, lay["qc"]] = -self.Cc.toarray()
        if self.curtail:
            J[rP, lay["pw"]] = self.Cw.toarray()
        r0 = 2 * nb
        k = np.arange(nc)
        J[r0 + k, lay["pc"].start + k] = 2 * v["pc"]
        J[r0 + k, lay["qc"].start + k] = 2 * v["qc"]
        J[r0 + k, lay["vm"].start + self.conv_bus] = -2 * vmc * v["ic"] ** 2
        J[r0 + k, lay["ic"].start + k] = -2 * vmc ** 2 * v["ic"]
        r1 = r0 + nc
        Cd = self.Cd.toarray()
        J[r1:r1 + nd, lay["pc"]] = Cd
        J[r1:r1 + nd, lay["ic"]] = -Cd * (self.lb + 2 * self.lc * v["ic"])[None, :]
        J[r1:r1 + nd, lay["udc"]] = -(np.diag(Gu) + v["udc"][:, None] * self.Gdc)
        r2 = r1 + nd
        for j, i in enumerate(self.ref):
            J[r2 + j, lay["va"].start + i] = 1.0
        return g, J

    def _ineq_step(self, t, xs):
        v = self._unpack(xs)
        lay = self.lay.sl
        pdc = v["pc"] - self._loss(v["ic"])
        dpdc_dic = -(self.lb + 2 * self.lc * v["ic"])
        rows = []
        J = []
        for k in self.pmax_rows:
            rows.append(pdc[k] - self.pmax[k])
            r = np.zeros(self.nx)
            r[lay["pc"].start + k] = 1.0
            r[lay["ic"].start + k] = dpdc_dic[k]
            J.append(r)
        for k in self.pmin_rows:
            rows.append(self.pmin[k] - pdc[k])
            r = np.zeros(self.nx)
            r[lay["pc"].start + k] = -1.0
            r[lay["ic"].start + k] = -dpdc_dic[k]
            J.append(r)
        for k in range(len(self.convs)):
            rows.append(v["pc"][k] ** 2 + v["qc"][k] ** 2 - self.smax[k] ** 2)
            r = np.zeros(self.nx)
            r[lay["pc"].start + k] = 2 * v["pc"][k]
            r[lay["qc"].start + k] = 2 * v["qc"][k]
            J.append(r)
        return np.array(rows), np.array(J).reshape(len(rows), self.nx)

    def _hess_step(self, t, xs, lam, mu):
        v = self._unpack(xs)
        lay = self.lay.sl
        nb, nc, nd = len(self.buses), len(self.convs), len(self.dcb)
        H = np.zeros((self.nx, self.nx))
        pg = lay["pg"]
        H[pg, pg] = np.diag(2 * self.alpha * self.base ** 2)
        # AC balances enter with a minus sign
        lp, lq = lam[:nb], lam[nb:2 * nb]
        V = v["vm"] * np.exp(1j * v["va"])
        if nb:
            aa, av, va_, vv = d2s_dv2(self.Y, V, lp.astype(complex))
            qaa, qav, qva, qvv = d2s_dv2(self.Y, V, lq.astype(complex))
            Haa = -(aa.real + qaa.imag)
            Hav = -(av.real + qav.imag)
            Hva = -(va_.real + qva.imag)
            Hvv = -(vv.real + qvv.imag)
            H[lay["va"], lay["va"]] += Haa
            H[lay["va"], lay["vm"]] += Hav
            H[lay["vm"], lay["va"]] += Hva
            H[lay["vm"], lay["vm"]] += Hvv
        # converter current relation
        lc_ = lam[2 * nb:2 * nb + nc]
        k = np.arange(nc)
        pc_i, qc_i, ic_i = lay["pc"].start + k, lay["qc"].start + k, lay["ic"].start + k
        vm_i = lay["vm"].start + self.conv_bus
        vmc, ic = v["vm"][self.conv_bus], v["ic"]
        np.add.at(H, (pc_i, pc_i), 2 * lc_)
        np.add.at(H, (qc_i, qc_i), 2 * lc_)
        np.add.at(H, (vm_i, vm_i), -2 * lc_ * ic ** 2)
        np.add.at(H, (ic_i, ic_i), -2 * lc_ * vmc ** 2)
        np.add.at(H, (vm_i, ic_i), -4 * lc_ * vmc * ic)
        np.add.at(H, (ic_i, vm_i), -4 * lc_ * vmc * ic)
        # DC balance
        ld = lam[2 * nb + nc:2 * nb + nc + nd]
        lconv = self.Cd.T @ ld
        np.add.at(H, (ic_i, ic_i), -2 * self.lc * lconv)
        ud = lay["udc"]
        H[ud, ud] -= ld[:, None] * self.Gdc + self.Gdc * ld[None, :]
        # inequalities
        m = 0
        for kk in self.pmax_rows:
            H[ic_i[kk], ic_i[kk]] += -2 * self.lc[kk] * mu[m]
            m += 1
        for kk in self.pmin_rows:
            H[ic_i[kk], ic_i[kk]] += 2 * self.lc[kk] * mu[m]
            m += 1
        for kk in range(nc):
            H[pc_i[kk], pc_i[kk]] += 2 * mu[m]
            H[qc_i[kk], qc_i[kk]] += 2 * mu[m]
            m += 1
        return H

    # -- full NLP callbacks ------------------------------------------------
    def equalities(self, x):
        gs, Js = [], []
        for t in range(self.T):
            g, J = self._eq_step(t, x[t * self.nx:(t + 1) * self.nx])
            gs.append(g)
            Js.append(sp.csr_matrix(J))
        return np.concatenate(gs), sp.block_diag(Js, format="csr")

    def inequalities(self, x):
        hs, Js = [], []
        for t in range(self.T):
            h, J = self._ineq_step(t, x[t * self.nx:(t + 1) * self.nx])
            hs.append(h)
            Js.append(sp.csr_matrix(J, shape=(h.size, self.nx)))
        return np.concatenate(hs), sp.block_diag(Js, format="csr")

    def hessian(self, x, lam, mu):
        ne = lam.size // self.T
        nh = mu.size // self.T
        blocks = [sp.csr_matrix(self._hess_step(t, x[t * self.nx:(t + 1) * self.nx],
                                                lam[t * ne:(t + 1) * ne], mu[t * nh:(t + 1) * nh]))
                  for t in range(self.T)]
        return sp.block_diag(blocks, format="csr")

    def objective(self, x):
        return self._objective(x)

    def nlp(self) -> ipm.Nlp:
        ne = self.n_eq // self.T
        blocks = [(np.arange(t * self.nx, (t + 1) * self.nx), np.arange(t * ne, (t + 1) * ne))
                  for t in range(self.T)]
        return ipm.Nlp(self.n, self.objective, self.equalities, self.inequalities, self.hessian,
                       self.xmin, self.xmax, self.A if self.A.shape[0] else None,
                       self.b if self.A.shape[0] else None, blocks)

    # -- warm start ----------------------------------------------------------
    def merit_order(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Lossless single-node economic dispatch of step ``t``: (P_G, onshore P_c) in pu.

        Used only to seed the interior-point iterations with a sensible
        inter-area exchange.
        """
        base = self.base
        lo = np.array([g.pmin_mw for g in self.gens]) / base
        hi = np.array([g.pmax_mw for g in self.gens]) / base
        a = np.maximum(self.alpha * base * base, 1e-9)
        b = self.beta * base
        demand = float(np.sum(self.pd[t]) - np.sum(self.wind[t]))

        def dispatch(lmb):
            return np.clip((lmb - b) / (2 * a), lo, hi)

        lo_l, hi_l = -1e7, 1e7
        for _ in range(200):
            mid = 0.5 * (lo_l + hi_l)
            if dispatch(mid).sum() < demand:
                lo_l = mid
            else:
                hi_l = mid
        pg = dispatch(0.5 * (lo_l + hi_l))
        pc = np.zeros(len(self.convs))
        wind_conv = {w.converter: k for k, w in enumerate(self.farms)}
        for k, c in enumerate(self.convs):
            if c.id in wind_conv:
                pc[k] = self.wind[t][wind_conv[c.id]]
        gen_area = np.array([self.case.bus(g.bus).area for g in self.gens])
        for area in self.areas:
            ks = [k for k, c in enumerate(self.convs)
                  if c.id not in wind_conv and self.case.bus(c.ac_bus).area == area]
            if not ks:
                continue
            idx = [self.bpos[bb.id] for bb in self.case.area_buses(area)]
            export = float(pg[gen_area == area].sum() - self.pd[t][idx].sum())
            pc[ks] = export / len(ks)
        return pg, pc

    def initial_point(self) -> np.ndarray:
        x = np.zeros(self.n)
        for t in range(self.T):
            xs = np.zeros(self.nx)
            sl = self.lay.sl
            lo, hi = self.step_lo, self.step_hi
            xs[sl["vm"]] = 1.0
            pg, pc = self.merit_order(t)
            xs[sl["pg"]] = pg
            xs[sl["qg"]] = 0.5 * (lo[sl["qg"]] + hi[sl["qg"]])
            xs[sl["pc"]] = pc
            xs[sl["udc"]] = [b.vdc_pu for b in self.case.dc_buses]
            if self.curtail:
                xs[sl["pw"]] = self.wind[t]
            if self.problem.options.warm_start_powerflow:
                self._pf_start(xs, pc, t)
            xs[sl["ic"]] = np.abs(xs[sl["pc"]] + 1j * xs[sl["qc"]]) / np.maximum(xs[sl["vm"]][self.conv_bus], 0.5)
            x[t * self.nx:(t + 1) * self.nx] = xs
        return x

    def _pf_start(self, xs, pc, t):
        sl = self.lay.sl
        base = self.base
        scale = (self.problem.load_scale or [1.0] * self.T)[t]
        wind_bus = {}
        for w, p in zip(self.farms, self.wind[t]):
            bus = self.case.converter(w.converter).ac_bus
            wind_bus[bus] = (wind_bus.get(bus, (0.0, 0.0))[0] + p * base, 0.0)
        for area in self.areas:
            try:
                pf = AreaPowerFlow(self.case, area)
                pcc = {c.id: (pc[k] * base, 0.0) for k, c in enumerate(self.convs) if c.id in
                       {cc.id for cc in pf.convs}}
                extra = {b: (p * (scale - 1.0), q * (scale - 1.0)) for b, p, q in
                         ((bb.id, bb.load_p_mw, bb.load_q_mvar) for bb in self.case.area_buses(area))}
                dispatch = {g.id: xs[sl["pg"].start + j] * base for j, g in enumerate(self.gens)}
                sol = pf.solve(pcc, gen_dispatch=dispatch, extra_loads=extra,
                               extra_injections={b: v for b, v in wind_bus.items() if b in pf.pos},
                               enforce_q_limits=False)
            except (NonConvergence, SingularJacobian, ValueError):
                continue
            for i, b in enumerate(sol.bus_ids):
                xs[sl["vm"].start + self.bpos[b]] = sol.voltages_pu[i]
                xs[sl["va"].start + self.bpos[b]] = sol.angles_rad[i]
            for j, g in enumerate(self.gens):
                if g.id in sol.gen_p_mw:
                    xs[sl["pg"].start + j] = sol.gen_p_mw[g.id] / base
                    xs[sl["qg"].start + j] = sol.gen_q_mvar[g.id] / base

    # -- solution mapping ---------------------------------------------------------
    def state(self, x, t) -> SystemState:
        v = self._unpack(x[t * self.nx:(t + 1) * self.nx])
        B = self.base
        loss = self._loss(v["ic"])
        pg = v["pg"] * B
        wind = v["pw"] if self.curtail else self.wind[t]
        return SystemState(
            step=t,
            bus_vm_pu=dict(zip(self.buses, v["vm"].tolist())),
            bus_va_rad=dict(zip(self.buses, v["va"].tolist())),
            gen_p_mw={g.id: float(p) for g, p in zip(self.gens, pg)},
            gen_q_mvar={g.id: float(q) * B for g, q in zip(self.gens, v["qg"])},
            conv_p_mw={c.id: float(p) * B for c, p in zip(self.convs, v["pc"])},
            conv_q_mvar={c.id: float(q) * B for c, q in zip(self.convs, v["qc"])},
            conv_i_pu={c.id: float(i) for c, i in zip(self.convs, v["ic"])},
            conv_loss_mw={c.id: float(l) * B for c, l in zip(self.convs, loss)},
            conv_p_dc_mw={c.id: float(p - l) * B for c, p, l in zip(self.convs, v["pc"], loss)},
            dc_v_pu=dict(zip(self.dcb, v["udc"].tolist())),
            wind_mw={w.id: float(p) * B for w, p in zip(self.farms, wind)},
            cost=float(np.sum(self.alpha * pg * pg + self.beta * pg + self.gamma)),
        )

    def violations(self, x, tol=1e-6) -> list[tuple]:
        """(label, amount) for every constraint violated by more than ``tol``, worst first."""
        g, _ = self.equalities(x)
        h, _ = self.inequalities(x)
        out = [(lab, abs(float(v))) for lab, v in zip(self.eq_labels, g) if abs(v) > tol]
        out += [(lab, float(v)) for lab, v in zip(self.ineq_labels, h) if v > tol]
        if self.A.shape[0]:
            r = self.A @ x - self.b
            out += [(lab, float(v)) for lab, v in zip(self.ramp_labels, r) if v > tol]
        lo = self.xmin - x
        hi = x - self.xmax
        out += [(("lower_bound",) + self.var_names[i], float(lo[i])) for i in np.flatnonzero(lo > tol)]
        out += [(("upper_bound",) + self.var_names[i], float(hi[i])) for i in np.flatnonzero(hi > tol)]
        return sorted(out, key=lambda r: -r[1])


def build_opf(problem: OpfProblem) -> OpfModel:
    return OpfModel(problem)


def _capacity_check(model: OpfModel):
    """Cheap necessary condition: load must not exceed generation plus wind."""
    cap = sum(g.pmax_mw for g in model.gens)
    for t in range(model.T):
        load = float(np.sum(model.pd[t])) * model.base
        wind = float(np.sum(model.wind[t])) * model.base
        if load > cap + wind + 1e-9:
            raise Infeasible(f"step {t}: load {load:.1f} MW exceeds generation capacity "
                             f"{cap:.1f} MW plus wind {wind:.1f} MW",
                             [(("capacity", t, None), load - cap - wind)])
    for area in model.areas:
        idx = [model.bpos[b.id] for b in model.case.area_buses(area)]
        gcap = sum(g.pmax_mw for g in model.gens if model.bpos[g.bus] in idx)
        ccap = sum(c.rated_mva for c in model.convs if model.bpos[c.ac_bus] in idx)
        for t in range(model.T):
            load = float(np.sum(model.pd[t][idx])) * model.base
            if load > gcap + ccap + float(np.sum((model.Cw.toarray() @ model.wind[t])[idx])) * model.base + 1e-9:
                raise Infeasible(f"step {t}: area {area!r} load {load:.1f} MW exceeds local "
                                 f"generation and import capacity",
                                 [(("capacity", t, area), load - gcap - ccap)])


def _solve_model(model: OpfModel, x0) -> ipm.IpmResult:
    return ipm.solve(model.nlp(), x0, model.problem.options.ipm)


def solve_opf(problem: OpfProblem) -> OpfSolution:
    """Solve the OPF; raises Infeasible, returns IterLimit solutions with diagnostics.

    Without ramp coupling each step is an independent NLP and is solved on its
    own; with ramp limits the whole horizon is one NLP.
    """
    coupled = problem.ramp_limits_mw_per_step is not None and problem.time_horizon > 1
    if problem.time_horizon > 1 and not coupled:
        parts = []
        for t in range(problem.time_horizon):
            sub = OpfProblem(problem.case, [problem.wind_injections_mw[t]], 1, None, problem.options,
                             None if problem.load_scale is None else [problem.load_scale[t]])
            sol = solve_opf(sub)
            sol.steps[0].step = t
            parts.append(sol)
        kkt = {k: max(p.kkt_residual[k] for p in parts) for k in parts[0].kkt_residual}
        status = ITER_LIMIT if any(p.status != OPTIMAL for p in parts) else OPTIMAL
        return OpfSolution([p.steps[0] for p in parts], sum(p.objective_cost for p in parts), kkt,
                           status, sum(p.iterations for p in parts),
                           max(p.max_violation for p in parts))

    model = build_opf(problem)
    _capacity_check(model)
    res = _solve_model(model, model.initial_point())
    viol = model.violations(res.x)
    worst = viol[0][1] if viol else 0.0
    steps = [model.state(res.x, t) for t in range(model.T)]
    sol = OpfSolution(steps, float(res.f), dict(res.kkt), res.status, res.iterations, worst)
    if res.status == INFEASIBLE:
        top = ", ".join(f"{lab}: {amt:.3g}" for lab, amt in viol[:5]) or "no finite iterate"
        raise Infeasible(f"OPF infeasible after {res.iterations} iterations; "
                         f"largest violations: {top}", viol, sol)
    if res.status == ITER_LIMIT:
        log.warning("OPF stopped at the iteration limit (%d); KKT %s", res.iterations, res.kkt)
    return sol


def extract_setpoints(sol: OpfSolution, step: int = 0, case: NetworkCase | None = None) -> Setpoints:
    """Converter (P, Q, U_dc, U_ac) and generator (P, U) references of one step."""
    if sol.status != OPTIMAL:
        raise NotOptimal(f"cannot extract setpoints from a {sol.status} solution")
    st = sol.steps[step]
    convs = {}
    for cid in st.conv_p_mw:
        dc_bus = case.converter(cid).dc_bus if case is not None else None
        ac_bus = case.converter(cid).ac_bus if case is not None else None
        convs[cid] = ConverterSetpoint(
            st.conv_p_mw[cid], st.conv_q_mvar[cid],
            st.dc_v_pu.get(dc_bus, math.nan) if dc_bus is not None else math.nan,
            st.bus_vm_pu.get(ac_bus, math.nan) if ac_bus is not None else math.nan,
            st.conv_p_dc_mw[cid])
    gens = {}
    for gid, p in st.gen_p_mw.items():
        bus = next((g.bus for g in case.generators if g.id == gid), None) if case is not None else None
        gens[gid] = GeneratorSetpoint(p, st.bus_vm_pu.get(bus, math.nan) if bus is not None else math.nan)
    return Setpoints(step, convs, gens)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def _key(k):
    return k if isinstance(k, str) else json.dumps(k)


def solution_to_dict(sol: OpfSolution) -> dict:
    steps = []
    for st in sol.steps:
        d = asdict(st)
        steps.append({k: ({_key(kk): vv for kk, vv in v.items()} if isinstance(v, dict) else v)
                      for k, v in d.items()})
    return {"status": sol.status, "objective_cost": sol.objective_cost,
            "kkt_residual": sol.kkt_residual, "iterations": sol.iterations,
            "max_violation": sol.max_violation, "steps": steps}


def solution_rows(sol: OpfSolution):
    """Long-format rows (step, element, quantity, value)."""
    for st in sol.steps:
        for name, values in asdict(st).items():
            if isinstance(values, dict):
                for element, value in values.items():
                    yield st.step, element, name, value
        yield st.step, "system", "cost", st.cost


def save_solution(sol: OpfSolution, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "element", "quantity", "value"])
            w.writerows(solution_rows(sol))
    else:
        path.write_text(json.dumps(solution_to_dict(sol), indent=2))


def _unkey(k: str):
    try:
        v = json.loads(k)
    except ValueError:
        return k
    return v if isinstance(v, (int, float)) else k


def solution_from_dict(d: dict) -> OpfSolution:
    """Inverse of :func:`solution_to_dict`."""
    try:
        steps = []
        for raw in d["steps"]:
            kw = {k: ({_unkey(kk): vv for kk, vv in v.items()} if isinstance(v, dict) else v)
                  for k, v in raw.items()}
            steps.append(SystemState(**kw))
        return OpfSolution(steps, d["objective_cost"], d.get("kkt_residual", {}), d["status"],
                           d.get("iterations", 0), d.get("max_violation", 0.0))
    except (KeyError, TypeError) as exc:
        raise ParseError(f"not an OPF solution document: {exc}") from None


def load_solution(path) -> OpfSolution:
    path = Path(path)
    try:
        return solution_from_dict(json.loads(path.read_text()))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None


def setpoints_to_dict(points: Setpoints) -> dict:
    return {"step": points.step,
            "converters": {_key(k): asdict(v) for k, v in points.converters.items()},
            "generators": {_key(k): asdict(v) for k, v in points.generators.items()}}
