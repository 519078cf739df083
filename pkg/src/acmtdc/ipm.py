"""Primal-dual interior-point method for smooth nonconvex NLPs.

Solves

    min f(x)  s.t.  g(x) = 0,  h(x) <= 0,  A x <= b,  xmin <= x <= xmax

with slacks z > 0 on every inequality (h + z = 0), a monotone barrier
schedule, Newton steps on the perturbed KKT system, a fraction-to-boundary
rule, and Armijo backtracking on an l1 merit function.  Convergence is judged
on the usual scaled measures

    feas = max(|g|_inf, max(h)) / (1 + max(|x|_inf, |z|_inf))
    grad = |L_x|_inf / (1 + max(|lam|_inf, |mu|_inf))
    comp = z.mu / (1 + |x|_inf)
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import MatrixRankWarning, spsolve

log = logging.getLogger(__name__)


@dataclass
class Nlp:
    n: int
    objective: Callable  # x -> (f, grad)
    equalities: Callable  # x -> (g, Jg)        Jg sparse (m x n)
    inequalities: Callable  # x -> (h, Jh)      Jh sparse (p x n)
    hessian: Callable  # (x, lam, mu) -> sparse Hessian of f + lam.g + mu.h
    xmin: np.ndarray
    xmax: np.ndarray
    A: sp.spmatrix | None = None
    b: np.ndarray | None = None
    # independent (variable indices, equality indices) groups used for the
    # inertia test; None means one block over everything
    blocks: list | None = None


@dataclass
class IpmOptions:
    feastol: float = 1e-6
    gradtol: float = 1e-6
    comptol: float = 1e-6
    max_iter: int = 300
    mu_init: float = 1e-1
    mu_factor: float = 0.2
    mu_min: float = 1e-9
    kappa: float = 10.0
    fraction_to_boundary: float = 0.99995
    armijo: float = 1e-4
    max_backtrack: int = 10
    z0: float = 1.0
    line_search: bool = True
    kappa_sigma: float = 1e10


@dataclass
class IpmResult:
    x: np.ndarray
    f: float
    lam: np.ndarray
    mu: np.ndarray
    z: np.ndarray
    status: str  # "Optimal" | "IterLimit" | "Infeasible"
    iterations: int
    kkt: dict
    history: list = field(default_factory=list)
    g: np.ndarray | None = None
    h: np.ndarray | None = None
    message: str = ""


def _bound_rows(xmin, xmax):
    n = xmin.size
    up = np.flatnonzero(np.isfinite(xmax))
    lo = np.flatnonzero(np.isfinite(xmin))
    rows = sp.vstack([
        sp.csr_matrix((np.ones(up.size), (np.arange(up.size), up)), shape=(up.size, n)),
        sp.csr_matrix((-np.ones(lo.size), (np.arange(lo.size), lo)), shape=(lo.size, n)),
    ]).tocsr()
    rhs = np.r_[xmax[up], -xmin[lo]]
    return rows, rhs


class _Problem:
    """Wraps an Nlp so that bounds and linear rows appear as extra inequalities."""

    def __init__(self, nlp: Nlp):
        self.nlp = nlp
        B, bb = _bound_rows(np.asarray(nlp.xmin, float), np.asarray(nlp.xmax, float))
        if nlp.A is not None and nlp.A.shape[0]:
            B = sp.vstack([sp.csr_matrix(nlp.A), B]).tocsr()
            bb = np.r_[np.asarray(nlp.b, float), bb]
        self.L, self.lb = B, bb

    def eval(self, x):
        f, df = self.nlp.objective(x)
        g, Jg = self.nlp.equalities(x)
        hn, Jhn = self.nlp.inequalities(x)
        self.n_nonlin = hn.size
        h = np.r_[hn, self.L @ x - self.lb]
        Jh = sp.vstack([sp.csr_matrix(Jhn, shape=(hn.size, x.size)), self.L]).tocsr()
        return f, np.asarray(df, float), g, sp.csr_matrix(Jg, shape=(g.size, x.size)), h, Jh

    def hess(self, x, lam, mu):
        return sp.csr_matrix(self.nlp.hessian(x, lam, mu[: self.n_nonlin]))


def kkt_measures(x, z, lam, mu, g, h, Lx):
    nx = np.linalg.norm(x, np.inf) if x.size else 0.0
    nz = np.linalg.norm(z, np.inf) if z.size else 0.0
    gmax = np.linalg.norm(g, np.inf) if g.size else 0.0
    hmax = float(np.max(h)) if h.size else 0.0
    nl = np.linalg.norm(lam, np.inf) if lam.size else 0.0
    nm = np.linalg.norm(mu, np.inf) if mu.size else 0.0
    return {
        "feasibility": max(gmax, hmax, 0.0) / (1.0 + max(nx, nz)),
        "stationarity": float(np.linalg.norm(Lx, np.inf)) / (1.0 + max(nl, nm)),
        "complementarity": float(z @ mu) / (1.0 + nx) if z.size else 0.0,
    }


class _InertiaControl:
    """Primal/dual regularisation so the Newton step is a descent direction.

    The KKT matrix has the right inertia iff M is positive definite on the
    null space of the equality Jacobian.  That reduced Hessian is formed per
    independent block; the primal shift is chosen from its smallest
    eigenvalue, and a small dual shift is added when the Jacobian block is
    rank deficient.
    """

    def __init__(self, blocks, floor: float = 1e-8):
        self.blocks = blocks
        self.floor = floor

    def regularisation(self, M, Jg, gamma):
        Md = M.tocsr()
        Jd = Jg.tocsr()
        lam_min = np.inf
        deficient = False
        for vi, ei in self.blocks:
            Mb = Md[vi][:, vi].toarray()
            Mb = 0.5 * (Mb + Mb.T)
            if ei.size:
                Jb = Jd[ei][:, vi].toarray()
                _, sv, vt = np.linalg.svd(Jb, full_matrices=True)
                tol = 1e-10 * max(1.0, sv[0] if sv.size else 0.0)
                rank = int(np.sum(sv > tol))
                deficient |= rank < ei.size
                Z = vt[rank:].T
            else:
                Z = np.eye(vi.size)
            if Z.shape[1]:
                lam_min = min(lam_min, float(np.linalg.eigvalsh(Z.T @ Mb @ Z)[0]))
        if not np.all(np.isfinite([lam_min])) and lam_min != np.inf:
            raise np.linalg.LinAlgError("non-finite reduced Hessian")
        dw = 0.0 if lam_min >= self.floor else 1.5 * (self.floor - lam_min)
        dc = 1e-8 * gamma ** 0.25 if deficient else 0.0
        return dw, dc


def _solve_kkt(M, Jg, rhs_x, rhs_g, dw=0.0, dc=0.0):
    n, m = M.shape[0], Jg.shape[0]
    Mr = M + dw * sp.eye(n) if dw else M
    K = sp.bmat([[Mr, Jg.T], [Jg, -dc * sp.eye(m) if dc else None]], format="csc") \
        if m else sp.csc_matrix(Mr)
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", MatrixRankWarning)
        sol = np.atleast_1d(spsolve(K, np.r_[rhs_x, rhs_g]))
    if not np.all(np.isfinite(sol)):
        raise np.linalg.LinAlgError("KKT system is singular")
    return sol[:n], sol[n:]


def solve(nlp: Nlp, x0, options: IpmOptions | None = None) -> IpmResult:
    opt = options or IpmOptions()
    prob = _Problem(nlp)
    x = np.array(x0, dtype=float)
    lo, hi = np.asarray(nlp.xmin, float), np.asarray(nlp.xmax, float)
    # pull the start strictly inside the box
    width = np.where(np.isfinite(hi - lo), hi - lo, np.inf)
    pad = np.minimum(1e-2 * width, 1e-2)
    x = np.clip(x, np.where(np.isfinite(lo), lo + pad, -np.inf), np.where(np.isfinite(hi), hi - pad, np.inf))

    f, df, g, Jg, h, Jh = prob.eval(x)
    # rows strictly satisfied start with h + z = 0; linear rows (bounds, A x <= b)
    # then stay exactly satisfied and x never leaves the box
    z = np.where(h < 0, -h, opt.z0)
    gamma = opt.mu_init
    mu = gamma / z
    lam = np.zeros(g.size)
    nu = 1.0
    blocks = nlp.blocks or [(np.arange(x.size), np.arange(g.size))]
    inertia = _InertiaControl(blocks)
    history = []
    status = "IterLimit"
    message = ""
    kkt = {}
    it = 0
    for it in range(opt.max_iter + 1):
        Lx = df + Jg.T @ lam + Jh.T @ mu
        kkt = kkt_measures(x, z, lam, mu, g, h, Lx)
        history.append(dict(it=it, f=f, gamma=gamma, **kkt))
        if not (np.isfinite(f) and all(np.isfinite(v) for v in kkt.values())):
            status = "Infeasible"
            message = "non-finite iterate"
            break
        if (kkt["feasibility"] <= opt.feastol and kkt["stationarity"] <= opt.gradtol
                and kkt["complementarity"] <= opt.comptol):
            status = "Optimal"
            break
        if it == opt.max_iter:
            break
        # barrier update: once the current subproblem is solved well enough
        while gamma > opt.mu_min:
            barrier_err = max(kkt["feasibility"], kkt["stationarity"],
                              float(np.max(np.abs(z * mu - gamma))) if z.size else 0.0)
            if barrier_err > opt.kappa * gamma:
                break
            gamma = max(opt.mu_min, opt.mu_factor * gamma)

        H = prob.hess(x, lam, mu)
        zinv = 1.0 / z
        D = sp.diags(mu * zinv)
        M = (H + Jh.T @ D @ Jh).tocsc()
        N = Lx + Jh.T @ (zinv * (mu * h + gamma))
        try:
            dw, dc = inertia.regularisation(M, Jg, gamma)
            dx, dlam_full = _solve_kkt(M, Jg, -N, -g, dw, dc)
        except np.linalg.LinAlgError as exc:
            status = "Infeasible"
            message = str(exc)
            break
        dz = -h - z - Jh @ dx
        dmu = -mu + zinv * (gamma - mu * dz)

        neg = dz < 0
        ap = min(1.0, opt.fraction_to_boundary * float(np.min(-z[neg] / dz[neg]))) if neg.any() else 1.0
        neg = dmu < 0
        ad = min(1.0, opt.fraction_to_boundary * float(np.min(-mu[neg] / dmu[neg]))) if neg.any() else 1.0

        # Armijo backtracking on f - gamma*sum(log z) + nu*(|g|_1 + |h+z|_1)
        nu = max(nu, 1.1 * max(np.max(np.abs(lam + dlam_full), initial=0.0),
                               np.max(np.abs(mu + dmu), initial=0.0)))
        infeas = np.sum(np.abs(g)) + np.sum(np.abs(h + z))
        phi0 = f - gamma * np.sum(np.log(z)) + nu * infeas
        dphi = df @ dx - gamma * np.sum(dz * zinv) - nu * infeas
        alpha = ap
        accepted = False
        if opt.line_search and dphi < 0:
            for _ in range(opt.max_backtrack):
                xt, zt = x + alpha * dx, z + alpha * dz
                ft, dft, gt, Jgt, ht, Jht = prob.eval(xt)
                phit = ft - gamma * np.sum(np.log(zt)) + nu * (np.sum(np.abs(gt)) + np.sum(np.abs(ht + zt)))
                if np.isfinite(phit) and phit <= phi0 + opt.armijo * alpha * dphi:
                    accepted = True
                    break
                alpha *= 0.5
        if not accepted:
            # not a descent direction for the merit (nonconvexity) or no
            # sufficient decrease: take the safeguarded Newton step as is
            alpha = ap
            xt, zt = x + alpha * dx, z + alpha * dz
            ft, dft, gt, Jgt, ht, Jht = prob.eval(xt)
        x, z = xt, zt
        f, df, g, Jg, h, Jh = ft, dft, gt, Jgt, ht, Jht
        lam = lam + ad * dlam_full
        mu = mu + ad * dmu
        # keep each z_i mu_i within a fixed factor of the barrier parameter
        z = np.maximum(z, 1e-300)
        mu = np.clip(mu, gamma / (opt.kappa_sigma * z), opt.kappa_sigma * gamma / z)

    if status == "IterLimit" and kkt.get("feasibility", np.inf) > opt.feastol:
        status = "Infeasible"
    return IpmResult(x, float(f), lam, mu, z, status, it, kkt, history, g, h, message)
