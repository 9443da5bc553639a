"""Centralized reference solutions for desk-scale instances.

Everything here goes through an interior-point conic solver (Clarabel via
cvxpy), which shares no code path with the ADMM iteration.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping

import cvxpy as cp
import numpy as np
import scipy.sparse as sp

from .assembly import AgentProblem, HorizonInputs
from .cones import SOC, Box, ConeProduct
from .network import Network
from .stochastic import ParamSet, build_sigma1, build_sigma2, chance_factor

SOLVER_OPTS = {
    "tol_gap_abs": 1e-9,
    "tol_gap_rel": 1e-9,
    "tol_feas": 1e-9,
    "tol_ktratio": 1e-7,
    "max_iter": 400,
}


class OracleError(RuntimeError):
    pass


@dataclass
class CentralProblem:
    H: sp.csr_matrix
    h: np.ndarray
    const: float
    M: sp.csr_matrix
    m: np.ndarray
    D: sp.csr_matrix
    d: np.ndarray
    omega: ConeProduct
    labels: list[tuple]
    maps: dict[str, np.ndarray]  # agent -> global index of each local coordinate

    @property
    def size(self) -> int:
        return len(self.labels)

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.H @ x) + self.h @ x + self.const)

    def local(self, x: np.ndarray) -> dict[str, np.ndarray]:
        return {s: x[idx] for s, idx in self.maps.items()}


def stack_central(problems: Mapping[str, AgentProblem]) -> CentralProblem:
    """Stack all agents, identifying each copy with the flow it mirrors."""
    labels: list[tuple] = []
    where: dict[tuple, int] = {}
    for prob in problems.values():
        for lab in prob.layout.labels:
            if lab[0] == "c":
                continue
            if lab in where:
                raise OracleError(f"variable {lab!r} owned twice")
            where[lab] = len(labels)
            labels.append(lab)
    maps = {}
    for s, prob in problems.items():
        idx = []
        for lab in prob.layout.labels:
            key = ("q",) + lab[1:] if lab[0] == "c" else lab
            if key not in where:
                raise OracleError(f"copy {lab!r} of agent {s!r} has no owner")
            idx.append(where[key])
        maps[s] = np.array(idx, dtype=int)
    for s, prob in problems.items():
        for j, pidx in prob.P.items():
            qidx = problems[j].Q[s]
            if len(pidx) != len(qidx) or np.any(maps[s][pidx] != maps[j][qidx]):
                raise OracleError(f"inconsistent selector orderings between {s!r} and {j!r}")

    N = len(labels)
    H = sp.csr_matrix((N, N))
    h = np.zeros(N)
    const = 0.0
    Ms, ms, Dl, dl, Dc, dc, segs = [], [], [], [], [], [], []
    lin_lb, lin_ub = [], []
    for s, prob in problems.items():
        T = sp.csr_matrix((np.ones(prob.size), (np.arange(prob.size), maps[s])), shape=(prob.size, N))
        H = H + T.T @ prob.H @ T
        h += T.T @ prob.h
        const += prob.const
        Ms.append(prob.M @ T)
        ms.append(prob.m)
        DT = prob.D @ T
        for seg, sl in zip(prob.omega.segments, prob.segment_slices()):
            if isinstance(seg, Box):
                Dl.append(DT[sl])
                dl.append(prob.d[sl])
                lin_lb.append(seg.lb)
                lin_ub.append(seg.ub)
            else:
                Dc.append(DT[sl])
                dc.append(prob.d[sl])
                segs.append(seg)
    D = sp.vstack(Dl + Dc, format="csr")
    d = np.concatenate(dl + dc)
    omega = ConeProduct(([Box(np.concatenate(lin_lb), np.concatenate(lin_ub))] if Dl else []) + segs)
    return CentralProblem(
        sp.csr_matrix(H), h, const, sp.vstack(Ms, format="csr"), np.concatenate(ms), D, d, omega, labels, maps
    )


@dataclass
class CentralSolution:
    x: np.ndarray
    objective: float
    eq_dual: np.ndarray  # mu with  Hx + h + M'mu - D'lam = 0
    lam: np.ndarray  # multipliers of Dx - d in Omega, lam in the dual cone
    kkt_residual: float
    status: str


def _clarabel(prob: cp.Problem) -> None:
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            prob.solve(solver=cp.CLARABEL, **SOLVER_OPTS)
    except cp.error.SolverError as exc:
        raise OracleError(f"conic solver failed: {exc}") from exc
    if prob.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        raise OracleError("problem is infeasible")
    if prob.status in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
        raise OracleError("problem is unbounded")
    if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        raise OracleError(f"solver status {prob.status}")


def _conic_constraints(x: cp.Variable, D: sp.csr_matrix, d: np.ndarray, omega: ConeProduct):
    cons, kinds = [], []
    pos = 0
    for seg in omega.segments:
        sl = slice(pos, pos + seg.dim)
        expr = D[sl] @ x - d[sl]
        if isinstance(seg, Box):
            if not np.isfinite(seg.ub).all():
                raise OracleError("box segments need finite upper bounds")
            lb_fin = np.isfinite(seg.lb)
            cons.append(expr <= seg.ub)
            kinds.append(("ub", sl))
            if lb_fin.any():
                rows = np.flatnonzero(lb_fin)
                cons.append(D[sl][rows] @ x - d[sl][rows] >= seg.lb[rows])
                kinds.append(("lb", sl, rows))
        else:
            cons.append(cp.SOC(expr[seg.dim - 1], expr[: seg.dim - 1]))
            kinds.append(("soc", sl))
        pos += seg.dim
    return cons, kinds


def _collect_lam(cons, kinds, m: int) -> np.ndarray:
    lam = np.zeros(m)
    for con, kind in zip(cons, kinds):
        if kind[0] == "ub":
            lam[kind[1]] -= np.asarray(con.dual_value).ravel()
        elif kind[0] == "lb":
            sl, rows = kind[1], kind[2]
            lam[sl.start + rows] += np.asarray(con.dual_value).ravel()
        else:
            t_dual, u_dual = con.dual_value
            sl = kind[1]
            lam[sl.start : sl.stop - 1] = np.asarray(u_dual).ravel()
            lam[sl.stop - 1] = float(np.asarray(t_dual).ravel()[0])
    return lam


def kkt_residual(
    H, h, M, m, D, d, omega: ConeProduct, x: np.ndarray, mu: np.ndarray, lam: np.ndarray
) -> float:
    """Max of stationarity, primal feasibility, dual-cone feasibility and complementarity violations."""
    stat = H @ x + h + (M.T @ mu if M.shape[0] else 0.0) - D.T @ lam
    r = [np.max(np.abs(stat), initial=0.0)]
    if M.shape[0]:
        r.append(np.max(np.abs(M @ x - m)))
    s = D @ x - d
    pos = 0
    for seg in omega.segments:
        sl = slice(pos, pos + seg.dim)
        if isinstance(seg, Box):
            r.append(np.max(np.maximum(s[sl] - seg.ub, 0.0), initial=0.0))
            r.append(np.max(np.maximum(seg.lb - s[sl], 0.0), initial=0.0))
            # only rows with a finite lower bound may carry a positive multiplier
            upper_only = ~np.isfinite(seg.lb)
            r.append(np.max(np.maximum(lam[sl][upper_only], 0.0), initial=0.0))
            act = np.where(lam[sl] < 0, s[sl] - seg.ub, np.where(lam[sl] > 0, s[sl] - seg.lb, 0.0))
            r.append(np.max(np.abs(lam[sl] * act), initial=0.0))
        else:
            v, l_ = s[sl], lam[sl]
            r.append(max(0.0, float(np.linalg.norm(v[:-1]) - v[-1])))
            r.append(max(0.0, float(np.linalg.norm(l_[:-1]) - l_[-1])))
            r.append(abs(float(v @ l_)))
        pos += seg.dim
    return float(max(r))


def solve_central(cpb: CentralProblem, tol: float = 1e-8) -> CentralSolution:
    """Interior-point solution of the stacked problem with multipliers and KKT residual."""
    x = cp.Variable(cpb.size)
    H = (cpb.H + cpb.H.T) / 2
    obj = 0.5 * cp.quad_form(x, cp.psd_wrap(H)) + cpb.h @ x + cpb.const
    cons, kinds = _conic_constraints(x, cpb.D, cpb.d, cpb.omega)
    eq = []
    if cpb.M.shape[0]:
        eq = [cpb.M @ x == cpb.m]
    prob = cp.Problem(cp.Minimize(obj), eq + cons)
    _clarabel(prob)
    xv = np.asarray(x.value).ravel()
    mu = np.asarray(eq[0].dual_value).ravel() if eq else np.zeros(0)
    lam = _collect_lam(cons, kinds, cpb.D.shape[0])
    kkt = kkt_residual(cpb.H, cpb.h, cpb.M, cpb.m, cpb.D, cpb.d, cpb.omega, xv, mu, lam)
    return CentralSolution(xv, cpb.objective(xv), mu, lam, kkt, prob.status)


def central_from_arrays(H, h, M=None, m=None, D=None, d=None, omega: ConeProduct | None = None) -> CentralProblem:
    n = len(h)
    M = sp.csr_matrix((0, n)) if M is None else sp.csr_matrix(M)
    m = np.zeros(0) if m is None else np.asarray(m, dtype=float)
    D = sp.csr_matrix((0, n)) if D is None else sp.csr_matrix(D)
    d = np.zeros(0) if d is None else np.asarray(d, dtype=float)
    omega = ConeProduct([]) if omega is None else omega
    return CentralProblem(
        sp.csr_matrix(H), np.asarray(h, dtype=float), 0.0, M, m, D, d, omega, [("x", i, 0) for i in range(n)], {}
    )


# ---------------------------------------------------------------------------
# distributed form with explicit coupling constraints


@dataclass
class FixedPoint:
    """Primal, splitting and dual values of an optimum in the solver's own coordinates."""

    x: dict[str, np.ndarray]
    y: dict[str, np.ndarray]
    lam: dict[str, np.ndarray]
    y1: dict[str, dict[str, np.ndarray]]
    lam1: dict[str, dict[str, np.ndarray]]
    y2: dict[str, dict[str, np.ndarray]]
    lam2: dict[str, dict[str, np.ndarray]]
    objective: float
    stationarity: float


def solve_stacked(problems: Mapping[str, AgentProblem]) -> FixedPoint:
    """Solve the per-agent problems jointly, keeping copies and coupling equalities explicit."""
    xs = {s: cp.Variable(p.size) for s, p in problems.items()}
    obj = 0
    cons_all = []
    kinds_of, cons_of, eq_of, couple = {}, {}, {}, {}
    for s, p in problems.items():
        H = (p.H + p.H.T) / 2
        obj = obj + 0.5 * cp.quad_form(xs[s], cp.psd_wrap(H)) + p.h @ xs[s] + p.const
        cons, kinds = _conic_constraints(xs[s], p.D, p.d, p.omega)
        cons_of[s], kinds_of[s] = cons, kinds
        eq_of[s] = p.M @ xs[s] == p.m
        cons_all += cons + [eq_of[s]]
    for s, p in problems.items():
        for j, pidx in p.P.items():
            if len(pidx):
                c = xs[s][pidx] - xs[j][problems[j].Q[s]] == 0
                couple[s, j] = c
                cons_all.append(c)
    prob = cp.Problem(cp.Minimize(obj), cons_all)
    _clarabel(prob)

    x = {s: np.asarray(v.value).ravel() for s, v in xs.items()}
    lam = {s: _collect_lam(cons_of[s], kinds_of[s], problems[s].D.shape[0]) for s in problems}
    y = {s: problems[s].D @ x[s] - problems[s].d for s in problems}
    y1 = {s: {j: x[s][idx].copy() for j, idx in p.P.items()} for s, p in problems.items()}
    y2 = {s: {j: x[s][idx].copy() for j, idx in p.Q.items()} for s, p in problems.items()}
    lam1 = {s: {j: np.zeros(len(idx)) for j, idx in p.P.items()} for s, p in problems.items()}
    lam2 = {s: {j: np.zeros(len(idx)) for j, idx in p.Q.items()} for s, p in problems.items()}
    for (s, j), c in couple.items():
        nu = np.asarray(c.dual_value).ravel()
        lam1[s][j] = -nu
        lam2[j][s] = nu.copy()
    # stationarity of every local Lagrangian, with the equality multiplier fitted by least squares
    worst = 0.0
    for s, p in problems.items():
        g = p.H @ x[s] + p.h - p.D.T @ lam[s]
        for j, idx in p.P.items():
            np.subtract.at(g, idx, lam1[s][j])
        for j, idx in p.Q.items():
            np.subtract.at(g, idx, lam2[s][j])
        mu = -np.asarray(eq_of[s].dual_value).ravel()
        worst = max(worst, float(np.max(np.abs(g - p.M.T @ mu), initial=0.0)))
    objective = float(sum(problems[s].objective(x[s]) for s in problems))
    return FixedPoint(x, y, lam, y1, lam1, y2, lam2, objective, worst)


# ---------------------------------------------------------------------------
# centralized model written directly from the network


def _psd_sqrt(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh((S + S.T) / 2)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


@dataclass
class DirectSolution:
    objective: float
    n: dict[tuple[str, int], float]
    q: dict[tuple[str, int], float]
    g: dict[tuple[str, int], float]


def solve_direct(
    net: Network, params: ParamSet, inputs: HorizonInputs, *, nominal: bool = False
) -> DirectSolution:
    """Centralized chance-constrained problem built straight from the network description.

    With ``nominal=True`` every variance is dropped, which leaves the
    deterministic MPC problem with the expected parameters.
    """
    if nominal:
        params = params.with_zero_variance()
    K = params.horizon
    c = chance_factor(inputs.epsilon)
    links = list(net.links)
    col = {z: i for i, z in enumerate(links)}
    phases = list(net.phases)
    pcol = {p: i for i, p in enumerate(phases)}
    n = cp.Variable((K, len(links)))
    q = cp.Variable((K, len(links)))
    g = cp.Variable((K, len(phases)))
    cons = [n >= 0, q >= 0, g >= 0]
    cost = 0

    def fhat(z: str, upto: int):
        """Upstream flows into z at steps 0..upto-1 (step-major), then the constant 1."""
        parts = [q[l, col[w]] for l in range(upto) for w in net.upstream_links[z]]
        return cp.hstack(parts + [1.0])

    for k in range(K):
        for z in links:
            lk = net.links[z]
            prev = inputs.counts[z] if k == 0 else n[k - 1, col[z]]
            inflow = sum(params.ratio_mean(w, z, k) * q[k, col[w]] for w in net.upstream_links[z])
            cons.append(n[k, col[z]] == prev + inflow - q[k, col[z]] + params.mean(("e", z, k)))
            a = inputs.weight("alpha", net, z, k)
            cost += a * cp.square(n[k, col[z]]) + inputs.weight("beta", net, z, k) * n[k, col[z]]
            cost -= inputs.weight("gamma", net, z, k) * q[k, col[z]]
            S1 = build_sigma1(net, params, z, k)
            if np.any(S1):
                cost += a * cp.quad_form(fhat(z, k + 1), cp.psd_wrap(S1))
            if net.nodes[lk.downstream].is_junction:
                cons.append(q[k, col[z]] <= lk.saturation_flow * sum(g[k, pcol[p]] for p in net.phases_of_link[z]))
            else:
                cons.append(q[k, col[z]] <= inputs.outflow_cap(net, z))
        for p in phases:
            cons.append(g[k, pcol[p]] <= net.phases[p].max_split)
        for junc in net.junctions.values():
            cons.append(sum(g[k, pcol[p]] for p in junc.phases) <= junc.cycle_budget)

    for z in links:
        lk = net.links[z]
        sd0 = math.sqrt(params.get(("e", z, 0)).variance)
        cons.append(q[0, col[z]] <= inputs.counts[z] + params.mean(("e", z, 0)) - c * sd0)
        for k in range(1, K):
            e_k = params.mean(("e", z, k))
            S2 = build_sigma2(net, params, z, k)
            if net.is_source(z):
                sd = math.sqrt(S2[0, 0])
                cons.append(q[k, col[z]] - n[k - 1, col[z]] <= e_k - c * sd)
                cons.append(n[k - 1, col[z]] <= lk.capacity - e_k - c * sd)
            else:
                cons.append(c * cp.norm(_psd_sqrt(S2) @ fhat(z, k)) <= n[k - 1, col[z]] - q[k, col[z]] + e_k)
        if not net.is_source(z):
            for k in range(K):
                S1 = build_sigma1(net, params, z, k)
                cons.append(
                    c * cp.norm(_psd_sqrt(S1) @ fhat(z, k + 1)) <= lk.capacity - n[k, col[z]] - q[k, col[z]]
                )
    prob = cp.Problem(cp.Minimize(cost), cons)
    _clarabel(prob)
    nv, qv, gv = n.value, q.value, g.value
    return DirectSolution(
        float(prob.value),
        {(z, k): float(nv[k, col[z]]) for z in links for k in range(K)},
        {(z, k): float(qv[k, col[z]]) for z in links for k in range(K)},
        {(p, k): float(gv[k, pcol[p]]) for p in phases for k in range(K)},
    )
