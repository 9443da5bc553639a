"""Distributed proximal ADMM over subnetwork agents.

Every agent keeps its own iterate and talks to its neighbours only through
:class:`NeighborMessage`. Rounds are synchronous: all x-updates complete
before any splitting, consensus or dual update of the same round.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, TextIO

import numpy as np
import scipy.linalg as sla

from .assembly import AgentProblem
from .cones import project_product


class AdmmError(RuntimeError):
    pass


@dataclass
class KktCache:
    """Factorizations for the equality-constrained x-step of one agent.

    ``x = W @ hhat + w0`` is the closed-form minimizer of
    ``1/2 x'(H + eta I)x - hhat'x`` subject to ``Mx = m``.
    """

    eta: float
    rho: float
    hhat_factor: tuple
    schur_factor: tuple | None
    W: np.ndarray
    w0: np.ndarray
    R: np.ndarray  # eta I - rho A'A
    D: np.ndarray
    Dt: np.ndarray

    @classmethod
    def build(cls, prob: AgentProblem, rho: float | None = None) -> "KktCache":
        rho = prob.rho if rho is None else rho
        eta = prob.eta_for(rho)
        n = prob.size
        Hhat = prob.H.toarray() + eta * np.eye(n)
        try:
            hf = sla.cho_factor(Hhat)
        except np.linalg.LinAlgError as exc:
            raise AdmmError(f"agent {prob.agent}: H + eta I is not positive definite") from exc
        Hinv = sla.cho_solve(hf, np.eye(n))
        M = prob.M.toarray()
        if M.shape[0]:
            HinvMt = Hinv @ M.T
            S = M @ HinvMt
            try:
                sf = sla.cho_factor(S)
            except np.linalg.LinAlgError as exc:
                raise AdmmError(f"agent {prob.agent}: singular Schur complement (rank-deficient M)") from exc
            if np.min(np.diag(sf[0])) ** 2 < 1e-14 * np.max(np.abs(S)):
                raise AdmmError(f"agent {prob.agent}: singular Schur complement (rank-deficient M)")
            W = Hinv - HinvMt @ sla.cho_solve(sf, HinvMt.T)
            w0 = HinvMt @ sla.cho_solve(sf, prob.m)
        else:
            sf = None
            W = Hinv
            w0 = np.zeros(n)
        A = prob.A().toarray()
        R = eta * np.eye(n) - rho * (A.T @ A)
        D = prob.D.toarray()
        return cls(eta, rho, hf, sf, W, w0, R, D, np.ascontiguousarray(D.T))


@dataclass
class AgentState:
    x: np.ndarray
    y: np.ndarray
    lam: np.ndarray
    y1: dict[str, np.ndarray]
    lam1: dict[str, np.ndarray]
    y2: dict[str, np.ndarray]
    lam2: dict[str, np.ndarray]
    it: int = 0
    r: np.ndarray | None = field(default=None, repr=False)  # D x - d at the current x

    @classmethod
    def initial(cls, prob: AgentProblem) -> "AgentState":
        m = prob.omega.dim
        return cls(
            x=np.zeros(prob.size),
            y=project_product(np.zeros(m), prob.omega),
            lam=np.zeros(m),
            y1={j: np.zeros(len(v)) for j, v in prob.P.items()},
            lam1={j: np.zeros(len(v)) for j, v in prob.P.items()},
            y2={j: np.zeros(len(v)) for j, v in prob.Q.items()},
            lam2={j: np.zeros(len(v)) for j, v in prob.Q.items()},
        )

    def copy(self) -> "AgentState":
        return AgentState(
            self.x.copy(),
            self.y.copy(),
            self.lam.copy(),
            {j: v.copy() for j, v in self.y1.items()},
            {j: v.copy() for j, v in self.lam1.items()},
            {j: v.copy() for j, v in self.y2.items()},
            {j: v.copy() for j, v in self.lam2.items()},
            self.it,
            None if self.r is None else self.r.copy(),
        )

    def vector(self) -> np.ndarray:
        """Concatenation ``(x, y, y1.., y2.., lam, lam1.., lam2..)`` in neighbour order."""
        parts = [self.x, self.y, *self.y1.values(), *self.y2.values(), self.lam, *self.lam1.values(), *self.lam2.values()]
        return np.concatenate(parts)


@dataclass(frozen=True)
class NeighborMessage:
    sender: str
    receiver: str
    iteration: int
    p_part: np.ndarray  # P x - lam1 / rho
    q_part: np.ndarray  # Q x - lam2 / rho
    flag: int | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "sender": self.sender,
            "receiver": self.receiver,
            "iteration": self.iteration,
            "p_part": self.p_part.tolist(),
            "q_part": self.q_part.tolist(),
            "flag": self.flag,
        }


# ---------------------------------------------------------------------------
# update law


def x_update(state: AgentState, prob: AgentProblem, cache: KktCache) -> np.ndarray:
    rho = cache.rho
    hhat = cache.R @ state.x + cache.Dt @ (state.lam + rho * (state.y + prob.d)) - prob.h
    for j, idx in prob.P.items():
        hhat[idx] += state.lam1[j] + rho * state.y1[j]
    for j, idx in prob.Q.items():
        hhat[idx] += state.lam2[j] + rho * state.y2[j]
    return cache.W @ hhat + cache.w0


def y_update(state: AgentState, prob: AgentProblem, cache: KktCache) -> np.ndarray:
    state.r = cache.D @ state.x - prob.d
    return project_product(state.r - state.lam / cache.rho, prob.omega)


def outgoing(state: AgentState, prob: AgentProblem, rho: float) -> dict[str, NeighborMessage]:
    msgs = {}
    for j in prob.P:
        msgs[j] = NeighborMessage(
            prob.agent,
            j,
            state.it + 1,
            state.x[prob.P[j]] - state.lam1[j] / rho,
            state.x[prob.Q[j]] - state.lam2[j] / rho,
        )
    return msgs


def consensus_update(
    state: AgentState, prob: AgentProblem, own: Mapping[str, NeighborMessage], inbox: Mapping[str, NeighborMessage]
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Average the two halves of every coupling; the neighbour computes the mirror value from the same operands."""
    y1, y2 = {}, {}
    for j in prob.P:
        msg = inbox.get(j)
        if msg is None or msg.iteration != own[j].iteration or msg.receiver != prob.agent:
            raise AdmmError(f"agent {prob.agent}: missing or stale message from {j}")
        y1[j] = 0.5 * (own[j].p_part + msg.q_part)
        y2[j] = 0.5 * (msg.p_part + own[j].q_part)
    return y1, y2


def dual_update(state: AgentState, prob: AgentProblem, rho: float) -> None:
    state.lam = state.lam - rho * (state.r - state.y)
    for j, idx in prob.P.items():
        state.lam1[j] = state.lam1[j] - rho * (state.x[idx] - state.y1[j])
    for j, idx in prob.Q.items():
        state.lam2[j] = state.lam2[j] - rho * (state.x[idx] - state.y2[j])


def residual(state: AgentState, prob: AgentProblem) -> float:
    """Largest entry of ``Dx - y - d`` and of the coupling residuals."""
    r = state.r if state.r is not None else prob.D @ state.x - prob.d
    out = float(np.max(np.abs(r - state.y), initial=0.0))
    for j, idx in prob.P.items():
        out = max(out, float(np.max(np.abs(state.x[idx] - state.y1[j]), initial=0.0)))
    for j, idx in prob.Q.items():
        out = max(out, float(np.max(np.abs(state.x[idx] - state.y2[j]), initial=0.0)))
    return out


def check_termination(state: AgentState, prob: AgentProblem, tol: float = 1e-6) -> int:
    return int(residual(state, prob) <= tol)


def min_consensus(flags: Mapping[str, int], neighbors: Mapping[str, Any], rounds: int) -> dict[str, int]:
    """Each round every agent takes the minimum over itself and its neighbours."""
    cur = dict(flags)
    for _ in range(rounds):
        cur = {i: min([cur[i]] + [cur[j] for j in neighbors[i]]) for i in cur}
    return cur


# ---------------------------------------------------------------------------
# driver


@dataclass
class SolveResult:
    x: dict[str, np.ndarray]
    states: dict[str, AgentState]
    iterations: int
    converged: bool
    residual: float
    objective: float
    residual_history: list[float]
    wall_time: float
    diagnosis: str | None = None
    compute_time: float = 0.0  # sum of all agents' work
    critical_path_time: float = 0.0  # slowest agent per phase, summed: the time with one worker per agent

    def stats(self) -> dict[str, Any]:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "residual": self.residual,
            "objective": self.objective,
            "wall_time": self.wall_time,
            "compute_time": self.compute_time,
            "critical_path_time": self.critical_path_time,
            "diagnosis": self.diagnosis,
        }


def total_objective(problems: Mapping[str, AgentProblem], xs: Mapping[str, np.ndarray]) -> float:
    return float(sum(problems[s].objective(xs[s]) for s in problems))


def shift_state(state: AgentState, prob: AgentProblem) -> AgentState:
    """Move every per-step block one step earlier, repeating the last step."""
    lay = prob.layout
    K = lay.horizon
    new = state.copy()
    src = np.arange(lay.size)
    for i, lab in enumerate(lay.labels):
        if lab[2] < K - 1:
            src[i] = lay.index[lab[:2] + (lab[2] + 1,)]
    new.x = state.x[src]

    def shift_block(v: np.ndarray) -> np.ndarray:
        if v.size == 0:
            return v.copy()
        per = v.size // K
        return np.concatenate([v[per:], v[-per:]])

    for d in (new.y1, new.lam1, new.y2, new.lam2):
        for j in d:
            d[j] = shift_block(d[j])
    new.it = 0
    new.r = None
    return new


def solve(
    problems: Mapping[str, AgentProblem],
    *,
    rho: float | None = None,
    tol: float = 1e-6,
    max_iter: int = 20_000,
    warm_start: Mapping[str, AgentState] | None = None,
    caches: Mapping[str, KktCache] | None = None,
    trace: TextIO | None = None,
    callback: Callable[[int, Mapping[str, AgentState]], None] | None = None,
    workers: int = 1,
    consensus_rounds: int | None = None,
) -> SolveResult:
    """Run the distributed iteration until every agent's residual is below ``tol``."""
    t0 = time.perf_counter()
    ids = list(problems)
    rho_of = {s: problems[s].rho if rho is None else rho for s in ids}
    if caches is None:
        caches = {s: KktCache.build(problems[s], rho_of[s]) for s in ids}
    if warm_start is not None:
        states = {s: warm_start[s].copy() for s in ids}
        for st in states.values():
            st.it = 0
    else:
        states = {s: AgentState.initial(problems[s]) for s in ids}
    nbrs = {s: sorted(set(problems[s].P) | set(problems[s].Q), key=ids.index) for s in ids}
    rounds = len(ids) if consensus_rounds is None else consensus_rounds
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def run(fn: Callable[[str], Any]) -> list[Any]:
        if pool is None:
            return [fn(s) for s in ids]
        return list(pool.map(fn, ids))

    spent = {s: 0.0 for s in ids}
    compute = critical = 0.0

    def phase_x(s: str) -> None:
        t = time.perf_counter()
        states[s].x = x_update(states[s], problems[s], caches[s])
        spent[s] = time.perf_counter() - t

    def phase_y(s: str) -> dict[str, NeighborMessage]:
        t = time.perf_counter()
        st = states[s]
        st.y = y_update(st, problems[s], caches[s])
        msgs = outgoing(st, problems[s], caches[s].rho)
        spent[s] = time.perf_counter() - t
        return msgs

    def account() -> None:
        nonlocal compute, critical
        compute += sum(spent.values())
        critical += max(spent.values())

    history: list[float] = []
    best = (np.inf, None, -1)
    converged = False
    res = np.inf
    it = 0
    if callback is not None:
        callback(0, states)
    try:
        for it in range(1, max_iter + 1):
            run(phase_x)
            account()
            outboxes = dict(zip(ids, run(phase_y)))
            account()
            flags = {}
            local_res = {}
            for s in ids:
                t = time.perf_counter()
                st, prob = states[s], problems[s]
                inbox = {j: outboxes[j][s] for j in prob.P}
                st.y1, st.y2 = consensus_update(st, prob, outboxes[s], inbox)
                dual_update(st, prob, caches[s].rho)
                st.it = it
                local_res[s] = residual(st, prob)
                flags[s] = int(local_res[s] <= tol)
                spent[s] = time.perf_counter() - t
            account()
            res = max(local_res.values())
            history.append(res)
            if res < best[0]:
                best = (res, {s: states[s].copy() for s in ids}, it)
            if trace is not None:
                obj = total_objective(problems, {s: states[s].x for s in ids})
                trace.write(json.dumps({"iter": it, "residual": res, "objective": obj}) + "\n")
            if callback is not None:
                callback(it, states)
            agreed = min_consensus(flags, nbrs, rounds)
            if all(agreed.values()):
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()

    diagnosis = None
    if not converged:
        diagnosis = f"max_iter {max_iter} reached; best residual {best[0]:.3e} at iteration {best[2]}"
        if best[1] is not None:
            states = best[1]
            res = best[0]
    xs = {s: states[s].x.copy() for s in ids}
    return SolveResult(
        x=xs,
        states=states,
        iterations=it,
        converged=converged,
        residual=float(res),
        objective=total_objective(problems, xs),
        residual_history=history,
        wall_time=time.perf_counter() - t0,
        diagnosis=diagnosis,
        compute_time=compute,
        critical_path_time=critical,
    )
