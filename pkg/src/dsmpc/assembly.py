"""Per-agent QP data with linear and second-order-cone constraints.

Each agent ``S`` owns

* the expected counts ``n[z, k]`` of links leaving its junctions, plus its source links,
* the expected outflows ``q[z, k]`` of links entering its junctions, plus its destination links,
* the splits ``g[p, k]`` of its phases,
* a copy ``c[z, k]`` of the outflow of every link leaving it towards a neighbour.

The local problem is ``min 1/2 x'Hx + h'x`` subject to ``Mx = m`` and
``Dx - d`` in ``R_-^l x SOC x ... x SOC``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cones import SOC, Box, ConeProduct
from .network import Network, Partition
from .stochastic import (
    ParamSet,
    build_sigma1,
    build_sigma2,
    chance_factor,
    factorize,
    sigma1_keys,
    sigma2_keys,
)

DEFAULT_RHO = 0.01


class AssemblyError(ValueError):
    pass


# ---------------------------------------------------------------------------
# inputs and layout


@dataclass
class HorizonInputs:
    """Measured state and tuning for one MPC solve.

    Weights may be scalars, per-link mappings, or per-link lists indexed by step.
    ``alpha`` defaults to ``1 / capacity`` of each link.
    """

    counts: Mapping[str, float]
    epsilon: float = 0.2
    alpha: Any = None
    beta: Any = 0.3
    gamma: Any = 0.3
    outflow_caps: Mapping[str, float] | None = None

    def __post_init__(self) -> None:
        chance_factor(self.epsilon)

    def weight(self, name: str, net: Network, z: str, k: int) -> float:
        w = getattr(self, name)
        if w is None and name == "alpha":
            return 1.0 / net.links[z].capacity
        if isinstance(w, Mapping):
            w = w[z]
        if isinstance(w, (list, tuple)):
            w = w[k]
        return float(w)

    def outflow_cap(self, net: Network, z: str) -> float:
        if self.outflow_caps is not None and z in self.outflow_caps:
            return float(self.outflow_caps[z])
        cap = net.links[z].outflow_cap
        if cap is None:
            raise AssemblyError(f"destination link {z!r} has no outflow cap")
        return cap


@dataclass
class VariableLayout:
    agent: str
    horizon: int
    n_links: tuple[str, ...]
    q_links: tuple[str, ...]
    phases: tuple[str, ...]
    copies: dict[str, tuple[str, ...]]  # neighbour -> links leaving towards it
    labels: list[tuple] = field(default_factory=list)
    index: dict[tuple, int] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.labels)

    def n(self, z: str, k: int) -> int:
        return self.index[("n", z, k)]

    def q(self, z: str, k: int) -> int:
        """Outflow of ``z``: the owned variable when present, otherwise the local copy."""
        key = ("q", z, k)
        if key in self.index:
            return self.index[key]
        return self.index[("c", z, k)]

    def g(self, p: str, k: int) -> int:
        return self.index[("g", p, k)]


def build_layout(net: Network, part: Partition, agent: str, horizon: int) -> VariableLayout:
    if horizon < 1:
        raise AssemblyError("horizon must be at least 1")
    n_links = tuple(z for z in net.links if part.n_owner(net, z) == agent)
    q_links = tuple(z for z in net.links if part.q_owner(net, z) == agent)
    sub = part.subnetworks[agent]
    phases = tuple(p for j in net.junctions if j in sub.junctions for p in net.junctions[j].phases)
    copies = {j: part.boundary[(agent, j)] for j in part.neighbors[agent] if (agent, j) in part.boundary}
    lay = VariableLayout(agent, horizon, n_links, q_links, phases, copies)
    labels: list[tuple] = []
    for k in range(horizon):
        labels += [("n", z, k) for z in n_links]
        labels += [("q", z, k) for z in q_links]
        labels += [("g", p, k) for p in phases]
    for j, zs in copies.items():
        labels += [("c", z, k) for k in range(horizon) for z in zs]
    lay.labels = labels
    lay.index = {lab: i for i, lab in enumerate(labels)}
    return lay


# ---------------------------------------------------------------------------
# cost


def build_cost(
    net: Network, layout: VariableLayout, inputs: HorizonInputs, params: ParamSet
) -> tuple[sp.csr_matrix, np.ndarray, float]:
    """Quadratic ``(H, h)`` and the constant part of the expected stage cost."""
    n = layout.size
    rows, cols, vals = [], [], []
    h = np.zeros(n)
    const = 0.0
    for k in range(layout.horizon):
        for z in layout.n_links:
            a = inputs.weight("alpha", net, z, k)
            b = inputs.weight("beta", net, z, k)
            i = layout.n(z, k)
            rows.append(i), cols.append(i), vals.append(2.0 * a)
            h[i] += b
            if a == 0.0:
                continue
            sigma = build_sigma1(net, params, z, k)
            ratio_keys, _ = sigma1_keys(net, z, k)
            idx = [_var(layout, ("q", key[1], key[3])) for key in ratio_keys]
            last = len(idx)
            for s, ia in enumerate(idx):
                for t, ib in enumerate(idx):
                    if sigma[s, t] != 0.0:
                        rows.append(ia), cols.append(ib), vals.append(2.0 * a * sigma[s, t])
                h[ia] += 2.0 * a * sigma[s, last]
            const += a * sigma[last, last]
        for z in layout.q_links:
            h[layout.index[("q", z, k)]] -= inputs.weight("gamma", net, z, k)
    H = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    H.sum_duplicates()
    return H, h, const


def _var(layout: VariableLayout, key: tuple) -> int:
    kind, z, k = key
    try:
        if kind == "q":
            return layout.q(z, k)
        return layout.index[key]
    except KeyError:
        raise AssemblyError(f"variable {key!r} referenced but not in the layout of {layout.agent!r}") from None


# ---------------------------------------------------------------------------
# dynamics


def build_dynamics(
    net: Network, layout: VariableLayout, inputs: HorizonInputs, params: ParamSet
) -> tuple[sp.csr_matrix, np.ndarray]:
    """Rows ``n[z,k] - n[z,k-1] - sum_w r[w,z,k] q[w,k] + q[z,k] = e[z,k]`` (``n[z,-1]`` measured)."""
    rows, cols, vals, rhs = [], [], [], []
    r = 0
    for k in range(layout.horizon):
        for z in layout.n_links:
            entries = {layout.n(z, k): 1.0}
            if k > 0:
                entries[layout.n(z, k - 1)] = -1.0
            for w in net.upstream_links[z]:
                col = _var(layout, ("q", w, k))
                entries[col] = entries.get(col, 0.0) - params.ratio_mean(w, z, k)
            col = _var(layout, ("q", z, k))
            entries[col] = entries.get(col, 0.0) + 1.0
            b = params.mean(("e", z, k))
            if k == 0:
                if z not in inputs.counts:
                    raise AssemblyError(f"missing measured count for link {z!r}")
                b += float(inputs.counts[z])
            for c, v in entries.items():
                rows.append(r), cols.append(c), vals.append(v)
            rhs.append(b)
            r += 1
    M = sp.csr_matrix((vals, (rows, cols)), shape=(r, layout.size))
    return M, np.asarray(rhs, dtype=float)


# ---------------------------------------------------------------------------
# inequalities


@dataclass
class _RowBuilder:
    size: int
    lin_rows: list[dict[int, float]] = field(default_factory=list)
    lin_rhs: list[float] = field(default_factory=list)
    lin_tags: list[tuple] = field(default_factory=list)
    cones: list[tuple[np.ndarray, np.ndarray, tuple]] = field(default_factory=list)

    def linear(self, entries: Mapping[int, float], rhs: float, tag: tuple) -> None:
        """``entries . x <= rhs``."""
        self.lin_rows.append(dict(entries))
        self.lin_rhs.append(float(rhs))
        self.lin_tags.append(tag)

    def cone(
        self,
        lead: np.ndarray,
        lead_cols: Sequence[int],
        lead_const: np.ndarray,
        margin: Mapping[int, float],
        margin_const: float,
        tag: tuple,
    ) -> None:
        """``||lead @ x[lead_cols] + lead_const|| <= margin . x + margin_const``.

        Falls back to a linear row when the left side does not depend on ``x``.
        """
        if lead.shape[0] == 0 or not np.any(lead):
            radius = float(np.linalg.norm(lead_const)) if lead_const.size else 0.0
            self.linear({c: -v for c, v in margin.items()}, margin_const - radius, tag + ("linear",))
            return
        dim = lead.shape[0] + 1
        Dblk = np.zeros((dim, self.size))
        for j, c in enumerate(lead_cols):
            Dblk[:-1, c] += lead[:, j]
        for c, v in margin.items():
            Dblk[-1, c] += v
        dblk = np.concatenate([-lead_const, [-margin_const]])
        self.cones.append((Dblk, dblk, tag))


def build_inequalities(
    net: Network, layout: VariableLayout, inputs: HorizonInputs, params: ParamSet
) -> tuple[sp.csr_matrix, np.ndarray, ConeProduct, list[tuple]]:
    """Stacked ``(D, d, Omega)`` with one tag per linear row and per cone."""
    K = layout.horizon
    c = chance_factor(inputs.epsilon)
    rb = _RowBuilder(layout.size)
    sub_phases = set(layout.phases)

    for i, lab in enumerate(layout.labels):
        rb.linear({i: -1.0}, 0.0, ("nonneg",) + lab)

    for z in layout.q_links:
        # outflow cannot exceed what is available, with the chance margin
        sd = math.sqrt(build_sigma2(net, params, z, 0)[0, 0])
        n0 = float(inputs.counts[z])
        rb.linear({layout.q(z, 0): 1.0}, n0 + params.mean(("e", z, 0)) - c * sd, ("available", z, 0))

    for k in range(K):
        for z in layout.q_links:
            lk = net.links[z]
            if net.nodes[lk.downstream].is_junction:
                ps = net.phases_of_link[z]
                if not ps:
                    raise AssemblyError(f"link {z!r} needs green time but no phase grants it")
                entries = {layout.q(z, k): 1.0}
                for p in ps:
                    if p not in sub_phases:
                        raise AssemblyError(f"phase {p!r} of link {z!r} not owned by {layout.agent!r}")
                    entries[layout.g(p, k)] = entries.get(layout.g(p, k), 0.0) - lk.saturation_flow
                rb.linear(entries, 0.0, ("green", z, k))
            else:
                rb.linear({layout.q(z, k): 1.0}, inputs.outflow_cap(net, z), ("exit_cap", z, k))
        for p in layout.phases:
            rb.linear({layout.g(p, k): 1.0}, net.phases[p].max_split, ("max_split", p, k))
        for j, junc in net.junctions.items():
            if junc.phases[0] in sub_phases:
                rb.linear({layout.g(p, k): 1.0 for p in junc.phases}, junc.cycle_budget, ("budget", j, k))

    for z in layout.n_links:
        cap = net.links[z].capacity
        if net.is_source(z):
            for k in range(1, K):
                sd = math.sqrt(build_sigma2(net, params, z, k)[0, 0])
                e_k = params.mean(("e", z, k))
                rb.linear({layout.n(z, k - 1): -1.0, layout.q(z, k): 1.0}, e_k - c * sd, ("src_available", z, k))
                rb.linear({layout.n(z, k - 1): 1.0}, cap - e_k - c * sd, ("src_space", z, k))
            continue
        for k in range(1, K):
            fac = factorize(build_sigma2(net, params, z, k)).G
            keys, _ = sigma2_keys(net, z, k)
            cols = [_var(layout, ("q", key[1], key[3])) for key in keys]
            margin = {layout.n(z, k - 1): 1.0}
            qz = layout.q(z, k)
            margin[qz] = margin.get(qz, 0.0) - 1.0
            rb.cone(c * fac[:, :-1], cols, c * fac[:, -1], margin, params.mean(("e", z, k)), ("soc_available", z, k))
        for k in range(K):
            fac = factorize(build_sigma1(net, params, z, k)).G
            keys, _ = sigma1_keys(net, z, k)
            cols = [_var(layout, ("q", key[1], key[3])) for key in keys]
            margin = {layout.n(z, k): -1.0}
            qz = layout.q(z, k)
            margin[qz] = margin.get(qz, 0.0) - 1.0
            rb.cone(c * fac[:, :-1], cols, c * fac[:, -1], margin, cap, ("soc_space", z, k))

    n_lin = len(rb.lin_rows)
    rows, cols_, vals = [], [], []
    for r, entries in enumerate(rb.lin_rows):
        for col, v in entries.items():
            rows.append(r), cols_.append(col), vals.append(v)
    D_lin = sp.csr_matrix((vals, (rows, cols_)), shape=(n_lin, layout.size))
    blocks = [D_lin] + [sp.csr_matrix(Dblk) for Dblk, _, _ in rb.cones]
    D = sp.vstack(blocks, format="csr") if blocks else sp.csr_matrix((0, layout.size))
    d = np.concatenate([np.asarray(rb.lin_rhs, dtype=float)] + [dblk for _, dblk, _ in rb.cones])
    segments = [Box.nonpositive(n_lin)] if n_lin else []
    segments += [SOC(Dblk.shape[0]) for Dblk, _, _ in rb.cones]
    tags = list(rb.lin_tags) + [tag for _, _, tag in rb.cones]
    return D, d, ConeProduct(segments), tags


# ---------------------------------------------------------------------------
# coupling and step size


def build_coupling(
    layout_i: VariableLayout, layout_j: VariableLayout, part: Partition
) -> tuple[np.ndarray, np.ndarray]:
    """Index selectors ``(P_ij, Q_ij)`` for agent ``i`` facing neighbour ``j``.

    ``P_ij`` picks ``i``'s copies of the links ``i -> j``; ``Q_ij`` picks the
    flows ``i`` owns on links ``j -> i``. The constraint is ``P_ij x_i = Q_ji x_j``.
    """
    i, j = layout_i.agent, layout_j.agent
    if j not in part.neighbors[i]:
        raise AssemblyError(f"{j!r} is not a neighbour of {i!r}")
    K = layout_i.horizon
    out_links = part.boundary.get((i, j), ())
    in_links = part.boundary.get((j, i), ())
    P = np.array([layout_i.index[("c", z, k)] for k in range(K) for z in out_links], dtype=int)
    Q = np.array([layout_i.index[("q", z, k)] for k in range(K) for z in in_links], dtype=int)
    # the neighbour derives the mirror image independently
    P_mirror = [("q", z, k) for k in range(layout_j.horizon) for z in out_links]
    if len(P_mirror) != P.size or any(lab not in layout_j.index for lab in P_mirror):
        raise AssemblyError(f"coupling order mismatch between {i!r} and {j!r}")
    return P, Q


def selector(idx: np.ndarray, size: int) -> sp.csr_matrix:
    n = len(idx)
    return sp.csr_matrix((np.ones(n), (np.arange(n), np.asarray(idx, dtype=int))), shape=(n, size))


def compute_eta(A: sp.spmatrix | np.ndarray, tol: float = 1e-6, max_iter: int = 10_000) -> float:
    """``1.01 * lambda_max(A'A)`` estimated by power iteration."""
    A = sp.csr_matrix(A)
    n = A.shape[1]
    if n == 0 or A.nnz == 0:
        return 0.0
    B = A.T @ A
    if n <= 4000:
        B = B.toarray()
    v = np.ones(n) / math.sqrt(n) + 1e-3 * np.arange(n) / n
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = B @ v
        new = float(np.linalg.norm(w))
        if new == 0.0:
            return 0.0
        v = w / new
        if abs(new - lam) <= tol * new:
            return 1.01 * new
        lam = new
    raise AssemblyError("power iteration did not converge")


# ---------------------------------------------------------------------------
# agent problem


@dataclass
class AgentProblem:
    agent: str
    layout: VariableLayout
    H: sp.csr_matrix
    h: np.ndarray
    const: float
    M: sp.csr_matrix
    m: np.ndarray
    D: sp.csr_matrix
    d: np.ndarray
    omega: ConeProduct
    tags: list[tuple]
    P: dict[str, np.ndarray]
    Q: dict[str, np.ndarray]
    rho: float = DEFAULT_RHO
    eta_base: float = 0.0  # 1.01 * lambda_max(A'A)
    eta_rule: str = "scaled"

    @property
    def size(self) -> int:
        return self.layout.size

    def eta_for(self, rho: float) -> float:
        """Proximal weight keeping ``eta I - rho A'A`` positive definite.

        ``"scaled"`` uses ``rho * eta_base``, the smallest safe choice;
        ``"plain"`` uses ``eta_base`` itself (scaled up when ``rho > 1``).
        """
        if self.eta_rule == "scaled":
            return rho * self.eta_base
        if self.eta_rule == "plain":
            return self.eta_base * max(1.0, rho)
        raise AssemblyError(f"unknown eta rule {self.eta_rule!r}")

    @property
    def eta(self) -> float:
        return self.eta_for(self.rho)

    @property
    def neighbors(self) -> list[str]:
        return list(self.P)

    def P_matrix(self, j: str) -> sp.csr_matrix:
        return selector(self.P[j], self.size)

    def Q_matrix(self, j: str) -> sp.csr_matrix:
        return selector(self.Q[j], self.size)

    def A(self) -> sp.csr_matrix:
        blocks = [self.D] + [self.P_matrix(j) for j in self.P] + [self.Q_matrix(j) for j in self.Q]
        return sp.vstack(blocks, format="csr")

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.H @ x) + self.h @ x + self.const)

    def segment_slices(self) -> list[slice]:
        out, pos = [], 0
        for seg in self.omega.segments:
            out.append(slice(pos, pos + seg.dim))
            pos += seg.dim
        return out


def assemble(
    net: Network,
    part: Partition,
    params: ParamSet,
    inputs: HorizonInputs,
    *,
    rho: float = DEFAULT_RHO,
    nominal: bool = False,
    eta_rule: str = "scaled",
) -> dict[str, AgentProblem]:
    """Assemble every agent's problem for one MPC step."""
    K = params.horizon
    if nominal:
        params = params.with_zero_variance()
    params.validate(net)
    for z in net.links:
        if z not in inputs.counts:
            raise AssemblyError(f"missing measured count for link {z!r}")
    layouts = {s: build_layout(net, part, s, K) for s in part.ids}
    problems = {}
    for s, lay in layouts.items():
        H, h, const = build_cost(net, lay, inputs, params)
        M, m = build_dynamics(net, lay, inputs, params)
        D, d, omega, tags = build_inequalities(net, lay, inputs, params)
        P, Q = {}, {}
        for j in part.neighbors[s]:
            P[j], Q[j] = build_coupling(lay, layouts[j], part)
        prob = AgentProblem(s, lay, H, h, const, M, m, D, d, omega, tags, P, Q, rho=rho, eta_rule=eta_rule)
        prob.eta_base = compute_eta(prob.A())
        prob.eta_for(rho)
        problems[s] = prob
    return problems


def precheck(net: Network, inputs: HorizonInputs) -> list[dict[str, Any]]:
    """Cheap sufficient checks for an empty feasible set; an empty list means nothing was found."""
    issues = []
    for z, lk in net.links.items():
        n0 = float(inputs.counts.get(z, 0.0))
        if n0 > lk.capacity:
            issues.append({"kind": "over_capacity", "link": z, "count": n0, "capacity": lk.capacity})
        if n0 < 0:
            issues.append({"kind": "negative_count", "link": z, "count": n0})
    for p in net.phases.values():
        if p.max_split < 0:
            issues.append({"kind": "negative_split_bound", "phase": p.id})
    return issues


def reference_point(prob: AgentProblem) -> np.ndarray:
    """Zero flows and splits, with the expected counts that the dynamics then imply."""
    lay = prob.layout
    ncols = np.array([i for i, lab in enumerate(lay.labels) if lab[0] == "n"], dtype=int)
    x = np.zeros(lay.size)
    if ncols.size:
        x[ncols] = spla.spsolve(sp.csc_matrix(prob.M[:, ncols]), prob.m)
    return x


def relax_to_reference(problems: Mapping[str, AgentProblem]) -> tuple[dict[str, AgentProblem], list[dict]]:
    """Loosen constant terms so that the zero-flow point is feasible.

    Used by the closed-loop controller, where measured states can make the
    chance constraints unsatisfiable. Returns the relaxed problems and one
    report entry per loosened row or cone.
    """
    out, report = {}, []
    for s, prob in problems.items():
        x0 = reference_point(prob)
        r = prob.D @ x0 - prob.d
        d = prob.d.copy()
        for seg, sl, tag in zip(prob.omega.segments, prob.segment_slices(), _segment_tags(prob)):
            v = r[sl]
            if isinstance(seg, Box):
                over = np.maximum(v - seg.ub, 0.0)
                for i in np.flatnonzero(over > 0):
                    d[sl.start + i] += over[i]
                    report.append({"agent": s, "tag": prob.tags[sl.start + i], "amount": float(over[i])})
            else:
                gap = float(np.linalg.norm(v[:-1]) - v[-1])
                if gap > 0:
                    d[sl.stop - 1] -= gap
                    report.append({"agent": s, "tag": tag, "amount": gap})
        relaxed = AgentProblem(**{**prob.__dict__, "d": d})
        out[s] = relaxed
    return out, report


def _segment_tags(prob: AgentProblem) -> list[tuple]:
    n_lin = prob.omega.n_linear
    return [("linear",)] * (1 if n_lin else 0) + prob.tags[n_lin:]


# ---------------------------------------------------------------------------
# sparse-triplet dump


def _triplets(A: sp.spmatrix) -> dict[str, Any]:
    C = sp.coo_matrix(A)
    return {"shape": list(C.shape), "row": C.row.tolist(), "col": C.col.tolist(), "val": C.data.tolist()}


def _from_triplets(doc: Mapping[str, Any]) -> sp.csr_matrix:
    return sp.csr_matrix((doc["val"], (doc["row"], doc["col"])), shape=tuple(doc["shape"]))


def dump_problem(prob: AgentProblem) -> dict[str, Any]:
    """JSON-ready dump; matrices as ``{shape, row, col, val}`` triplets."""
    segs = []
    for seg in prob.omega.segments:
        if isinstance(seg, Box):
            segs.append({"type": "box", "lb": [None if math.isinf(v) else v for v in seg.lb], "ub": seg.ub.tolist()})
        else:
            segs.append({"type": "soc", "dim": seg.dim})
    return {
        "agent": prob.agent,
        "labels": [list(lab) for lab in prob.layout.labels],
        "H": _triplets(prob.H),
        "h": prob.h.tolist(),
        "const": prob.const,
        "M": _triplets(prob.M),
        "m": prob.m.tolist(),
        "D": _triplets(prob.D),
        "d": prob.d.tolist(),
        "omega": segs,
        "P": {j: v.tolist() for j, v in prob.P.items()},
        "Q": {j: v.tolist() for j, v in prob.Q.items()},
        "rho": prob.rho,
        "eta_base": prob.eta_base,
        "eta_rule": prob.eta_rule,
    }


def load_problem(doc: Mapping[str, Any]) -> AgentProblem:
    labels = [tuple(lab) for lab in doc["labels"]]
    lay = VariableLayout(doc["agent"], 1 + max((lab[2] for lab in labels), default=0), (), (), (), {})
    lay.labels = labels
    lay.index = {lab: i for i, lab in enumerate(labels)}
    segs = []
    for s in doc["omega"]:
        if s["type"] == "box":
            segs.append(Box(np.array([-np.inf if v is None else v for v in s["lb"]]), np.array(s["ub"])))
        else:
            segs.append(SOC(int(s["dim"])))
    return AgentProblem(
        agent=doc["agent"],
        layout=lay,
        H=_from_triplets(doc["H"]),
        h=np.array(doc["h"], dtype=float),
        const=float(doc["const"]),
        M=_from_triplets(doc["M"]),
        m=np.array(doc["m"], dtype=float),
        D=_from_triplets(doc["D"]),
        d=np.array(doc["d"], dtype=float),
        omega=ConeProduct(segs),
        tags=[],
        P={j: np.array(v, dtype=int) for j, v in doc["P"].items()},
        Q={j: np.array(v, dtype=int) for j, v in doc["Q"].items()},
        rho=float(doc["rho"]),
        eta_base=float(doc["eta_base"]),
        eta_rule=doc.get("eta_rule", "scaled"),
    )


def dump_problems(problems: Mapping[str, AgentProblem], path) -> None:
    with open(path, "w") as fh:
        json.dump({s: dump_problem(p) for s, p in problems.items()}, fh)


def load_problems(path) -> dict[str, AgentProblem]:
    with open(path) as fh:
        doc = json.load(fh)
    return {s: load_problem(p) for s, p in doc.items()}
