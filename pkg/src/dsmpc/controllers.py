"""Signal controllers and the closed-loop experiment driver."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping, Protocol

import numpy as np

from . import admm
from .assembly import AssemblyError, HorizonInputs, assemble, relax_to_reference
from .network import Network, Partition
from .plant import MODES, SLICE_SECONDS, PlantState, SignalPlan, SliceRecord, step_plant, step_slice
from .scenario import ScenarioConfig, controller_params, lane_factor, nominal_demand, realized_ratios, sample_parameters, side_links

CONTROLLERS = ("pretimed", "backpressure", "nominal-mpc", "stochastic-mpc")


class Controller(Protocol):
    name: str

    def plan(self, minute: int, state: PlantState) -> SignalPlan: ...


def nominal_ratio_matrix(net: Network, scn: ScenarioConfig) -> np.ndarray:
    """``R[i, j]``: expected share of link i's outflow entering link j."""
    idx = {z: i for i, z in enumerate(net.links)}
    R = np.zeros((len(idx), len(idx)))
    for z in net.links:
        for w, r in realized_ratios(net, scn, z).items():
            R[idx[z], idx[w]] = r
    return R


# ---------------------------------------------------------------------------
# pretimed


def proportional_splits(
    flows: Mapping[str, float], budget: float, max_split: Mapping[str, float]
) -> dict[str, float]:
    """Share ``budget`` in proportion to ``flows``, clipping at ``max_split`` and redistributing the excess.

    All-zero flows give a uniform split.
    """
    phases = list(flows)
    w = np.array([max(float(flows[p]), 0.0) for p in phases])
    cap = np.array([float(max_split[p]) for p in phases])
    if np.any(np.array([flows[p] for p in phases]) < 0):
        raise ValueError("flows must be nonnegative")
    if w.sum() <= 0.0:
        w = np.ones(len(phases))
    g = np.zeros(len(phases))
    free = np.ones(len(phases), dtype=bool)
    left = float(budget)
    while free.any() and left > 1e-12:
        share = w * free
        if share.sum() <= 0.0:
            share = free.astype(float)
        trial = g + left * share / share.sum()
        over = free & (trial > cap)
        if not over.any():
            g = trial
            break
        g[over] = cap[over]
        free &= ~over
        left = float(budget) - g.sum()
    return {p: float(v) for p, v in zip(phases, g)}


def steady_flows(net: Network, scn: ScenarioConfig) -> dict[str, float]:
    """Mean link flows (veh/h) solving ``f = d + R'f`` with demand averaged over the run."""
    minutes = max(scn.steps, 1)
    sides = set(side_links(net, scn))
    d = np.zeros(len(net.links))
    for i, (z, lk) in enumerate(net.links.items()):
        if net.is_source(z):
            d[i] = np.mean([nominal_demand(scn, t) for t in range(minutes)]) * lane_factor(lk.lanes)
        if z in sides:
            d[i] += 0.5 * sum(scn.side_inflow)
    R = nominal_ratio_matrix(net, scn)
    f = np.linalg.solve(np.eye(len(d)) - R.T, d)
    return {z: float(max(v, 0.0)) for z, v in zip(net.links, f)}


class PretimedController:
    name = "pretimed"

    def __init__(self, net: Network, scn: ScenarioConfig):
        flows = steady_flows(net, scn)
        self.splits: dict[str, float] = {}
        for junc in net.junctions.values():
            pf = {p: sum(flows[z] for z in net.phases[p].links) for p in junc.phases}
            ms = {p: net.phases[p].max_split for p in junc.phases}
            self.splits.update(proportional_splits(pf, junc.cycle_budget, ms))

    def plan(self, minute: int, state: PlantState) -> SignalPlan:
        return SignalPlan(dict(self.splits))


# ---------------------------------------------------------------------------
# back-pressure


class BackPressureController:
    """Max-pressure phase choice every slot; a phase change costs its clearance time."""

    name = "backpressure"

    def __init__(self, net: Network, scn: ScenarioConfig, slot_seconds: float = SLICE_SECONDS):
        self.net = net
        self.slot = slot_seconds
        self.ratios = {z: realized_ratios(net, scn, z) for z in net.links}
        self.current: dict[str, str | None] = {j: None for j in net.junctions}

    def pressure(self, p: str, counts: Mapping[str, float]) -> float:
        net = self.net
        total = 0.0
        for z in net.phases[p].links:
            down = sum(r * counts[w] for w, r in self.ratios[z].items())
            total += net.links[z].saturation_flow * (counts[z] - down)
        return total

    def choose(self, counts: Mapping[str, float]) -> dict[str, str]:
        out = {}
        for j, junc in self.net.junctions.items():
            best, best_p = -np.inf, None
            for p in junc.phases:  # strict > keeps the lowest index on ties
                v = self.pressure(p, counts)
                if v > best:
                    best, best_p = v, p
            out[j] = best_p
        return out

    def slot_greens(self, counts: Mapping[str, float]) -> dict[str, float]:
        g = {}
        for j, p in self.choose(counts).items():
            junc = self.net.junctions[j]
            loss = junc.lost_time / len(junc.phases) if self.current[j] not in (None, p) else 0.0
            g[p] = max(self.slot - loss, 0.0)
            self.current[j] = p
        return g


# ---------------------------------------------------------------------------
# model predictive control


@dataclass
class MpcOptions:
    stochastic: bool = True
    horizon: int = 3
    epsilon: float = 0.2
    rho: float = 0.01
    tol: float = 1e-6
    max_iter: int = 20_000
    alpha: Any = None
    beta: Any = 0.3
    gamma: Any = 0.3
    warm_start: bool = True


@dataclass
class MpcStepInfo:
    minute: int
    iterations: int
    converged: bool
    residual: float
    wall_time: float
    relaxed_rows: int
    fallback: bool


class MpcController:
    def __init__(self, net: Network, part: Partition, scn: ScenarioConfig, options: MpcOptions | None = None):
        self.net = net
        self.part = part
        self.scn = scn
        self.opt = options or MpcOptions()
        self.name = "stochastic-mpc" if self.opt.stochastic else "nominal-mpc"
        self.previous: SignalPlan | None = None
        self.states: dict[str, admm.AgentState] | None = None
        self.log: list[MpcStepInfo] = []

    def problems(self, minute: int, counts: Mapping[str, float]):
        params = controller_params(self.net, self.scn, minute, self.opt.horizon, nominal=not self.opt.stochastic)
        inputs = HorizonInputs(
            dict(counts), epsilon=self.opt.epsilon, alpha=self.opt.alpha, beta=self.opt.beta, gamma=self.opt.gamma
        )
        probs = assemble(self.net, self.part, params, inputs, rho=self.opt.rho)
        return relax_to_reference(probs)

    def plan(self, minute: int, state: PlantState) -> SignalPlan:
        t0 = time.perf_counter()
        try:
            probs, report = self.problems(minute, state.counts)
            warm = None
            if self.opt.warm_start and self.states is not None:
                warm = {s: admm.shift_state(self.states[s], probs[s]) for s in probs}
            res = admm.solve(probs, tol=self.opt.tol, max_iter=self.opt.max_iter, warm_start=warm)
        except (AssemblyError, admm.AdmmError) as exc:
            self.log.append(MpcStepInfo(minute, 0, False, float("nan"), time.perf_counter() - t0, 0, True))
            return self._fallback(str(exc))
        self.states = res.states
        plan = self.extract(probs, res.x)
        self.log.append(
            MpcStepInfo(minute, res.iterations, res.converged, res.residual, time.perf_counter() - t0, len(report), False)
        )
        self.previous = plan
        return plan

    def extract(self, probs, xs) -> SignalPlan:
        splits, budget = {}, {}
        for s, prob in probs.items():
            lay = prob.layout
            x = xs[s]
            for p in lay.phases:
                splits[p] = max(float(x[lay.g(p, 0)]), 0.0)
            for z in lay.q_links:
                lk = self.net.links[z]
                if self.net.nodes[lk.downstream].is_junction:
                    budget[z] = max(float(x[lay.index[("q", z, 0)]]), 0.0) / lk.saturation_flow
        # remove solver round-off so the plan respects the junction budgets exactly
        for junc in self.net.junctions.values():
            tot = sum(splits[p] for p in junc.phases)
            if tot > junc.cycle_budget:
                for p in junc.phases:
                    splits[p] *= junc.cycle_budget / tot
            for p in junc.phases:
                splits[p] = min(splits[p], self.net.phases[p].max_split)
        return SignalPlan(splits, budget)

    def _fallback(self, reason: str) -> SignalPlan:
        if self.previous is not None:
            return SignalPlan(dict(self.previous.splits), dict(self.previous.link_budget or {}), flagged=True)
        splits = {}
        for junc in self.net.junctions.values():
            share = junc.cycle_budget / len(junc.phases)
            for p in junc.phases:
                splits[p] = min(share, self.net.phases[p].max_split)
        return SignalPlan(splits, None, flagged=True)


# ---------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentResult:
    controller: str
    config: dict[str, Any]
    rows: list[dict[str, Any]]
    summary: dict[str, Any]

    def csv_text(self) -> str:
        buf = io.StringIO()
        fields = ["slice", "time_s", "minute", "arrived", "entered", "exited", "crossed", "in_network", "queued"] + [
            f"mode_{m}" for m in MODES
        ]
        w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()

    def summary_json(self) -> str:
        return json.dumps({"config": self.config, "summary": self.summary}, indent=2, sort_keys=True)


def make_controller(
    kind: str, net: Network, part: Partition, scn: ScenarioConfig, mpc: MpcOptions | None = None
):
    if kind == "pretimed":
        return PretimedController(net, scn)
    if kind == "backpressure":
        return BackPressureController(net, scn)
    if kind in ("nominal-mpc", "stochastic-mpc"):
        opt = MpcOptions(**{**asdict(mpc or MpcOptions()), "stochastic": kind == "stochastic-mpc"})
        return MpcController(net, part, scn, opt)
    raise ValueError(f"unknown controller {kind!r}; choose from {CONTROLLERS}")


def run_experiment(
    net: Network,
    scn: ScenarioConfig,
    controller,
    *,
    steps: int | None = None,
    seed: int | None = None,
    config: Mapping[str, Any] | None = None,
) -> ExperimentResult:
    """Closed loop over ``steps`` control cycles; every controller sees the same realizations for a seed."""
    steps = scn.steps if steps is None else steps
    seed = scn.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    state = PlantState.initial(net)
    initial = state.in_network
    rows: list[dict[str, Any]] = []
    total = SliceRecord()
    mode_totals = {m: 0 for m in MODES}
    flagged = 0
    slice_no = 0
    for minute in range(steps):
        real = sample_parameters(net, scn, minute, rng)
        if isinstance(controller, BackPressureController):
            records = []
            t = 0.0
            while t < net.cycle - 1e-9:
                end = min(t + controller.slot, net.cycle)
                records.append(step_slice(net, state, controller.slot_greens(state.counts), real, end - t))
                t = end
            state.minute += 1
        else:
            plan = controller.plan(minute, state)
            flagged += int(plan.flagged)
            records = step_plant(net, state, plan, real)
        for rec in records:
            slice_no += 1
            total.add(rec)
            for m in MODES:
                mode_totals[m] += rec.modes[m]
            rows.append(
                {
                    "slice": slice_no,
                    "time_s": slice_no * SLICE_SECONDS,
                    "minute": minute,
                    "arrived": float(rec.arrived),
                    "entered": float(rec.entered),
                    "exited": float(rec.exited),
                    "crossed": float(rec.crossed),
                    "in_network": state.in_network,
                    "queued": state.queued,
                    **{f"mode_{m}": rec.modes[m] for m in MODES},
                }
            )
    served = initial + total.arrived
    summary = {
        "controller": controller.name,
        "steps": steps,
        "seed": seed,
        "initial_vehicles": initial,
        "arrived": float(total.arrived),
        "entered": float(total.entered),
        "exited": float(total.exited),
        "crossed": float(total.crossed),
        "final_in_network": state.in_network,
        "final_queued": state.queued,
        "mean_wait_s": float(total.vehicle_seconds / served) if served > 0 else 0.0,
        "mean_wait_defined": served > 0,
        "mode_counts": mode_totals,
        "flagged_steps": flagged,
    }
    if isinstance(controller, MpcController) and controller.log:
        its = [s.iterations for s in controller.log]
        summary["solver"] = {
            "mean_iterations": float(np.mean(its)),
            "max_iterations": int(np.max(its)),
            "unconverged_steps": int(sum(not s.converged for s in controller.log)),
            "relaxed_steps": int(sum(s.relaxed_rows > 0 for s in controller.log)),
        }
    cfg = dict(config or {})
    cfg.setdefault("scenario", scn.to_dict())
    cfg.setdefault("seed", seed)
    cfg.setdefault("steps", steps)
    cfg.setdefault("controller", controller.name)
    return ExperimentResult(controller.name, cfg, rows, summary)
