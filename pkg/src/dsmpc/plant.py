"""Macroscopic store-and-forward plant simulated in short time slices.

Counts are fluid (real-valued). Within a slice a link discharges at its
saturation flow while it has green, limited by the vehicles present and by
the space left on the receiving links; competing inflows share that space in
proportion to their demand. Arrivals that find no space wait in an external
queue.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .network import Network
from .scenario import Realization

SLICE_SECONDS = 10.0
MODE_THRESHOLDS = (0.45, 0.75, 0.95)
MODES = ("low", "medium", "high", "congested")


@dataclass
class PlantState:
    counts: dict[str, float]
    queues: dict[str, float]
    minute: int = 0

    @classmethod
    def initial(cls, net: Network, counts: Mapping[str, float] | None = None) -> "PlantState":
        c = {z: float(lk.initial_count if counts is None else counts[z]) for z, lk in net.links.items()}
        for z, v in c.items():
            if not 0.0 <= v <= net.links[z].capacity:
                raise ValueError(f"initial count of {z!r} outside [0, capacity]")
        return cls(c, {z: 0.0 for z in net.links})

    def copy(self) -> "PlantState":
        return PlantState(dict(self.counts), dict(self.queues), self.minute)

    @property
    def in_network(self) -> float:
        return float(sum(self.counts.values()))

    @property
    def queued(self) -> float:
        return float(sum(self.queues.values()))


@dataclass
class SignalPlan:
    """Splits for one cycle; ``link_budget`` optionally caps each link's green seconds."""

    splits: dict[str, float]
    link_budget: dict[str, float] | None = None
    flagged: bool = False


@dataclass
class SliceRecord:
    arrived: float = 0.0
    entered: float = 0.0
    exited: float = 0.0
    crossed: float = 0.0
    vehicle_seconds: float = 0.0
    modes: dict[str, int] = field(default_factory=lambda: {m: 0 for m in MODES})

    def add(self, other: "SliceRecord") -> None:
        self.arrived += other.arrived
        self.entered += other.entered
        self.exited += other.exited
        self.crossed += other.crossed
        self.vehicle_seconds += other.vehicle_seconds


def phase_timeline(net: Network, splits: Mapping[str, float]) -> dict[str, list[tuple[str, float, float]]]:
    """Per junction: ``(phase, start, end)`` green windows; each phase is followed by its share of lost time."""
    out = {}
    for j, junc in net.junctions.items():
        clearance = junc.lost_time / len(junc.phases)
        t = 0.0
        wins = []
        for p in junc.phases:
            g = max(float(splits.get(p, 0.0)), 0.0)
            wins.append((p, t, t + g))
            t += g + clearance
        if t > net.cycle + 1e-9:
            raise ValueError(f"plan for junction {j!r} exceeds the cycle")
        out[j] = wins
    return out


def slice_greens(
    timeline: Mapping[str, list[tuple[str, float, float]]], start: float, end: float
) -> dict[str, float]:
    """Green seconds of every phase within ``[start, end)``."""
    g = {}
    for wins in timeline.values():
        for p, a, b in wins:
            g[p] = g.get(p, 0.0) + max(0.0, min(b, end) - max(a, start))
    return g


def mode_of(ratio: float) -> str:
    lo, mid, hi = MODE_THRESHOLDS
    if ratio <= lo:
        return "low"
    if ratio <= mid:
        return "medium"
    if ratio <= hi:
        return "high"
    return "congested"


def step_slice(
    net: Network,
    state: PlantState,
    phase_green: Mapping[str, float],
    real: Realization,
    seconds: float,
    *,
    link_budget: dict[str, float] | None = None,
    outflow_caps: Mapping[str, float] | None = None,
) -> SliceRecord:
    """Advance ``state`` by one slice in place and return what flowed.

    ``link_budget`` (green seconds still allowed per link) is decremented by
    the green each link used.
    """
    frac = seconds / net.cycle
    n = state.counts
    rec = SliceRecord()
    move: dict[str, float] = {}
    leave: dict[str, float] = {}
    for z, lk in net.links.items():
        if net.nodes[lk.downstream].is_junction:
            green = sum(phase_green.get(p, 0.0) for p in net.phases_of_link[z])
            green = min(green, seconds)
            if link_budget is not None:
                green = min(green, max(link_budget.get(z, 0.0), 0.0))
                link_budget[z] = link_budget.get(z, 0.0) - green
            cap = lk.saturation_flow * green
        else:
            q_bar = (outflow_caps or {}).get(z, lk.outflow_cap)
            cap = np.inf if q_bar is None else q_bar * frac
        want_move = min(cap, n[z])
        want_exit = real.exits[z] * frac
        total = want_move + want_exit
        if total > n[z] > 0.0:
            s = n[z] / total
            want_move, want_exit = want_move * s, want_exit * s
        elif n[z] <= 0.0:
            want_move = want_exit = 0.0
        move[z], leave[z] = want_move, want_exit

    # requests for space on every link, prorated when they exceed it
    requests: dict[str, float] = {}
    arrivals = {z: real.demand[z] * frac for z in net.links}
    for z in net.links:
        requests[z] = state.queues[z] + arrivals[z]
    for w in net.links:
        for z, r in real.ratios.get(w, {}).items():
            requests[z] += move[w] * r
    accept = {}
    for z, lk in net.links.items():
        space = max(lk.capacity - n[z], 0.0)
        accept[z] = 1.0 if requests[z] <= space else (space / requests[z] if requests[z] > 0 else 1.0)

    new = dict(n)
    for w, lk in net.links.items():
        ratios = real.ratios.get(w)
        if ratios:
            moved = 0.0
            for z, r in ratios.items():
                f = move[w] * r * accept[z]
                new[z] += f
                moved += f
            new[w] -= moved
            rec.crossed += moved
        else:
            new[w] -= move[w]
            rec.exited += move[w]
        new[w] -= leave[w]
        rec.exited += leave[w]
    for z in net.links:
        waiting = state.queues[z] + arrivals[z]
        enter = waiting * accept[z]
        new[z] += enter
        state.queues[z] = waiting - enter
        rec.arrived += arrivals[z]
        rec.entered += enter
    for z, lk in net.links.items():
        # clean rounding below zero or above capacity
        new[z] = min(max(new[z], 0.0), lk.capacity)
    state.counts = new
    rec.vehicle_seconds = (state.in_network + state.queued) * seconds
    for z, lk in net.links.items():
        rec.modes[mode_of(new[z] / lk.capacity)] += 1
    return rec


def step_plant(
    net: Network,
    state: PlantState,
    plan: SignalPlan,
    real: Realization,
    *,
    slice_seconds: float = SLICE_SECONDS,
    outflow_caps: Mapping[str, float] | None = None,
    enforce_link_budget: bool = False,
) -> list[SliceRecord]:
    """Run one full cycle under a fixed plan; returns one record per slice.

    Only the phase splits act on the plant unless ``enforce_link_budget`` also
    caps every link at its planned green seconds.
    """
    tl = phase_timeline(net, plan.splits)
    budget = dict(plan.link_budget) if enforce_link_budget and plan.link_budget is not None else None
    out = []
    t = 0.0
    while t < net.cycle - 1e-9:
        end = min(t + slice_seconds, net.cycle)
        out.append(
            step_slice(
                net,
                state,
                slice_greens(tl, t, end),
                real,
                end - t,
                link_budget=budget,
                outflow_caps=outflow_caps,
            )
        )
        t = end
    state.minute += 1
    return out
