"""Traffic scenarios: nominal demand and turning ratios, their perturbations, and the moments controllers see.

Flows in a scenario are in vehicles per hour; everything handed to the
optimizer or the plant is converted to vehicles per control step.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .network import Network
from .stochastic import ParamSet, RandomScalar

TURNS = ("left", "right", "straight")

# nominal (left, right, straight) ratios keyed by (u + v) mod 4
DEFAULT_RATIO_TABLE = {
    0: (0.2, 0.2, 0.6),
    1: (0.15, 0.15, 0.7),
    2: (0.15, 0.2, 0.65),
    3: (0.2, 0.15, 0.65),
}

DEMAND_BANDS = (1000.0, 1250.0, 1150.0, 1000.0, 900.0, 800.0)


class ScenarioError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    name: str = "scenario1"
    demand_bands: tuple[float, ...] = DEMAND_BANDS  # veh/h on a 3-lane source road
    band_minutes: float = 20.0
    scaling: float = 1.0
    side_inflow: tuple[float, float] | None = None  # veh/h range on designated links
    side_inflow_links: tuple[str, ...] | None = None  # None: the links the network flags
    ratio_table: dict[int, tuple[float, float, float]] = field(default_factory=lambda: dict(DEFAULT_RATIO_TABLE))
    ratio_delta: float = 0.1
    source_delta: float = 350.0
    other_delta: float = 50.0
    exit_nominal: float = 0.0
    steps: int = 120
    seed: int = 0

    def __post_init__(self) -> None:
        self.demand_bands = tuple(float(v) for v in self.demand_bands)
        self.ratio_table = {int(k): tuple(float(x) for x in v) for k, v in self.ratio_table.items()}
        if self.side_inflow is not None:
            self.side_inflow = tuple(float(v) for v in self.side_inflow)
            if self.side_inflow[0] > self.side_inflow[1]:
                raise ScenarioError("side inflow range is reversed")
        if self.side_inflow_links is not None:
            self.side_inflow_links = tuple(self.side_inflow_links)
        for key, row in self.ratio_table.items():
            if len(row) != 3 or abs(sum(row) - 1.0) > 1e-9 or min(row) < 0:
                raise ScenarioError(f"ratio table row {key} must be three nonnegative values summing to 1")
        if set(self.ratio_table) != {0, 1, 2, 3}:
            raise ScenarioError("ratio table needs rows 0..3")
        if not self.demand_bands or self.band_minutes <= 0:
            raise ScenarioError("demand profile is empty")
        if self.steps < 0:
            raise ScenarioError("number of steps must be nonnegative")
        if min(self.ratio_delta, self.source_delta, self.other_delta) < 0:
            raise ScenarioError("perturbation ranges must be nonnegative")

    def to_dict(self) -> dict[str, Any]:
        doc = asdict(self)
        doc["ratio_table"] = {str(k): list(v) for k, v in self.ratio_table.items()}
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ScenarioError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**dict(doc))


def builtin_scenario(name: str, **overrides: Any) -> ScenarioConfig:
    """``scenario1`` (base demand), ``scenario2`` (+25 %, side inflow 500-600) or ``scenario3`` (+40 %, 900-1100)."""
    presets = {
        "scenario1": dict(scaling=1.0, side_inflow=None),
        "scenario2": dict(scaling=1.25, side_inflow=(500.0, 600.0)),
        "scenario3": dict(scaling=1.40, side_inflow=(900.0, 1100.0)),
    }
    if name not in presets:
        raise ScenarioError(f"unknown scenario {name!r}; choose from {sorted(presets)}")
    return ScenarioConfig(name=name, **{**presets[name], **overrides})


def load_scenario(path: str | Path) -> ScenarioConfig:
    with open(path) as fh:
        doc = json.load(fh)
    if isinstance(doc, Mapping) and "preset" in doc:
        rest = {k: v for k, v in doc.items() if k != "preset"}
        return builtin_scenario(doc["preset"], **rest)
    return ScenarioConfig.from_dict(doc)


# ---------------------------------------------------------------------------
# nominal values


def lane_factor(lanes: int) -> float:
    """Demand multiplier relative to a 3-lane road; 5 lanes carry 1.25x."""
    if lanes <= 3:
        return lanes / 3.0
    return 1.0 + 0.125 * (lanes - 3)


def nominal_demand(scn: ScenarioConfig, minute: int) -> float:
    """Base demand (veh/h, 3-lane road) in the given zero-based minute; the last band repeats."""
    band = min(int(minute // scn.band_minutes), len(scn.demand_bands) - 1)
    return scn.demand_bands[max(band, 0)] * scn.scaling


def side_links(net: Network, scn: ScenarioConfig) -> tuple[str, ...]:
    """Links receiving the extra inflow: those listed by the scenario, else those the network flags."""
    if scn.side_inflow is None:
        return ()
    if scn.side_inflow_links is not None:
        for z in scn.side_inflow_links:
            if z not in net.links:
                raise ScenarioError(f"side inflow link {z!r} not in network")
        return scn.side_inflow_links
    return tuple(z for z, lk in net.links.items() if lk.side_inflow)


def _row(net: Network, scn: ScenarioConfig, z: str) -> tuple[float, float, float]:
    lk = net.links[z]
    u, v = net.nodes[lk.upstream].index, net.nodes[lk.downstream].index
    return scn.ratio_table[(u + v) % 4]


def realized_ratios(
    net: Network, scn: ScenarioConfig, z: str, d_left: float = 0.0, d_right: float = 0.0
) -> dict[str, float]:
    """Per-movement turning ratios of ``z`` for given perturbations of the left and right ratios."""
    down = net.downstream_links[z]
    if not down:
        return {}
    lk = net.links[z]
    movs = lk.movements or ()
    turns = {m.to: m.turn for m in movs}
    if any(turns.get(w) is None for w in down):
        # unlabelled movements: uniform split, not perturbed
        return {w: 1.0 / len(down) for w in down}
    l0, r0, _ = _row(net, scn, z)
    road = {"left": max(l0 + d_left, 0.0), "right": max(r0 + d_right, 0.0)}
    road["straight"] = max(1.0 - road["left"] - road["right"], 0.0)
    tot = sum(road.values())
    road = {t: v / tot for t, v in road.items()}
    avail = list(dict.fromkeys(turns[w] for w in down))
    mass = sum(road[t] for t in avail)
    if mass <= 0.0:
        share_t = {t: 1.0 / len(avail) for t in avail}
    else:
        share_t = {t: road[t] / mass for t in avail}
    shares = {m.to: m.share for m in movs if m.to in down}
    out = {}
    for t in avail:
        members = [w for w in down if turns[w] == t]
        weights = np.array([1.0 if shares.get(w) is None else float(shares[w]) for w in members])
        weights = weights / weights.sum()
        for w, s in zip(members, weights):
            out[w] = share_t[t] * float(s)
    return out


# ---------------------------------------------------------------------------
# realizations


@dataclass
class Realization:
    """Ground-truth parameters for one control step (one minute)."""

    ratios: dict[str, dict[str, float]]  # link -> downstream link -> ratio
    road_ratios: dict[str, dict[str, float]]  # link -> turn -> ratio before restriction to available turns
    exo: dict[str, float]  # vehicles per step entering minus leaving, excluding junction flows
    demand: dict[str, float]  # vehicles per step arriving from outside (sources and side inflows)
    exits: dict[str, float]  # vehicles per step leaving other than through junctions


def sample_parameters(
    net: Network, scn: ScenarioConfig, minute: int, rng: np.random.Generator, *, perturb: bool = True
) -> Realization:
    """Draw the realized ratios and exogenous flows of one minute.

    Draws happen in network link order so a seed fixes the whole trajectory.
    """
    dt = net.cycle / 3600.0
    sides = set(side_links(net, scn))
    ratios, road, exo, demand, exits = {}, {}, {}, {}, {}
    for z, lk in net.links.items():
        dl = dr = 0.0
        if net.downstream_links[z]:
            if perturb:
                dl, dr = rng.uniform(-scn.ratio_delta, scn.ratio_delta, size=2)
            ratios[z] = realized_ratios(net, scn, z, dl, dr)
            l0, r0, _ = _row(net, scn, z)
            left, right = max(l0 + dl, 0.0), max(r0 + dr, 0.0)
            straight = max(1.0 - left - right, 0.0)
            tot = left + right + straight
            road[z] = {"left": left / tot, "right": right / tot, "straight": straight / tot}
        d_nom = 0.0
        d_range = scn.other_delta
        if net.is_source(z):
            d_nom = nominal_demand(scn, minute) * lane_factor(lk.lanes)
            d_range = scn.source_delta
        if z in sides:
            lo, hi = scn.side_inflow
            d_nom += rng.uniform(lo, hi) if perturb else 0.5 * (lo + hi)
        dd, ds = (rng.uniform(-d_range, d_range), rng.uniform(-scn.other_delta, scn.other_delta)) if perturb else (0, 0)
        inflow = (d_nom + dd) * dt
        outflow = (scn.exit_nominal + ds) * dt
        exo[z] = inflow - outflow
        # the plant books positive parts separately; negative demand becomes extra exit
        demand[z] = max(inflow, 0.0) + max(-outflow, 0.0)
        exits[z] = max(outflow, 0.0) + max(-inflow, 0.0)
    return Realization(ratios, road, exo, demand, exits)


# ---------------------------------------------------------------------------
# moments for controllers


def _ratio_moments(net: Network, scn: ScenarioConfig, z: str) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Mean vector and covariance of the movement ratios of ``z`` by a first-order expansion."""
    down = list(net.downstream_links[z])
    mean = realized_ratios(net, scn, z)
    mu = np.array([mean[w] for w in down])
    h = 1e-6
    J = np.zeros((len(down), 2))
    for c in range(2):
        plus = realized_ratios(net, scn, z, *(h if i == c else 0.0 for i in range(2)))
        minus = realized_ratios(net, scn, z, *(-h if i == c else 0.0 for i in range(2)))
        J[:, c] = [(plus[w] - minus[w]) / (2 * h) for w in down]
    var_delta = (2 * scn.ratio_delta) ** 2 / 12.0
    cov = var_delta * (J @ J.T)
    cov[np.abs(cov) < 1e-15] = 0.0
    return down, mu, cov


def controller_params(
    net: Network, scn: ScenarioConfig, minute: int, horizon: int, *, nominal: bool = False
) -> ParamSet:
    """Moments a controller uses at ``minute`` for the next ``horizon`` steps.

    Means are the nominal values; variances are range^2 / 12 for each uniform
    perturbation, propagated through the ratio normalization to first order.
    """
    dt = net.cycle / 3600.0
    sides = set(side_links(net, scn))
    exo: dict[str, list[RandomScalar]] = {}
    turning: dict[str, list[dict[str, RandomScalar]]] = {}
    corr = {}
    ratio_info = {z: _ratio_moments(net, scn, z) for z in net.links if net.downstream_links[z]}
    for z, lk in net.links.items():
        rows = []
        for k in range(horizon):
            mean = -scn.exit_nominal
            var = (2 * scn.other_delta) ** 2 / 12.0
            if net.is_source(z):
                mean += nominal_demand(scn, minute + k) * lane_factor(lk.lanes)
                var += (2 * scn.source_delta) ** 2 / 12.0
            else:
                var += (2 * scn.other_delta) ** 2 / 12.0
            if z in sides:
                lo, hi = scn.side_inflow
                mean += 0.5 * (lo + hi)
                var += (hi - lo) ** 2 / 12.0
            rows.append(RandomScalar(mean * dt, 0.0 if nominal else var * dt * dt))
        exo[z] = rows
        if z in ratio_info:
            down, mu, cov = ratio_info[z]
            turning[z] = [
                {w: RandomScalar(float(mu[i]), 0.0 if nominal else float(cov[i, i])) for i, w in enumerate(down)}
                for _ in range(horizon)
            ]
            if not nominal:
                sd = np.sqrt(np.diag(cov))
                for a in range(len(down)):
                    for b in range(a + 1, len(down)):
                        if sd[a] > 0 and sd[b] > 0 and cov[a, b] != 0.0:
                            rho = float(np.clip(cov[a, b] / (sd[a] * sd[b]), -1.0, 1.0))
                            for k in range(horizon):
                                corr[frozenset({("r", z, down[a], k), ("r", z, down[b], k)})] = rho
    params = ParamSet(horizon, exo, turning)
    for pair, rho in corr.items():
        a, b = tuple(pair)
        params.correlate(a, b, rho)
    return params
