"""Directed road network with signal phases, and its partition into subnetworks."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

SCHEMA = "dsmpc-network/1"
SATURATION_PER_LANE = 0.55  # veh/s


class NetworkError(ValueError):
    """Raised for structurally invalid network or partition descriptions."""


@dataclass(frozen=True)
class Node:
    id: str
    kind: str  # "junction" or "external"
    index: int = 0  # used by the nominal turning-ratio table; externals are 0

    @property
    def is_junction(self) -> bool:
        return self.kind == "junction"


@dataclass(frozen=True)
class Movement:
    to: str
    turn: str | None = None  # "left" | "right" | "straight"
    share: float | None = None  # split among movements with the same turn


@dataclass(frozen=True)
class RoadLink:
    id: str
    upstream: str
    downstream: str
    saturation_flow: float
    capacity: float
    lanes: int = 1
    initial_count: float = 0.0
    outflow_cap: float | None = None  # veh per control step, destination links only
    movements: tuple[Movement, ...] | None = None
    side_inflow: bool = False  # receives extra exogenous inflow in heavy scenarios


@dataclass(frozen=True)
class Phase:
    id: str
    junction: str
    links: tuple[str, ...]
    max_split: float


@dataclass(frozen=True)
class Junction:
    id: str
    phases: tuple[str, ...]
    lost_time: float
    cycle_budget: float


@dataclass
class Network:
    cycle: float
    nodes: dict[str, Node]
    links: dict[str, RoadLink]
    phases: dict[str, Phase]
    junctions: dict[str, Junction]
    partition_spec: dict[str, list[str]] | None = None
    # derived
    downstream_links: dict[str, tuple[str, ...]] = field(default_factory=dict)
    upstream_links: dict[str, tuple[str, ...]] = field(default_factory=dict)
    incoming: dict[str, tuple[str, ...]] = field(default_factory=dict)
    outgoing: dict[str, tuple[str, ...]] = field(default_factory=dict)
    phases_of_link: dict[str, tuple[str, ...]] = field(default_factory=dict)
    sources: tuple[str, ...] = ()
    sinks: tuple[str, ...] = ()

    @property
    def link_ids(self) -> list[str]:
        return list(self.links)

    def is_source(self, z: str) -> bool:
        return not self.nodes[self.links[z].upstream].is_junction

    def is_sink(self, z: str) -> bool:
        return not self.nodes[self.links[z].downstream].is_junction

    def turn_of(self, z: str, w: str) -> str | None:
        for mv in self.links[z].movements or ():
            if mv.to == w:
                return mv.turn
        return None

    def to_dict(self) -> dict[str, Any]:
        links = []
        for lk in self.links.values():
            item: dict[str, Any] = {
                "id": lk.id,
                "upstream": lk.upstream,
                "downstream": lk.downstream,
                "lanes": lk.lanes,
                "saturation_flow": lk.saturation_flow,
                "capacity": lk.capacity,
                "initial_count": lk.initial_count,
            }
            if lk.outflow_cap is not None:
                item["outflow_cap"] = lk.outflow_cap
            if lk.side_inflow:
                item["side_inflow"] = True
            if lk.movements is not None:
                item["movements"] = [
                    {k: v for k, v in (("to", m.to), ("turn", m.turn), ("share", m.share)) if v is not None}
                    for m in lk.movements
                ]
            links.append(item)
        doc: dict[str, Any] = {
            "schema": SCHEMA,
            "cycle_seconds": self.cycle,
            "nodes": [{"id": n.id, "kind": n.kind, "index": n.index} for n in self.nodes.values()],
            "links": links,
            "junctions": [{"id": j.id, "phases": list(j.phases), "lost_time": j.lost_time} for j in self.junctions.values()],
            "phases": [
                {"id": p.id, "junction": p.junction, "links": list(p.links), "max_split": p.max_split}
                for p in self.phases.values()
            ],
        }
        if self.partition_spec is not None:
            doc["partition"] = {k: list(v) for k, v in self.partition_spec.items()}
        return doc


def _movements(raw: Any) -> tuple[Movement, ...] | None:
    if raw is None:
        return None
    out = []
    for m in raw:
        if isinstance(m, str):
            out.append(Movement(to=m))
        else:
            out.append(Movement(to=str(m["to"]), turn=m.get("turn"), share=m.get("share")))
    return tuple(out)


def build_network(spec: Mapping[str, Any]) -> Network:
    """Build and validate a network from its JSON description.

    Downstream neighbours default to every outgoing link of the downstream
    junction unless a link lists its ``movements`` explicitly. Upstream
    neighbours are always derived as the inverse relation.
    """
    cycle = float(spec.get("cycle_seconds", 60.0))
    if cycle <= 0:
        raise NetworkError("cycle_seconds must be positive")

    nodes: dict[str, Node] = {}
    for raw in spec.get("nodes", []):
        nid = str(raw["id"])
        if nid in nodes:
            raise NetworkError(f"duplicate node id {nid!r}")
        kind = raw.get("kind", "junction")
        if kind not in ("junction", "external"):
            raise NetworkError(f"node {nid!r}: unknown kind {kind!r}")
        nodes[nid] = Node(nid, kind, int(raw.get("index", 0)))

    links: dict[str, RoadLink] = {}
    for raw in spec.get("links", []):
        lid = str(raw["id"])
        if lid in links:
            raise NetworkError(f"duplicate link id {lid!r}")
        up, down = str(raw["upstream"]), str(raw["downstream"])
        for end in (up, down):
            if end not in nodes:
                raise NetworkError(f"link {lid!r} references unknown node {end!r}")
        if up == down:
            raise NetworkError(f"link {lid!r} is a self loop")
        if not nodes[up].is_junction and not nodes[down].is_junction:
            raise NetworkError(f"link {lid!r} connects two external nodes")
        lanes = int(raw.get("lanes", 1))
        sat = float(raw.get("saturation_flow", SATURATION_PER_LANE * lanes))
        cap = float(raw["capacity"])
        n0 = float(raw.get("initial_count", 0.0))
        if sat <= 0 or cap <= 0:
            raise NetworkError(f"link {lid!r}: saturation flow and capacity must be positive")
        if not 0 <= n0 <= cap:
            raise NetworkError(f"link {lid!r}: initial count outside [0, capacity]")
        qcap = raw.get("outflow_cap")
        links[lid] = RoadLink(
            id=lid,
            upstream=up,
            downstream=down,
            saturation_flow=sat,
            capacity=cap,
            lanes=lanes,
            initial_count=n0,
            outflow_cap=None if qcap is None else float(qcap),
            movements=_movements(raw.get("movements")),
            side_inflow=bool(raw.get("side_inflow", False)),
        )

    phases: dict[str, Phase] = {}
    for raw in spec.get("phases", []):
        pid = str(raw["id"])
        if pid in phases:
            raise NetworkError(f"duplicate phase id {pid!r}")
        jid = str(raw["junction"])
        if jid not in nodes or not nodes[jid].is_junction:
            raise NetworkError(f"phase {pid!r} references unknown junction {jid!r}")
        granted = tuple(str(z) for z in raw["links"])
        for z in granted:
            if z not in links:
                raise NetworkError(f"phase {pid!r} grants unknown link {z!r}")
            if links[z].downstream != jid:
                raise NetworkError(f"phase {pid!r} grants link {z!r} that does not enter {jid!r}")
        gmax = float(raw.get("max_split", cycle))
        if not 0 < gmax <= cycle:
            raise NetworkError(f"phase {pid!r}: max_split must lie in (0, cycle]")
        phases[pid] = Phase(pid, jid, granted, gmax)

    junctions: dict[str, Junction] = {}
    for raw in spec.get("junctions", []):
        jid = str(raw["id"])
        if jid not in nodes or not nodes[jid].is_junction:
            raise NetworkError(f"junction entry {jid!r} is not a junction node")
        plist = tuple(str(p) for p in raw.get("phases", []))
        if not plist:
            raise NetworkError(f"junction {jid!r} has no phases")
        for p in plist:
            if p not in phases or phases[p].junction != jid:
                raise NetworkError(f"junction {jid!r} lists foreign phase {p!r}")
        lost = float(raw.get("lost_time", 0.0))
        budget = cycle - lost
        if budget <= 0:
            raise NetworkError(f"junction {jid!r}: lost time leaves no green budget")
        junctions[jid] = Junction(jid, plist, lost, budget)
    for nid, node in nodes.items():
        if node.is_junction and nid not in junctions:
            raise NetworkError(f"junction {nid!r} has no phases")

    net = Network(cycle, nodes, links, phases, junctions, spec.get("partition"))
    _derive(net)
    return net


def _derive(net: Network) -> None:
    incoming = {v: [] for v in net.nodes}
    outgoing = {v: [] for v in net.nodes}
    for z, lk in net.links.items():
        outgoing[lk.upstream].append(z)
        incoming[lk.downstream].append(z)
    net.incoming = {v: tuple(zs) for v, zs in incoming.items()}
    net.outgoing = {v: tuple(zs) for v, zs in outgoing.items()}

    order = {z: i for i, z in enumerate(net.links)}
    down: dict[str, tuple[str, ...]] = {}
    for z, lk in net.links.items():
        if not net.nodes[lk.downstream].is_junction:
            down[z] = ()
            continue
        allowed = net.outgoing[lk.downstream]
        if lk.movements is None:
            down[z] = allowed
            continue
        targets = [m.to for m in lk.movements]
        for w in targets:
            if w not in allowed:
                raise NetworkError(f"movement {z}->{w} does not leave junction {lk.downstream!r}")
        if len(set(targets)) != len(targets):
            raise NetworkError(f"link {z!r} lists a movement twice")
        down[z] = tuple(sorted(targets, key=order.__getitem__))
    up: dict[str, list[str]] = {z: [] for z in net.links}
    for z in net.links:
        for w in down[z]:
            up[w].append(z)
    net.downstream_links = down
    net.upstream_links = {z: tuple(ws) for z, ws in up.items()}

    granted: dict[str, list[str]] = {z: [] for z in net.links}
    for j in net.junctions.values():
        for p in j.phases:
            for z in net.phases[p].links:
                granted[z].append(p)
    for z, lk in net.links.items():
        if net.nodes[lk.downstream].is_junction and not granted[z]:
            raise NetworkError(f"link {z!r} enters a junction but no phase grants it")
    net.phases_of_link = {z: tuple(ps) for z, ps in granted.items()}
    net.sources = tuple(z for z in net.links if net.is_source(z))
    net.sinks = tuple(z for z in net.links if net.is_sink(z))


def load_network(path: str | Path) -> Network:
    with open(path) as fh:
        return build_network(json.load(fh))


def save_network(net: Network, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(net.to_dict(), fh, indent=1)


def builtin_network(name: str) -> Network:
    """Return a bundled network: ``fig1`` or ``grid:RxC``."""
    if name.startswith("grid:"):
        rows, cols = (int(v) for v in name[5:].lower().split("x"))
        return grid_network(rows, cols)
    path = Path(__file__).with_name("data") / f"{name}_network.json"
    if not path.exists():
        raise NetworkError(f"no bundled network named {name!r}")
    return load_network(path)


# ---------------------------------------------------------------------------
# partition


@dataclass
class Subnetwork:
    id: str
    junctions: frozenset[str]
    externals: frozenset[str]
    links: tuple[str, ...]  # both ends in junctions ∪ externals
    sources: tuple[str, ...]


@dataclass
class Partition:
    subnetworks: dict[str, Subnetwork]
    owner_of_junction: dict[str, str]
    boundary: dict[tuple[str, str], tuple[str, ...]]  # (i, j) -> links from i into j
    neighbors: dict[str, tuple[str, ...]]

    @property
    def ids(self) -> list[str]:
        return list(self.subnetworks)

    def n_owner(self, net: Network, z: str) -> str:
        """Agent holding the expected count of link z."""
        lk = net.links[z]
        end = lk.upstream if net.nodes[lk.upstream].is_junction else lk.downstream
        return self.owner_of_junction[end]

    def q_owner(self, net: Network, z: str) -> str:
        """Agent holding the expected outflow of link z."""
        lk = net.links[z]
        end = lk.downstream if net.nodes[lk.downstream].is_junction else lk.upstream
        return self.owner_of_junction[end]


def partition_network(net: Network, assignment: Mapping[str, Iterable[str]]) -> Partition:
    """Split the junctions into subnetworks; ``assignment`` maps subnetwork id to junction ids."""
    owner: dict[str, str] = {}
    for sid, js in assignment.items():
        for j in js:
            j = str(j)
            if j not in net.junctions:
                raise NetworkError(f"unknown junction {j!r} in subnetwork {sid!r}")
            if j in owner:
                raise NetworkError(f"junction {j!r} assigned twice")
            owner[j] = str(sid)
    missing = [j for j in net.junctions if j not in owner]
    if missing:
        raise NetworkError(f"unassigned junctions: {missing}")

    subs: dict[str, Subnetwork] = {}
    boundary: dict[tuple[str, str], list[str]] = {}
    for sid, js in assignment.items():
        sid = str(sid)
        jset = frozenset(str(j) for j in js)
        ext = set()
        for z, lk in net.links.items():
            if lk.downstream in jset and not net.nodes[lk.upstream].is_junction:
                ext.add(lk.upstream)
            if lk.upstream in jset and not net.nodes[lk.downstream].is_junction:
                ext.add(lk.downstream)
        inside = jset | ext
        local = tuple(
            z for z, lk in net.links.items()
            if lk.upstream in inside and lk.downstream in inside
            and (lk.upstream in jset or lk.downstream in jset)
        )
        srcs = tuple(z for z in local if z in net.sources)
        subs[sid] = Subnetwork(sid, jset, frozenset(ext), local, srcs)
    for z, lk in net.links.items():
        a, b = owner.get(lk.upstream), owner.get(lk.downstream)
        if a is not None and b is not None and a != b:
            boundary.setdefault((a, b), []).append(z)
    nbrs = {sid: set() for sid in subs}
    for a, b in boundary:
        nbrs[a].add(b)
        nbrs[b].add(a)
    order = list(subs)
    neighbors = {s: tuple(sorted(v, key=order.index)) for s, v in nbrs.items()}
    part = Partition(subs, owner, {k: tuple(v) for k, v in boundary.items()}, neighbors)
    if not _connected(neighbors):
        raise NetworkError("agent graph is disconnected; min-consensus cannot reach every agent")
    return part


def per_junction_partition(net: Network) -> Partition:
    return partition_network(net, {j: [j] for j in net.junctions})


def single_partition(net: Network) -> Partition:
    return partition_network(net, {"S": list(net.junctions)})


def default_partition(net: Network) -> Partition:
    if net.partition_spec:
        return partition_network(net, net.partition_spec)
    return single_partition(net)


def _connected(adj: Mapping[str, Iterable[str]]) -> bool:
    ids = list(adj)
    if not ids:
        return True
    seen = {ids[0]}
    todo = deque([ids[0]])
    while todo:
        v = todo.popleft()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                todo.append(w)
    return len(seen) == len(ids)


# ---------------------------------------------------------------------------
# generated grid networks

_DIRS = ("N", "E", "S", "W")
_OPPOSITE = {"N": "S", "S": "N", "E": "W", "W": "E"}
# heading after leaving towards a side: entering from the north means heading south
_LEFT_OF = {"S": "E", "N": "W", "E": "N", "W": "S"}
_RIGHT_OF = {"S": "W", "N": "E", "E": "S", "W": "N"}


def grid_network(
    rows: int,
    cols: int,
    *,
    lanes: int = 3,
    capacity_per_lane: float = 40.0,
    max_split: float = 40.0,
    lost_time: float = 4.0,
    cycle: float = 60.0,
    outflow_cap: float = 20.0,
    initial_fill: float = 0.2,
    side_inflow_links: Iterable[str] = (),
) -> Network:
    """Rectangular grid with one link per road direction and one phase per approach.

    Junction ``J{r}_{c}`` has index ``r*cols + c + 1``. Every boundary side of
    a boundary junction gets an external node with one entering and one
    leaving road. U-turns are not modelled.
    """
    if rows < 1 or cols < 1:
        raise NetworkError("grid needs at least one junction")
    nodes = []
    jid = {}
    for r in range(rows):
        for c in range(cols):
            jid[r, c] = f"J{r + 1}_{c + 1}"
            nodes.append({"id": jid[r, c], "kind": "junction", "index": r * cols + c + 1})

    step = {"N": (-1, 0), "S": (1, 0), "E": (0, 1), "W": (0, -1)}
    # neighbour (junction or external) of each junction side
    side_node = {}
    for (r, c), j in jid.items():
        for d in _DIRS:
            rr, cc = r + step[d][0], c + step[d][1]
            if (rr, cc) in jid:
                side_node[j, d] = jid[rr, cc]
            else:
                ext = f"B{r + 1}_{c + 1}{d}"
                nodes.append({"id": ext, "kind": "external", "index": 0})
                side_node[j, d] = ext

    cap = capacity_per_lane * lanes
    links = []
    seen = set()
    # road leaving junction j towards side d; road entering j from side d
    out_link, in_link = {}, {}
    for (r, c), j in jid.items():
        for d in _DIRS:
            other = side_node[j, d]
            for up, down in ((j, other), (other, j)):
                if (up, down) in seen:
                    continue
                seen.add((up, down))
                lid = f"{up}>{down}"
                links.append({"id": lid, "upstream": up, "downstream": down, "lanes": lanes, "capacity": cap})
            out_link[j, d] = f"{j}>{other}"
            in_link[j, d] = f"{other}>{j}"
    junction_of = {j: rc for rc, j in jid.items()}
    sides = set(side_inflow_links)
    unknown = sides - {lk["id"] for lk in links}
    if unknown:
        raise NetworkError(f"side inflow links not in grid: {sorted(unknown)}")
    for lk in links:
        lk["initial_count"] = round(initial_fill * cap, 6)
        if lk["id"] in sides:
            lk["side_inflow"] = True
        down = lk["downstream"]
        if down not in junction_of:
            lk["outflow_cap"] = outflow_cap
            continue
        side = next(d for d in _DIRS if in_link[down, d] == lk["id"])
        heading = _OPPOSITE[side]
        lk["movements"] = [
            {"to": out_link[down, heading], "turn": "straight"},
            {"to": out_link[down, _LEFT_OF[heading]], "turn": "left"},
            {"to": out_link[down, _RIGHT_OF[heading]], "turn": "right"},
        ]

    phases, junctions = [], []
    for (r, c), j in jid.items():
        pids = []
        for d in _DIRS:
            pid = f"{j}.{d}"
            pids.append(pid)
            phases.append({"id": pid, "junction": j, "links": [in_link[j, d]], "max_split": max_split})
        junctions.append({"id": j, "phases": pids, "lost_time": lost_time})
    return build_network(
        {"cycle_seconds": cycle, "nodes": nodes, "links": links, "phases": phases, "junctions": junctions}
    )
