import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsmpc.network import (
    NetworkError,
    build_network,
    builtin_network,
    grid_network,
    load_network,
    partition_network,
    per_junction_partition,
    save_network,
    single_partition,
)

from oracles import (
    FIG1_BOUNDARY_S1_S2,
    FIG1_BOUNDARY_S2_S1,
    FIG1_DOWNSTREAM_6,
    FIG1_SOURCES,
    FIG1_UPSTREAM_6,
)


def tiny(**link_over):
    link = {"id": "a", "upstream": "X", "downstream": "J", "capacity": 10, "lanes": 1}
    link.update(link_over)
    return {
        "nodes": [{"id": "X", "kind": "external"}, {"id": "J"}, {"id": "Y", "kind": "external"}],
        "links": [link, {"id": "b", "upstream": "J", "downstream": "Y", "capacity": 10, "outflow_cap": 5}],
        "phases": [{"id": "p", "junction": "J", "links": ["a"], "max_split": 30}],
        "junctions": [{"id": "J", "phases": ["p"], "lost_time": 4}],
    }


def test_fig1_neighbour_sets(fig1):
    assert set(fig1.upstream_links["6"]) == FIG1_UPSTREAM_6
    assert set(fig1.downstream_links["6"]) == FIG1_DOWNSTREAM_6
    assert set(fig1.sources) == FIG1_SOURCES


def test_neighbour_relations_are_inverse(fig1):
    for z in fig1.links:
        for w in fig1.downstream_links[z]:
            assert z in fig1.upstream_links[w]
            assert w in fig1.outgoing[fig1.links[z].downstream]
        for w in fig1.upstream_links[z]:
            assert z in fig1.downstream_links[w]
            assert w in fig1.incoming[fig1.links[z].upstream]


def test_every_signalled_link_has_a_phase(fig1):
    for z, lk in fig1.links.items():
        if fig1.nodes[lk.downstream].is_junction:
            assert fig1.phases_of_link[z]


def test_budget_is_cycle_minus_lost_time(fig1):
    assert all(j.cycle_budget == 56.0 for j in fig1.junctions.values())


def test_two_subnetwork_boundaries(fig1, fig1_two):
    assert set(fig1_two.boundary[("S1", "S2")]) == FIG1_BOUNDARY_S1_S2
    assert set(fig1_two.boundary[("S2", "S1")]) == FIG1_BOUNDARY_S2_S1
    assert fig1_two.neighbors == {"S1": ("S2",), "S2": ("S1",)}


def test_boundary_definition(fig1, fig1_per_junction):
    part = fig1_per_junction
    for (i, j), zs in part.boundary.items():
        assert i != j
        for z in zs:
            lk = fig1.links[z]
            assert part.owner_of_junction[lk.upstream] == i
            assert part.owner_of_junction[lk.downstream] == j


def test_per_junction_partition_neighbours(fig1_per_junction):
    assert len(fig1_per_junction.ids) == 4
    for s, nb in fig1_per_junction.neighbors.items():
        assert nb
        for j in nb:
            assert s in fig1_per_junction.neighbors[j]


def test_single_partition_has_no_neighbours(fig1):
    part = single_partition(fig1)
    assert part.neighbors == {"S": ()}
    assert part.boundary == {}


@pytest.mark.parametrize("part_name", ["two", "per_junction", "single"])
def test_ownership_covers_each_link_once(fig1, fig1_two, fig1_per_junction, part_name):
    part = {"two": fig1_two, "per_junction": fig1_per_junction, "single": single_partition(fig1)}[part_name]
    for z in fig1.links:
        assert part.n_owner(fig1, z) in part.ids
        assert part.q_owner(fig1, z) in part.ids


def test_partition_errors(fig1):
    with pytest.raises(NetworkError, match="unassigned"):
        partition_network(fig1, {"A": ["J1", "J2", "J3"]})
    with pytest.raises(NetworkError, match="unknown junction"):
        partition_network(fig1, {"A": ["J1", "J2", "J3", "J4", "J9"]})
    with pytest.raises(NetworkError, match="twice"):
        partition_network(fig1, {"A": ["J1", "J2"], "B": ["J2", "J3", "J4"]})


def test_disconnected_agent_graph_rejected():
    spec = tiny()
    spec["nodes"].append({"id": "K"})
    spec["nodes"].append({"id": "Z", "kind": "external"})
    spec["links"].append({"id": "c", "upstream": "Z", "downstream": "K", "capacity": 10})
    spec["phases"].append({"id": "q", "junction": "K", "links": ["c"], "max_split": 30})
    spec["junctions"].append({"id": "K", "phases": ["q"], "lost_time": 4})
    net = build_network(spec)
    with pytest.raises(NetworkError, match="disconnected"):
        partition_network(net, {"A": ["J"], "B": ["K"]})


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda s: s["links"].append({"id": "c", "upstream": "X", "downstream": "Q", "capacity": 1}), "unknown node"),
        (lambda s: s["links"].append({"id": "c", "upstream": "X", "downstream": "Y", "capacity": 1}), "two external"),
        (lambda s: s["junctions"][0].update(phases=[]), "no phases"),
        (lambda s: s["links"][0].update(initial_count=11), "initial count"),
        (lambda s: s["links"][0].update(capacity=0), "positive"),
        (lambda s: s["junctions"][0].update(lost_time=60), "budget"),
        (lambda s: s["phases"][0].update(links=["b"]), "does not enter"),
        (lambda s: s["links"].append(dict(s["links"][0])), "duplicate link"),
    ],
)
def test_build_network_errors(mutate, message):
    spec = tiny()
    mutate(spec)
    with pytest.raises(NetworkError, match=message):
        build_network(spec)


def test_single_link_between_externals_is_rejected():
    spec = {
        "nodes": [{"id": "X", "kind": "external"}, {"id": "Y", "kind": "external"}],
        "links": [{"id": "a", "upstream": "X", "downstream": "Y", "capacity": 5}],
    }
    with pytest.raises(NetworkError):
        build_network(spec)


def test_saturation_default_per_lane():
    net = build_network(tiny(lanes=3))
    assert net.links["a"].saturation_flow == pytest.approx(1.65)


def test_round_trip_preserves_derived_sets(fig1, tmp_path):
    path = tmp_path / "net.json"
    save_network(fig1, path)
    again = load_network(path)
    for attr in ("downstream_links", "upstream_links", "incoming", "outgoing", "phases_of_link", "sources", "sinks"):
        assert getattr(again, attr) == getattr(fig1, attr)
    assert json.loads(path.read_text())["schema"] == "dsmpc-network/1"


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3))
def test_grid_invariants(rows, cols):
    net = grid_network(rows, cols)
    assert len(net.junctions) == rows * cols
    # two directed links per road; boundary roads: 2*(rows+cols) per direction pair
    assert len(net.links) == 2 * (rows * (cols - 1) + cols * (rows - 1)) + 4 * (rows + cols)
    for z in net.links:
        for w in net.downstream_links[z]:
            assert z in net.upstream_links[w]
            assert net.links[w].downstream != net.links[z].upstream  # no U-turns
    part = per_junction_partition(net)
    for (i, j) in part.boundary:
        assert (j, i) in part.boundary


def test_builtin_grid_name():
    assert len(builtin_network("grid:2x2").links) == 24
    with pytest.raises(NetworkError):
        builtin_network("nope")
