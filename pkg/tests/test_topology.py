"""Topology: great-circle numerics, ingestion, pruning, groups, oracle graph."""

import io
import math

import networkx as nx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irec.errors import DuplicateLink, InfeasibleParameters, ParseError, UnknownInterface
from irec.topology import (
    EARTH_RADIUS_KM,
    PROPAGATION_KM_PER_S,
    GeoPoint,
    LinkSpec,
    Topology,
    cluster_interface_groups,
    dump_georel,
    haversine_km,
    load_georel,
    propagation_delay_ms,
    prune_to_top_n,
    synth_topology,
)

from conftest import lat_for_km

geo = st.builds(
    GeoPoint,
    st.floats(min_value=-90.0, max_value=90.0),
    st.floats(min_value=-180.0, max_value=180.0),
)


class TestHaversine:
    def test_zero_for_equal_points(self):
        p = GeoPoint(47.37, 8.54)
        assert haversine_km(p, p) == 0.0

    def test_quarter_meridian(self):
        assert haversine_km(GeoPoint(0, 0), GeoPoint(90, 0)) == pytest.approx(
            10007.54, abs=0.01)

    def test_antipodal(self):
        assert haversine_km(GeoPoint(0, 0), GeoPoint(0, 180)) == pytest.approx(
            20015.09, abs=0.01)

    @settings(max_examples=200, deadline=None)
    @given(a=geo, b=geo)
    def test_symmetric_nonnegative_bounded(self, a, b):
        d = haversine_km(a, b)
        assert d >= 0.0
        assert d == pytest.approx(haversine_km(b, a))
        assert d <= math.pi * EARTH_RADIUS_KM + 1e-6


class TestPropagationDelay:
    def test_zero(self):
        p = GeoPoint(1.0, 2.0)
        assert propagation_delay_ms(p, p) == 0.0

    def test_1000km(self):
        a = GeoPoint(0, 0)
        b = GeoPoint(lat_for_km(1000.0), 0)
        assert propagation_delay_ms(a, b) == pytest.approx(5.003, abs=0.001)

    def test_quarter_meridian(self):
        assert propagation_delay_ms(GeoPoint(0, 0), GeoPoint(90, 0)) == pytest.approx(
            50.07, abs=0.05)


class TestIntraDelay:
    def topo(self):
        loc_a = GeoPoint(0.0, 0.0)
        loc_b = GeoPoint(lat_for_km(1000.0), 0.0)
        return Topology([
            LinkSpec(1, 2, loc_a, loc_a),
            LinkSpec(1, 3, loc_b, loc_b),
            LinkSpec(1, 4, loc_a, loc_a),
        ])

    def test_same_interface(self):
        assert self.topo().intra_delay_ms(1, 1, 1) == 0.0

    def test_colocated(self):
        assert self.topo().intra_delay_ms(1, 1, 3) == 0.0

    def test_1000km_apart(self):
        assert self.topo().intra_delay_ms(1, 1, 2) == pytest.approx(5.003, abs=0.001)

    def test_unknown_interface(self):
        with pytest.raises(UnknownInterface):
            self.topo().intra_delay_ms(1, 1, 9)


class TestGeoRel:
    def test_small_file(self):
        text = "# comment\n1 2 p2p 10.5 20.25\n2 3 c2p -5.0 30.0 500\n"
        topo = load_georel(io.StringIO(text))
        assert topo.as_ids == (1, 2, 3)
        assert topo.link_count() == 2
        assert sum(len(topo.interfaces(a)) for a in topo.as_ids) == 4
        assert topo.interface(2, 2).link_bandwidth_mbps == 500.0
        assert topo.interface(3, 1).location == GeoPoint(-5.0, 30.0)

    def test_interface_ids_in_line_order(self):
        text = "1 2 p2p 0 0\n1 3 p2p 0 0\n1 4 p2p 0 0\n"
        topo = load_georel(io.StringIO(text))
        assert [i.if_id for i in topo.interfaces(1)] == [1, 2, 3]
        assert topo.interface(1, 2).peer == (3, 1)

    def test_bad_latitude(self):
        with pytest.raises(ParseError) as exc:
            load_georel(io.StringIO("1 2 p2p 91.0 0\n"))
        assert exc.value.line == 1

    def test_bad_rel(self):
        with pytest.raises(ParseError):
            load_georel(io.StringIO("1 2 sibling 0 0\n"))

    def test_duplicate_line(self):
        with pytest.raises(DuplicateLink) as exc:
            load_georel(io.StringIO("1 2 p2p 0 0\n1 2 p2p 0 0\n"))
        assert exc.value.line == 2

    def test_round_trip(self):
        text = "1 2 p2p 10.5 20.25 100\n2 3 c2p -5.0 30.0 500\n"
        topo = load_georel(io.StringIO(text))
        again = load_georel(io.StringIO(dump_georel(topo)))
        assert again.as_ids == topo.as_ids
        assert again.link_count() == topo.link_count()
        assert dump_georel(again) == dump_georel(topo)


class TestPrune:
    def star(self):
        loc = GeoPoint(0, 0)
        # hub 10, leaves 1..5
        return Topology([LinkSpec(10, leaf, loc, loc) for leaf in (1, 2, 3, 4, 5)])

    def test_star_keeps_largest_leaves(self):
        pruned = prune_to_top_n(self.star(), 3)
        assert pruned.as_ids == (4, 5, 10)
        assert pruned.link_count() == 2

    def test_noop_when_n_large(self):
        topo = self.star()
        pruned = prune_to_top_n(topo, 10)
        assert pruned.as_ids == topo.as_ids
        assert pruned.link_count() == topo.link_count()

    def test_triangle(self):
        loc = GeoPoint(0, 0)
        topo = Topology([LinkSpec(1, 2, loc, loc), LinkSpec(2, 3, loc, loc),
                         LinkSpec(1, 3, loc, loc)])
        pruned = prune_to_top_n(topo, 2)
        assert pruned.as_ids == (2, 3)
        assert pruned.link_count() == 1

    def test_greedy_trace_monotone(self):
        # replay: each removed AS had the minimum degree at its removal
        topo = synth_topology(16, 3.0, 300.0, seed=5)
        alive = set(topo.as_ids)
        links = {frozenset((s.as_a, s.as_b)) for s in topo.link_specs()}
        degree = lambda a: sum(1 for l in links if a in l)
        pruned = prune_to_top_n(topo, 6)
        removed_order = []
        while len(alive) > 6:
            victim = min(alive, key=lambda a: (degree(a), a))
            removed_order.append(victim)
            alive.remove(victim)
            links = {l for l in links if victim not in l}
        assert set(pruned.as_ids) <= alive
        for a in pruned.as_ids:
            assert a not in removed_order


class TestInterfaceGroups:
    def make(self, *lats, d_km):
        loc = GeoPoint(0, 0)
        specs = [LinkSpec(1, 2 + i, GeoPoint(lat, 0.0), loc) for i, lat in enumerate(lats)]
        topo = Topology(specs)
        return cluster_interface_groups(topo, 1, d_km)

    def test_colocated_single_group(self):
        groups = self.make(0.0, 0.0, 0.0, d_km=100)
        assert len(groups) == 1
        assert groups[0].members == frozenset({1, 2, 3})

    def test_two_far_interfaces_split(self):
        groups = self.make(0.0, lat_for_km(500.0), d_km=300)
        assert [sorted(g.members) for g in groups] == [[1], [2]]

    def test_greedy_line(self):
        groups = self.make(0.0, lat_for_km(250.0), lat_for_km(500.0), d_km=300)
        assert [sorted(g.members) for g in groups] == [[1, 2], [3]]
        assert [g.group_id for g in groups] == [1, 2]

    def test_full_coverage_and_diameter(self):
        topo = synth_topology(12, 4.0, 800.0, seed=3)
        for as_id in topo.as_ids:
            groups = cluster_interface_groups(topo, as_id, 300.0)
            members = [i for g in groups for i in g.members]
            assert sorted(members) == sorted(i.if_id for i in topo.interfaces(as_id))
            for g in groups:
                locs = [topo.interface(as_id, i).location for i in g.members]
                for i, a in enumerate(locs):
                    for b in locs[i + 1:]:
                        assert haversine_km(a, b) <= 300.0 + 1e-9


class TestInterfaceGraph:
    def test_two_ases_one_link(self):
        loc = GeoPoint(0, 0)
        g = Topology([LinkSpec(1, 2, loc, loc)]).interface_graph()
        assert g.number_of_nodes() == 2
        assert g.number_of_edges() == 1

    def test_intra_complete(self):
        loc = GeoPoint(0, 0)
        topo = Topology([LinkSpec(1, 9, loc, loc), LinkSpec(1, 8, loc, loc),
                         LinkSpec(1, 7, loc, loc)])
        g = topo.interface_graph()
        intra = [e for e in g.edges(data=True) if e[2]["kind"] == "intra"]
        assert len(intra) == 3

    def test_weights_symmetric(self):
        topo = synth_topology(8, 3.0, 400.0, seed=2)
        g = topo.interface_graph()
        for u, v, data in g.edges(data=True):
            assert data["weight"] >= 0.0
            assert g[v][u]["weight"] == data["weight"]

    def test_shortest_path_matches_beacon_enumeration(self):
        """Dijkstra on the oracle graph = exhaustive loop-free beacon search."""
        topo = synth_topology(6, 3.0, 600.0, seed=11)
        g = topo.interface_graph()

        def beacon_min(start, dest_as):
            best = math.inf
            as0, if0 = start
            stack = [(start, frozenset({as0}), 0.0)]
            while stack:
                (cur_as, cur_if), visited, delay = stack.pop()
                delay += topo.link_delay_ms(cur_as, cur_if)
                nxt_as, nxt_if = topo.interface(cur_as, cur_if).peer
                if nxt_as in visited:
                    continue
                if nxt_as == dest_as:
                    best = min(best, delay)
                    continue
                for iface in topo.interfaces(nxt_as):
                    stack.append((
                        (nxt_as, iface.if_id), visited | {nxt_as},
                        delay + topo.intra_delay_ms(nxt_as, nxt_if, iface.if_id)))
            return best

        checked = 0
        for origin in topo.as_ids[:3]:
            start = (origin, topo.interfaces(origin)[0].if_id)
            # a beacon leaves through its origin interface's link, never intra
            g2 = g.copy()
            g2.remove_edges_from([
                (start, v) for v in list(g2.neighbors(start))
                if g2[start][v]["kind"] == "intra"
            ])
            lengths, paths = nx.single_source_dijkstra(g2, start, weight="weight")
            for dest in topo.as_ids:
                if dest == origin:
                    continue
                enum = beacon_min(start, dest)
                best_if = min(
                    (i.if_id for i in topo.interfaces(dest)),
                    key=lambda i: lengths.get((dest, i), math.inf))
                oracle = lengths.get((dest, best_if), math.inf)
                # the graph is always a lower bound for loop-free beacons ...
                assert enum >= oracle - 1e-9
                node_path = paths.get((dest, best_if), [])
                as_blocks = [a for a, _ in node_path]
                as_blocks = [a for i, a in enumerate(as_blocks)
                             if i == 0 or as_blocks[i - 1] != a]
                if len(set(as_blocks)) == len(as_blocks):
                    # ... and exact whenever its shortest path repeats no AS
                    assert enum == pytest.approx(oracle, abs=1e-9)
                    checked += 1
        assert checked >= 10


class TestSynth:
    def test_deterministic(self):
        a = synth_topology(20, 4.0, 500.0, seed=7)
        b = synth_topology(20, 4.0, 500.0, seed=7)
        assert dump_georel(a) == dump_georel(b)

    def test_minimal(self):
        topo = synth_topology(2, 1.0, 100.0, seed=1)
        assert topo.link_count() == 1
        assert topo.is_connected()

    def test_connected_at_scale(self):
        topo = synth_topology(50, 6.0, 500.0, seed=9)
        assert topo.is_connected()
        assert len(topo.as_ids) == 50

    def test_infeasible(self):
        with pytest.raises(InfeasibleParameters):
            synth_topology(1, 3.0, 100.0, seed=0)
        with pytest.raises(InfeasibleParameters):
            synth_topology(10, 0.5, 100.0, seed=0)
