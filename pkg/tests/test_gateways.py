"""Gateways: ingress verification and queries, egress dedup, returns, registry."""

import pytest

from irec.errors import Disconnected, UnknownEgressInterface
from irec.gateways import (
    ANY,
    EgressGateway,
    FastpathState,
    IngressGateway,
    PathRegistry,
    Submission,
    bootstrap_request,
    fastpath_forward,
)
from irec.pcb import Pcb

from conftest import (
    beacon_along,
    extend_to,
    line_topology,
    make_signer,
    originate_at,
)


@pytest.fixture
def topo():
    return line_topology(5)


@pytest.fixture
def ingress(topo, signer):
    # gateway of AS 3 on the line
    return IngressGateway(3, topo, signer)


def arriving_at_3(topo, signer, **exts):
    """A fresh beacon from AS 1 that has crossed AS 2 toward AS 3."""
    return beacon_along(topo, signer, [(1, 1), (2, 2)], **exts)


class TestIngressAccept:
    def test_valid_stored_and_queryable(self, topo, signer, ingress):
        pcb = arriving_at_3(topo, signer)
        decision = ingress.accept(pcb, now=1)
        assert decision.stored and not decision.duplicate
        assert ingress.db.query(1, now=1) == [pcb]

    def test_expired_rejected(self, topo, signer, ingress):
        pcb = arriving_at_3(topo, signer)
        decision = ingress.accept(pcb, now=pcb.expiry_time + 1)
        assert not decision.stored and decision.reason == "Expired"

    def test_duplicate_is_noop(self, topo, signer, ingress):
        pcb = arriving_at_3(topo, signer)
        assert ingress.accept(pcb, 1).stored
        second = ingress.accept(pcb, 2)
        assert second.stored and second.duplicate
        assert len(ingress.db) == 1

    def test_tampered_rejected(self, topo, signer, ingress):
        pcb = arriving_at_3(topo, signer)
        bad = Pcb(pcb.origin_as, pcb.origin_egress_if, pcb.creation_time,
                  pcb.expiry_time + 1, pcb.target_as, pcb.algorithm, pcb.group_id,
                  pcb.hops)
        assert ingress.accept(bad, 1).reason == "BadChain"

    def test_own_as_on_path_rejected(self, topo, signer, ingress):
        looped = beacon_along(topo, signer, [(2, 2), (3, 2), (4, 1)])
        # delivered back to AS 3, which is already on the path
        assert ingress.accept(looped, 1).reason == "Loop"

    def test_policy_hook(self, topo, signer):
        gw = IngressGateway(3, topo, signer, policy=lambda p: p.origin_as != 1)
        assert gw.accept(arriving_at_3(topo, signer), 1).reason == "PolicyViolation"


class TestIngressQuery:
    def test_all_from_origin(self, topo, signer, ingress):
        pcbs = [arriving_at_3(topo, signer, validity=50 + i) for i in range(3)]
        for p in pcbs:
            ingress.accept(p, 0)
        assert set(ingress.db.query(1, now=0)) == set(pcbs)

    def test_group_key_mismatch_empty(self, topo, signer, ingress):
        ingress.accept(arriving_at_3(topo, signer, group_id=1), 0)
        assert ingress.db.query(1, now=0, group_id=2) == []
        assert len(ingress.db.query(1, now=0, group_id=1)) == 1

    def test_absent_key_semantics(self, topo, signer, ingress):
        grouped = arriving_at_3(topo, signer, group_id=1)
        plain = arriving_at_3(topo, signer, validity=60)
        ingress.accept(grouped, 0)
        ingress.accept(plain, 0)
        # partitioning on: None matches only beacons lacking the extension
        assert ingress.db.query(1, now=0, group_id=None) == [plain]
        # partitioning off: ANY matches everything
        assert len(ingress.db.query(1, now=0, group_id=ANY)) == 2

    def test_expired_never_returned(self, topo, signer, ingress):
        pcb = arriving_at_3(topo, signer, validity=5)
        ingress.accept(pcb, 0)
        assert ingress.db.query(1, now=pcb.expiry_time + 1) == []


class TestPurge:
    def test_nothing_expired(self, topo, signer, ingress):
        ingress.accept(arriving_at_3(topo, signer, validity=50), 0)
        assert ingress.purge(0) == 0

    def test_partial(self, topo, signer, ingress):
        for validity in (3, 4, 50, 60, 70):
            ingress.accept(arriving_at_3(topo, signer, validity=validity), 0)
        assert ingress.purge(3) == 2
        assert len(ingress.db) == 3

    def test_lookahead_removes_next_round(self, topo, signer, ingress):
        pcb = arriving_at_3(topo, signer, validity=6)
        ingress.accept(pcb, 0)
        assert ingress.purge(5) == 1  # expires at round 6 = now + 1


@pytest.fixture
def egress(topo, signer):
    return EgressGateway(3, topo, signer)


class TestEgressSubmit:
    def test_first_submission_all_new(self, topo, signer, egress):
        pcb = arriving_at_3(topo, signer)
        fresh = egress.submit(Submission("A", pcb, frozenset({1, 2})), 0)
        assert fresh == {1, 2}

    def test_second_rac_only_new_interfaces(self, topo, signer, egress):
        pcb = arriving_at_3(topo, signer)
        egress.submit(Submission("A", pcb, frozenset({1, 2})), 0)
        fresh = egress.submit(Submission("B", pcb, frozenset({2})), 0)
        assert fresh == frozenset()
        again = egress.submit(Submission("B", pcb, frozenset({2, 1})), 0)
        assert again == frozenset()

    def test_resubmit_empty(self, topo, signer, egress):
        pcb = arriving_at_3(topo, signer)
        egress.submit(Submission("A", pcb, frozenset({1})), 0)
        assert egress.submit(Submission("A", pcb, frozenset({1})), 0) == frozenset()

    def test_unknown_interface(self, topo, signer, egress):
        pcb = arriving_at_3(topo, signer)
        with pytest.raises(UnknownEgressInterface):
            egress.submit(Submission("A", pcb, frozenset({9})), 0)

    def test_egress_db_holds_no_beacons(self, topo, signer, egress):
        pcb = arriving_at_3(topo, signer)
        egress.submit(Submission("A", pcb, frozenset({2})), 0)
        flat = list(egress.db._sent.items())
        for digest, (expiry, ifs) in flat:
            assert isinstance(digest, bytes) and isinstance(expiry, int)
            assert all(isinstance(i, int) for i in ifs)


class TestEgressPropagate:
    def test_extends_and_emits(self, topo, signer, egress):
        pcb = arriving_at_3(topo, signer)
        egress.submit(Submission("A", pcb, frozenset({2})), 0)
        out = egress.propagate(0)
        assert len(out.emissions) == 1
        em = out.emissions[0]
        assert em.next_as == 4
        assert em.pcb.hop_count() == 3
        assert em.pcb.hops[-1].as_id == 3

    def test_loop_dropped_others_kept(self, topo, signer, egress):
        pcb = arriving_at_3(topo, signer)
        egress.submit(Submission("A", pcb, frozenset({1, 2})), 0)
        out = egress.propagate(0)
        # egress 1 leads back to AS 2, already on path
        assert [d.reason for d in out.drops] == ["LoopDetected"]
        assert [em.egress_if for em in out.emissions] == [2]

    def test_target_returned_not_extended(self, topo, signer, egress):
        pcb = arriving_at_3(topo, signer, target_as=3)
        egress.submit(Submission("A", pcb, frozenset({2})), 0)
        out = egress.propagate(0)
        assert not out.emissions
        assert len(out.returns) == 1
        ret = out.returns[0]
        assert ret.origin_as == 1
        assert ret.pcb.hop_count() == pcb.hop_count()

    def test_target_returned_once(self, topo, signer, egress):
        pcb = arriving_at_3(topo, signer, target_as=3)
        egress.submit(Submission("A", pcb, frozenset({1})), 0)
        egress.submit(Submission("B", pcb, frozenset({2})), 0)
        out = egress.propagate(0)
        assert len(out.returns) == 1


class TestRegistry:
    def entries(self, topo, signer, n, origin=1):
        out = []
        for i in range(n):
            pcb = arriving_at_3(topo, signer, validity=40 + i)
            out.append((pcb, (float(i), pcb.digest())))
        return out

    def test_under_cap_all_accepted(self, topo, signer, egress):
        outcome = egress.register_paths("A", self.entries(topo, signer, 5), frozenset({"hops"}))
        assert outcome.accepted == 5

    def test_overflow_keeps_best(self, topo, signer):
        gw = EgressGateway(3, line_topology(5), make_signer(range(1, 6)), registry_cap=20)
        entries = self.entries(line_topology(5), make_signer(range(1, 6)), 25)
        outcome = gw.register_paths("A", entries, frozenset({"hops"}))
        assert outcome.accepted == 20
        rows = gw.registry.rows()
        assert len(rows) == 20
        kept_keys = {row.digest for row in rows}
        best20 = {pcb.digest() for pcb, key in sorted(entries, key=lambda e: e[1])[:20]}
        assert kept_keys == best20

    def test_duplicate_digest_stored_once(self, topo, signer, egress):
        pcb = arriving_at_3(topo, signer)
        entries = [(pcb, (1.0, pcb.digest())), (pcb, (2.0, pcb.digest()))]
        outcome = egress.register_paths("A", entries, frozenset({"hops"}))
        assert outcome.accepted == 1
        assert len(egress.registry.rows()) == 1

    def test_tags_required(self, topo, signer, egress):
        pcb = arriving_at_3(topo, signer)
        with pytest.raises(ValueError):
            PathRegistry().add("A", pcb, (0.0,), frozenset())

    def test_cap_never_exceeded(self, topo, signer):
        gw = EgressGateway(3, line_topology(5), make_signer(range(1, 6)), registry_cap=4)
        for i in range(12):
            pcb = arriving_at_3(line_topology(5), make_signer(range(1, 6)), validity=30 + i)
            gw.register_paths("A", [(pcb, (float(i), pcb.digest()))], frozenset({"x"}))
        assert len(gw.registry.rows()) == 4


class TestBootstrap:
    def wire(self, registered_map, topo):
        return dict(
            neighbors=lambda a: topo.neighbors(a),
            registered=lambda a: registered_map.get(a, []),
        )

    def test_direct_neighbor_has_paths(self, topo, signer):
        pcb = arriving_at_3(topo, signer)
        wiring = self.wire({2: [pcb]}, topo)
        assert bootstrap_request(3, 1, **wiring) == {pcb}

    def test_line_recursion(self, topo, signer):
        pcb = arriving_at_3(topo, signer)
        # line 1-2-3-4-5; only AS 3 has paths; AS 1 asks with depth 2
        wiring = self.wire({3: [pcb]}, topo)
        assert bootstrap_request(1, 2, **wiring) == {pcb}

    def test_depth_exhausted(self, topo, signer):
        pcb = arriving_at_3(topo, signer)
        wiring = self.wire({3: [pcb]}, topo)
        with pytest.raises(Disconnected):
            bootstrap_request(1, 1, **wiring)


class TestFastpath:
    def test_first_forwarded(self, topo, signer):
        state = FastpathState()
        assert fastpath_forward(arriving_at_3(topo, signer), 0, state)

    def test_same_origin_same_round_limited(self, topo, signer):
        state = FastpathState()
        a = arriving_at_3(topo, signer)
        b = arriving_at_3(topo, signer, validity=60)
        assert fastpath_forward(a, 0, state)
        assert not fastpath_forward(b, 0, state)

    def test_next_interval_forwarded(self, topo, signer):
        state = FastpathState()
        assert fastpath_forward(arriving_at_3(topo, signer), 0, state)
        assert fastpath_forward(arriving_at_3(topo, signer, validity=60), 1, state)

    def test_distinct_origins_independent(self, topo, signer):
        state = FastpathState()
        assert fastpath_forward(arriving_at_3(topo, signer), 0, state)
        other = beacon_along(topo, signer, [(5, 1), (4, 1)])  # origin 5 toward 3
        assert fastpath_forward(other, 0, state)
