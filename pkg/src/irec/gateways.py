"""Per-AS ingress and egress gateways.

The ingress gateway verifies and stores incoming beacons; the egress gateway
originates beacons, deduplicates RAC submissions per egress interface,
extends and propagates beacons, returns pull beacons that reached their
target, and registers selected paths. Each AS owns exactly one gateway pair;
the simulator is the only writer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from . import pcb as pcbmod
from .errors import (
    BadChain,
    Disconnected,
    LinkMismatch,
    LoopDetected,
    MissingMetric,
    UnknownAsKey,
    UnknownEgressInterface,
    UnknownInterface,
)
from .pcb import AsId, InterfaceId, MetricId, Pcb, Signer, make_static_info
from .topology import Topology

# Rejection reasons surfaced in the event log.
REJECT_BAD_CHAIN = "BadChain"
REJECT_EXPIRED = "Expired"
REJECT_POLICY = "PolicyViolation"
REJECT_LOOP = "Loop"

ALL_METRICS = frozenset(MetricId)

# Query sentinel: "no constraint on this key".
ANY = object()

Policy = Callable[[Pcb], bool]


@dataclass(frozen=True)
class IngressDecision:
    stored: bool
    reason: str | None = None
    duplicate: bool = False


@dataclass(frozen=True)
class Submission:
    """One RAC's selection for a beacon: propagate on these egress interfaces."""

    rac_id: str
    pcb: Pcb
    egress_ifs: frozenset[InterfaceId]

    def __post_init__(self):
        if not self.egress_ifs:
            raise ValueError("egress_ifs must be nonempty")


class IngressDb:
    """Digest-keyed beacon store with expiry-aware queries."""

    def __init__(self):
        self._entries: dict[bytes, tuple[Pcb, int]] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, digest: bytes) -> bool:
        return digest in self._entries

    def add(self, pcb: Pcb, now: int) -> bool:
        digest = pcb.digest()
        if digest in self._entries:
            return False
        self._entries[digest] = (pcb, now)
        return True

    def query(self, origin_as: AsId, now: int, *, group_id=ANY, target_as=ANY) -> list[Pcb]:
        """Unexpired beacons from origin_as matching the given keys.

        Pass ANY to leave a key unconstrained; pass None to match only
        beacons lacking that extension (used when partitioning is on).
        """
        out = []
        for digest in sorted(self._entries):
            pcb, _ = self._entries[digest]
            if pcb.origin_as != origin_as or pcb.expiry_time < now:
                continue
            if group_id is not ANY and pcb.group_id != group_id:
                continue
            if target_as is not ANY and pcb.target_as != target_as:
                continue
            out.append(pcb)
        return out

    def all_unexpired(self, now: int) -> list[Pcb]:
        return [
            pcb for digest, (pcb, _) in sorted(self._entries.items())
            if pcb.expiry_time >= now
        ]

    def purge(self, now: int, lookahead: int = 1) -> int:
        doomed = [
            d for d, (pcb, _) in self._entries.items()
            if pcb.expiry_time <= now + lookahead
        ]
        for d in doomed:
            del self._entries[d]
        return len(doomed)


class IngressGateway:
    """Verifies signatures, policy, freshness; owns the ingress database."""

    def __init__(
        self,
        as_id: AsId,
        topology: Topology,
        key_lookup: Signer,
        policy: Policy | None = None,
        purge_lookahead: int = 1,
    ):
        self.as_id = as_id
        self.topology = topology
        self.key_lookup = key_lookup
        self.policy = policy
        self.purge_lookahead = purge_lookahead
        self.db = IngressDb()

    def accept(self, pcb: Pcb, now: int) -> IngressDecision:
        if pcb.expiry_time < now:
            return IngressDecision(False, REJECT_EXPIRED)
        if len(set(pcb.as_ids())) != len(pcb.hops) or self.as_id in pcb.as_ids():
            return IngressDecision(False, REJECT_LOOP)
        try:
            pcbmod.verify_chain(pcb, self.key_lookup)
        except BadChain:
            return IngressDecision(False, REJECT_BAD_CHAIN)
        if not self._path_consistent(pcb):
            return IngressDecision(False, REJECT_POLICY)
        if self.policy is not None and not self.policy(pcb):
            return IngressDecision(False, REJECT_POLICY)
        fresh = self.db.add(pcb, now)
        return IngressDecision(True, None, duplicate=not fresh)

    def _path_consistent(self, pcb: Pcb) -> bool:
        """Every hop's egress link must lead to the next hop (finally to us)."""
        try:
            for h_prev, h_next in zip(pcb.hops, pcb.hops[1:]):
                peer = self.topology.interface(h_prev.as_id, h_prev.egress_if).peer
                if peer != (h_next.as_id, h_next.ingress_if):
                    return False
            last = pcb.hops[-1]
            return self.topology.interface(last.as_id, last.egress_if).peer[0] == self.as_id
        except UnknownInterface:
            return False

    def purge(self, now: int) -> int:
        return self.db.purge(now, self.purge_lookahead)


class EgressDb:
    """Propagation dedup state: beacon digests only, never beacon bodies."""

    def __init__(self):
        self._sent: dict[bytes, tuple[int, set[InterfaceId]]] = {}

    def newly_added(self, digest: bytes, expiry: int,
                    egress_ifs: Iterable[InterfaceId]) -> frozenset[InterfaceId]:
        expiry_old, sent = self._sent.setdefault(digest, (expiry, set()))
        fresh = frozenset(egress_ifs) - sent
        sent.update(fresh)
        return fresh

    def sent_on(self, digest: bytes) -> frozenset[InterfaceId]:
        entry = self._sent.get(digest)
        return frozenset(entry[1]) if entry else frozenset()

    def purge(self, now: int, lookahead: int = 1) -> int:
        doomed = [d for d, (expiry, _) in self._sent.items() if expiry <= now + lookahead]
        for d in doomed:
            del self._sent[d]
        return len(doomed)


@dataclass(frozen=True)
class RegistryRow:
    rac_id: str
    origin_as: AsId
    group_id: int
    digest: bytes
    hops: int
    delay_ms: float | None
    tags: frozenset[str]
    pcb: Pcb


@dataclass
class _RegEntry:
    pcb: Pcb
    order_key: tuple
    tags: frozenset[str]


class PathRegistry:
    """Capacity-bounded registered-path store per (rac, origin, group)."""

    def __init__(self, cap: int = 20):
        self.cap = cap
        self._buckets: dict[tuple[str, AsId, int], dict[bytes, _RegEntry]] = {}

    def add(self, rac_id: str, pcb: Pcb, order_key: tuple, tags: frozenset[str]) -> bool:
        """Insert one path; returns True if it is present after eviction."""
        if not tags:
            raise ValueError("criteria tags must be nonempty")
        key = (rac_id, pcb.origin_as, pcb.group_id or 0)
        bucket = self._buckets.setdefault(key, {})
        digest = pcb.digest()
        if digest in bucket:
            entry = bucket[digest]
            if order_key < entry.order_key:
                entry.order_key = order_key
            entry.tags = entry.tags | tags
        else:
            bucket[digest] = _RegEntry(pcb, tuple(order_key), frozenset(tags))
        if len(bucket) > self.cap:
            worst = max(bucket.items(), key=lambda kv: (kv[1].order_key, kv[0]))
            del bucket[worst[0]]
        return digest in bucket

    def rows(self) -> list[RegistryRow]:
        out = []
        for (rac_id, origin, group) in sorted(self._buckets):
            bucket = self._buckets[(rac_id, origin, group)]
            ordered = sorted(bucket.items(), key=lambda kv: (kv[1].order_key, kv[0]))
            for digest, entry in ordered:
                try:
                    delay = pcbmod.accumulated_delay(entry.pcb)
                except MissingMetric:
                    delay = None
                out.append(RegistryRow(rac_id, origin, group, digest,
                                       entry.pcb.hop_count(), delay, entry.tags, entry.pcb))
        return out

    def bucket(self, rac_id: str, origin_as: AsId, group_id: int = 0) -> list[RegistryRow]:
        return [r for r in self.rows()
                if (r.rac_id, r.origin_as, r.group_id) == (rac_id, origin_as, group_id)]

    def contains(self, rac_id: str, pcb: Pcb) -> bool:
        key = (rac_id, pcb.origin_as, pcb.group_id or 0)
        return pcb.digest() in self._buckets.get(key, {})

    def all_pcbs(self) -> list[Pcb]:
        return [row.pcb for row in self.rows()]


@dataclass(frozen=True)
class RegisterOutcome:
    """accepted: how many of the call's distinct paths are retained."""

    accepted: int
    new_digests: tuple[bytes, ...]


@dataclass(frozen=True)
class Emission:
    """One extended beacon handed to a neighbor's ingress next round."""

    received_digest: bytes
    egress_if: InterfaceId
    next_as: AsId
    pcb: Pcb
    rac_id: str


@dataclass(frozen=True)
class ReturnEmission:
    """A pull beacon that reached its target, sent back to its origin."""

    digest: bytes
    origin_as: AsId
    pcb: Pcb
    rac_id: str


@dataclass(frozen=True)
class Drop:
    digest: bytes
    egress_if: InterfaceId
    reason: str
    rac_id: str


@dataclass(frozen=True)
class PropagationOutcome:
    emissions: tuple[Emission, ...]
    returns: tuple[ReturnEmission, ...]
    drops: tuple[Drop, ...]


class EgressGateway:
    """Origination, per-egress dedup, extension, pull returns, registration."""

    def __init__(
        self,
        as_id: AsId,
        topology: Topology,
        signer: Signer,
        *,
        registry_cap: int = 20,
        validity_cap: int = pcbmod.DEFAULT_VALIDITY_CAP,
        shared_metrics: frozenset[MetricId] = ALL_METRICS,
        purge_lookahead: int = 1,
    ):
        self.as_id = as_id
        self.topology = topology
        self.signer = signer
        self.validity_cap = validity_cap
        self.shared_metrics = shared_metrics
        self.purge_lookahead = purge_lookahead
        self.db = EgressDb()
        self.registry = PathRegistry(registry_cap)
        self._returned: dict[bytes, int] = {}
        self._pending: list[tuple[Pcb, InterfaceId, str]] = []

    # -- static info from topology, subject to the sharing policy --

    def _static_info(self, egress_if: InterfaceId, ingress_if: InterfaceId | None):
        iface = self.topology.interface(self.as_id, egress_if)
        kwargs = {}
        if MetricId.LINK_DELAY_MS in self.shared_metrics:
            kwargs["link_delay_ms"] = self.topology.link_delay_ms(self.as_id, egress_if)
        if MetricId.BANDWIDTH_MBPS in self.shared_metrics:
            kwargs["bandwidth_mbps"] = iface.link_bandwidth_mbps
        if MetricId.GEO_LAT_LON in self.shared_metrics:
            kwargs["geo"] = (iface.location.lat_deg, iface.location.lon_deg)
        if ingress_if is not None and MetricId.INTRA_DELAY_MS in self.shared_metrics:
            kwargs["intra_delay_ms"] = self.topology.intra_delay_ms(
                self.as_id, ingress_if, egress_if)
        return make_static_info(**kwargs)

    # -- origination --

    def originate(
        self,
        egress_if: InterfaceId,
        now: int,
        validity: int,
        *,
        target_as: AsId | None = None,
        algorithm: pcbmod.AlgorithmExt | None = None,
        group_id: int | None = None,
    ) -> tuple[Pcb, AsId]:
        """Create and sign a fresh beacon; returns it with the neighbor AS."""
        iface = self.topology.interface(self.as_id, egress_if)
        pcb = pcbmod.originate(
            self.as_id, egress_if,
            static_info=self._static_info(egress_if, None),
            signer=self.signer, now=now, validity=validity,
            validity_cap=self.validity_cap,
            target_as=target_as, algorithm=algorithm, group_id=group_id,
        )
        return pcb, iface.peer[0]

    # -- submissions and propagation --

    def submit(self, sub: Submission, now: int) -> frozenset[InterfaceId]:
        """Dedup a RAC submission; only newly added egress interfaces survive."""
        local_ifs = {i.if_id for i in self.topology.interfaces(self.as_id)}
        bad = set(sub.egress_ifs) - local_ifs
        if bad:
            raise UnknownEgressInterface(f"AS {self.as_id} has no interfaces {sorted(bad)}")
        fresh = self.db.newly_added(sub.pcb.digest(), sub.pcb.expiry_time, sub.egress_ifs)
        for eif in sorted(fresh):
            self._pending.append((sub.pcb, eif, sub.rac_id))
        return fresh

    def propagate(self, now: int) -> PropagationOutcome:
        """Extend pending beacons per egress; return pull beacons at target."""
        emissions: list[Emission] = []
        returns: list[ReturnEmission] = []
        drops: list[Drop] = []
        pending = sorted(self._pending, key=lambda t: (t[0].digest(), t[1], t[2]))
        self._pending = []
        for pcb, eif, rac_id in pending:
            digest = pcb.digest()
            if pcb.target_as == self.as_id:
                if digest not in self._returned:
                    self._returned[digest] = pcb.expiry_time
                    returns.append(ReturnEmission(digest, pcb.origin_as, pcb, rac_id))
                continue
            last = pcb.hops[-1]
            try:
                peer = self.topology.interface(last.as_id, last.egress_if).peer
            except UnknownInterface:
                drops.append(Drop(digest, eif, "unknown-arrival", rac_id))
                continue
            if peer[0] != self.as_id:
                drops.append(Drop(digest, eif, "link-mismatch", rac_id))
                continue
            arrival_if = peer[1]
            next_as = self.topology.interface(self.as_id, eif).peer[0]
            if next_as in pcb.as_ids():
                drops.append(Drop(digest, eif, "LoopDetected", rac_id))
                continue
            try:
                extended = pcbmod.extend(
                    pcb, self.as_id, arrival_if, eif,
                    self._static_info(eif, arrival_if), self.signer,
                )
            except (LoopDetected, LinkMismatch) as exc:
                drops.append(Drop(digest, eif, type(exc).__name__, rac_id))
                continue
            emissions.append(Emission(digest, eif, next_as, extended, rac_id))
        return PropagationOutcome(tuple(emissions), tuple(returns), tuple(drops))

    # -- registration --

    def register_paths(
        self,
        rac_id: str,
        entries: Iterable[tuple[Pcb, tuple]],
        tags: frozenset[str],
    ) -> RegisterOutcome:
        call_digests: dict[bytes, Pcb] = {}
        fresh: list[bytes] = []
        for pcb, order_key in entries:
            digest = pcb.digest()
            was_new = not self.registry.contains(rac_id, pcb)
            if self.registry.add(rac_id, pcb, order_key, tags) and was_new:
                if digest not in call_digests:
                    fresh.append(digest)
            call_digests[digest] = pcb
        accepted = sum(
            1 for digest, pcb in call_digests.items()
            if self.registry.contains(rac_id, pcb)
        )
        return RegisterOutcome(accepted, tuple(fresh))

    def purge(self, now: int) -> int:
        removed = self.db.purge(now, self.purge_lookahead)
        doomed = [d for d, expiry in self._returned.items()
                  if expiry <= now + self.purge_lookahead]
        for d in doomed:
            del self._returned[d]
        return removed


# --- bootstrapping -----------------------------------------------------------

def bootstrap_request(
    requester: AsId,
    depth_limit: int,
    neighbors: Callable[[AsId], Iterable[AsId]],
    registered: Callable[[AsId], Iterable[Pcb]],
) -> set[Pcb]:
    """Recursively pull registered paths from neighbors.

    A neighbor with paths answers directly; one without recurses with a
    decremented depth. Raises Disconnected when nothing is found in range.
    """
    if depth_limit < 1:
        raise ValueError("depth_limit must be >= 1")

    def ask(as_id: AsId, depth: int, visited: frozenset[AsId]) -> set[Pcb]:
        found: set[Pcb] = set()
        for nb in sorted(set(neighbors(as_id)) - visited):
            paths = list(registered(nb))
            if paths:
                found.update(paths)
            elif depth > 1:
                found.update(ask(nb, depth - 1, visited | {nb}))
        return found

    result = ask(requester, depth_limit, frozenset({requester}))
    if not result:
        raise Disconnected(f"no paths within depth {depth_limit} of AS {requester}")
    return result


# --- fast-forward RAC (bootstrapping extension) -------------------------------

@dataclass
class FastpathState:
    """Per-origin rate limiting for the immediate-forward path."""

    interval: int = 1
    last_forward: dict[AsId, int] = field(default_factory=dict)


def fastpath_forward(pcb: Pcb, now: int, state: FastpathState) -> bool:
    """True (forward) unless this origin was already forwarded this interval."""
    last = state.last_forward.get(pcb.origin_as)
    if last is not None and now - last < state.interval:
        return False
    state.last_forward[pcb.origin_as] = now
    return True
