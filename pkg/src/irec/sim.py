"""Deterministic round-based engine for the whole control plane.

One round is one beaconing period. Per round, every AS (ascending id) runs:
intake of last round's messages, origination, RAC execution, pull-based
controller steps, propagation, purge. Messages emitted in round r are
delivered at intake of round r+1, so beacons travel one AS per round.
Identical configurations produce byte-identical event logs.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from . import algorithms as algmod
from . import pcb as pcbmod
from .errors import ConfigError, UnknownAs
from .gateways import (
    EgressGateway,
    IngressGateway,
    RegistryRow,
    Submission,
)
from .pcb import AlgorithmExt, AsId, InterfaceId, KeyedHashSigner, MetricId, Pcb
from .programs import RoutingProgram, serialize_program
from .rac import Rac, RacConfig, TopologyView
from .rac import AlgorithmStore
from .topology import Topology, cluster_interface_groups

log = logging.getLogger("irec.sim")

# Group ids are partitioned into one stride per grouping profile so that
# beacons of different granularities never share an id.
GROUP_ID_STRIDE = 2048

EV_ORIGINATE = "ORIGINATE"
EV_ACCEPT = "ACCEPT"
EV_REJECT = "REJECT"
EV_SUBMIT = "SUBMIT"
EV_PROPAGATE = "PROPAGATE"
EV_RETURN = "RETURN"
EV_REGISTER = "REGISTER"
EV_PURGE = "PURGE"
EV_FASTPATH = "FASTPATH"


@dataclass(frozen=True)
class Event:
    round_no: int
    as_id: AsId
    seq: int
    kind: str
    digest: bytes | None
    detail: tuple[tuple[str, str], ...] = ()

    def get(self, key: str) -> str | None:
        for k, v in self.detail:
            if k == key:
                return v
        return None

    def render(self) -> str:
        digest = self.digest.hex() if self.digest is not None else "-"
        tail = " ".join(f"{k}={v}" for k, v in self.detail)
        line = f"r={self.round_no} as={self.as_id} seq={self.seq} ev={self.kind} digest={digest}"
        return f"{line} {tail}" if tail else line


@dataclass(frozen=True)
class PullSpec:
    """A standalone pull-based (optionally on-demand) origination."""

    origin_as: AsId
    target_as: AsId
    program: RoutingProgram
    algorithm_id: bytes = b""
    start_round: int = 0

    def effective_algorithm_id(self) -> bytes:
        if self.algorithm_id:
            return self.algorithm_id
        tag = hashlib.sha256(serialize_program(self.program)).hexdigest()[:16]
        return b"PULL" + tag.encode()


@dataclass(frozen=True)
class PdSpec:
    pairs: tuple[tuple[AsId, AsId], ...]
    goal_k: int = 20
    timeout_rounds: int = 30
    seed_rac: str = "HD"
    start_round: int = 0


@dataclass(frozen=True)
class SimConfig:
    topology: Topology
    rounds: int
    racs: tuple[RacConfig, ...]
    period: int = 1
    origination_period: int | None = None  # defaults to period; > rounds = originate once
    originate_plain: bool = True
    group_thresholds_km: tuple[float, ...] = ()
    validity: int = 144
    validity_cap: int = 144
    registry_cap: int = 20
    purge_lookahead: int = 1
    pulls: tuple[PullSpec, ...] = ()
    pd: PdSpec | None = None
    sharing: Mapping[AsId, frozenset[MetricId]] | None = None
    seed: int = 0


@dataclass(frozen=True)
class Message:
    kind: str  # "pcb" | "return"
    sender: AsId
    pcb: Pcb


class Mailbox:
    """Round-delayed delivery: emitted in round r, visible at intake r+1."""

    def __init__(self):
        self._rounds: dict[int, dict[AsId, list[Message]]] = {}

    def emit(self, deliver_round: int, dest: AsId, message: Message) -> None:
        self._rounds.setdefault(deliver_round, {}).setdefault(dest, []).append(message)

    def take(self, round_no: int, dest: AsId) -> list[Message]:
        msgs = self._rounds.get(round_no, {}).pop(dest, [])
        return sorted(msgs, key=lambda m: (m.sender, m.pcb.digest()))


@dataclass(frozen=True)
class ReturnedPcb:
    round_received: int
    dest_as: AsId
    pcb: Pcb


@dataclass(frozen=True)
class RacError:
    round_no: int
    as_id: AsId
    rac_id: str
    partition: str
    error: str


@dataclass(frozen=True)
class DropRecord:
    round_no: int
    as_id: AsId
    digest: bytes
    egress_if: InterfaceId
    reason: str
    rac_id: str


@dataclass
class SimResult:
    config: SimConfig
    topology: Topology
    events: tuple[Event, ...]
    registries: dict[AsId, tuple[RegistryRow, ...]]
    pd_states: dict[tuple[AsId, AsId], algmod.PdState]
    returned: tuple[ReturnedPcb, ...]
    rac_errors: tuple[RacError, ...]
    drops: tuple[DropRecord, ...]
    group_members: dict[tuple[int, AsId, int], frozenset[InterfaceId]]

    def event_log_text(self) -> str:
        return "\n".join(e.render() for e in self.events) + "\n"

    def rac_ids(self) -> tuple[str, ...]:
        return tuple(r.rac_id for r in self.config.racs)


def snapshot_registry(result: SimResult, as_id: AsId) -> tuple[RegistryRow, ...]:
    if as_id not in result.registries:
        raise UnknownAs(f"AS {as_id} not in this run")
    return result.registries[as_id]


class _AsNode:
    def __init__(self, as_id: AsId, topology: Topology, signer: KeyedHashSigner,
                 config: SimConfig):
        shared = None if config.sharing is None else config.sharing.get(as_id)
        self.as_id = as_id
        self.view = TopologyView(topology, as_id)
        self.ingress = IngressGateway(as_id, topology, signer,
                                      purge_lookahead=config.purge_lookahead)
        self.egress = EgressGateway(
            as_id, topology, signer,
            registry_cap=config.registry_cap,
            validity_cap=config.validity_cap,
            shared_metrics=shared if shared is not None else frozenset(MetricId),
            purge_lookahead=config.purge_lookahead,
        )
        self.store = AlgorithmStore(max_program_bytes=1 << 20)
        self.racs: list[Rac] = []
        self.pd_inbox: list[Pcb] = []


def _pd_current_ext(state: algmod.PdState) -> AlgorithmExt:
    prog = algmod.pd_program(state.avoid_links)
    return AlgorithmExt(
        algmod.pd_algorithm_id(state.source_as, state.target_as, state.iteration),
        prog.code_hash(),
    )


class Simulation:
    def __init__(self, config: SimConfig):
        _validate_config(config)
        self.config = config
        self.topology = config.topology
        self.signer = KeyedHashSigner(b"irec-sim-signer")
        self.signer.register_all(self.topology.as_ids)
        self.mail = Mailbox()
        self.events: list[Event] = []
        self.returned: list[ReturnedPcb] = []
        self.rac_errors: list[RacError] = []
        self.drops: list[DropRecord] = []
        self._seq = 0

        # grouping profiles, one per threshold, with disjoint id ranges
        self.group_of: dict[tuple[int, AsId, InterfaceId], int] = {}
        self.group_members: dict[tuple[int, AsId, int], frozenset[InterfaceId]] = {}
        self._threshold_gids: dict[int, set[int]] = {}
        for k, d_km in enumerate(config.group_thresholds_km):
            offset = k * GROUP_ID_STRIDE
            gids = self._threshold_gids.setdefault(k, set())
            for as_id in self.topology.as_ids:
                for grp in cluster_interface_groups(self.topology, as_id, d_km):
                    gid = offset + grp.group_id
                    gids.add(gid)
                    self.group_members[(k, as_id, gid)] = grp.members
                    for if_id in grp.members:
                        self.group_of[(k, as_id, if_id)] = gid

        self.nodes: dict[AsId, _AsNode] = {}
        for as_id in self.topology.as_ids:
            node = _AsNode(as_id, self.topology, self.signer, config)
            for rc in config.racs:
                node.racs.append(Rac(self._scope_rac(rc), node.view))
            self.nodes[as_id] = node
        self.stores: Mapping[AsId, AlgorithmStore] = {
            a: n.store for a, n in self.nodes.items()
        }

        self.pd_states: dict[tuple[AsId, AsId], algmod.PdState] = {}
        if config.pd is not None:
            for src, tgt in config.pd.pairs:
                self.pd_states[(src, tgt)] = algmod.PdState(
                    source_as=src, target_as=tgt,
                    goal_k=config.pd.goal_k,
                    timeout_rounds=config.pd.timeout_rounds,
                )

    def _scope_rac(self, rc: RacConfig) -> RacConfig:
        """Bind a group-partitioned RAC to one grouping profile's id range."""
        if not rc.partition_by_group or rc.group_threshold_km is None:
            return rc
        thresholds = self.config.group_thresholds_km
        try:
            k = thresholds.index(rc.group_threshold_km)
        except ValueError:
            raise ConfigError(
                f"RAC {rc.rac_id}: threshold {rc.group_threshold_km} km "
                f"not in group_thresholds_km {thresholds}")
        return replace(rc, group_ids=frozenset(self._threshold_gids[k]))

    # -- event helpers --

    def _event(self, round_no: int, as_id: AsId, kind: str, digest: bytes | None,
               *detail: tuple[str, str]) -> None:
        self.events.append(Event(round_no, as_id, self._seq, kind, digest, tuple(detail)))
        self._seq += 1

    # -- phases --

    def _intake(self, node: _AsNode, r: int) -> None:
        for msg in self.mail.take(r, node.as_id):
            if msg.kind == "return":
                node.pd_inbox.append(msg.pcb)
                self.returned.append(ReturnedPcb(r, node.as_id, msg.pcb))
                continue
            decision = node.ingress.accept(msg.pcb, r)
            if decision.stored:
                self._event(r, node.as_id, EV_ACCEPT, msg.pcb.digest(),
                            ("from", str(msg.sender)),
                            ("dup", "1" if decision.duplicate else "0"))
            else:
                self._event(r, node.as_id, EV_REJECT, msg.pcb.digest(),
                            ("from", str(msg.sender)), ("reason", decision.reason))

    def _originate_one(self, node: _AsNode, r: int, egress_if: InterfaceId, *,
                       profile: str, target_as=None, algorithm=None, group_id=None) -> None:
        pcb, next_as = node.egress.originate(
            egress_if, r, self.config.validity,
            target_as=target_as, algorithm=algorithm, group_id=group_id,
        )
        self.mail.emit(r + 1, next_as, Message("pcb", node.as_id, pcb))
        self._event(r, node.as_id, EV_ORIGINATE, pcb.digest(),
                    ("eif", str(egress_if)), ("next", str(next_as)),
                    ("profile", profile))

    def _origination(self, node: _AsNode, r: int) -> None:
        period = self.config.origination_period or self.config.period
        if r % period == 0:
            eifs = node.view.egress_interfaces()
            if self.config.originate_plain:
                for eif in eifs:
                    self._originate_one(node, r, eif, profile="plain")
            for k in range(len(self.config.group_thresholds_km)):
                for eif in eifs:
                    gid = self.group_of[(k, node.as_id, eif)]
                    self._originate_one(node, r, eif, profile=f"group{k}", group_id=gid)
        for pull in self.config.pulls:
            if pull.origin_as != node.as_id or r != pull.start_round:
                continue
            raw = serialize_program(pull.program)
            alg_id = pull.effective_algorithm_id()
            node.store.publish(alg_id, raw)
            ext = AlgorithmExt(alg_id, pull.program.code_hash())
            for eif in node.view.egress_interfaces():
                self._originate_one(node, r, eif, profile="pull",
                                    target_as=pull.target_as, algorithm=ext)

    def _rac_phase(self, node: _AsNode, r: int) -> None:
        for rac in sorted(node.racs, key=lambda x: x.config.rac_id):
            result = rac.tick(r, node.ingress.db, self.stores)
            for key, err in result.errors:
                self.rac_errors.append(RacError(
                    r, node.as_id, rac.config.rac_id, str(key.sort_key()), err))
            for sub in result.submissions:
                fresh = node.egress.submit(sub, r)
                self._event(r, node.as_id, EV_SUBMIT, sub.pcb.digest(),
                            ("rac", sub.rac_id),
                            ("eifs", ",".join(map(str, sorted(sub.egress_ifs)))),
                            ("new", ",".join(map(str, sorted(fresh)))))
            if result.registrations:
                outcome = node.egress.register_paths(
                    rac.config.rac_id, result.registrations, result.tags)
                for digest in outcome.new_digests:
                    self._event(r, node.as_id, EV_REGISTER, digest,
                                ("rac", rac.config.rac_id))

    def _pd_phase(self, node: _AsNode, r: int) -> None:
        pd = self.config.pd
        if pd is None:
            node.pd_inbox.clear()
            return
        my_pairs = sorted(k for k in self.pd_states if k[0] == node.as_id)
        for pair in my_pairs:
            state = self.pd_states[pair]
            directive = None
            if not state.seeded:
                if r >= pd.start_round:
                    seed = self._pd_seed_path(node, pd.seed_rac, state.target_as)
                    if seed is not None:
                        links = pcbmod.path_links(seed, node.as_id)
                        state, directive = algmod.pd_seed(state, seed, links, r)
            else:
                current = _pd_current_ext(state)
                returns = [p for p in node.pd_inbox
                           if p.origin_as == node.as_id
                           and p.target_as == state.target_as
                           and p.algorithm == current]
                state, directive = algmod.pd_step(state, returns, r)
            self.pd_states[pair] = state
            if directive is not None:
                node.store.publish(directive.algorithm.algorithm_id, directive.program_bytes)
                for eif in node.view.egress_interfaces():
                    self._originate_one(node, r, eif, profile="pd",
                                        target_as=directive.target_as,
                                        algorithm=directive.algorithm)
        node.pd_inbox.clear()

    def _pd_seed_path(self, node: _AsNode, seed_rac: str, target: AsId) -> Pcb | None:
        rows = [row for row in node.egress.registry.rows()
                if row.rac_id == seed_rac and row.origin_as == target]
        if not rows:
            return None
        best = min(rows, key=lambda row: (
            row.delay_ms if row.delay_ms is not None else float("inf"), row.digest))
        return best.pcb

    def _propagation(self, node: _AsNode, r: int) -> None:
        outcome = node.egress.propagate(r)
        for em in outcome.emissions:
            self.mail.emit(r + 1, em.next_as, Message("pcb", node.as_id, em.pcb))
            self._event(r, node.as_id, EV_PROPAGATE, em.received_digest,
                        ("eif", str(em.egress_if)), ("next", str(em.next_as)),
                        ("rac", em.rac_id), ("new", em.pcb.digest().hex()))
        for ret in outcome.returns:
            self.mail.emit(r + 1, ret.origin_as, Message("return", node.as_id, ret.pcb))
            self._event(r, node.as_id, EV_RETURN, ret.digest,
                        ("to", str(ret.origin_as)), ("rac", ret.rac_id))
        for drop in outcome.drops:
            self.drops.append(DropRecord(r, node.as_id, drop.digest, drop.egress_if,
                                         drop.reason, drop.rac_id))

    def _purge(self, node: _AsNode, r: int) -> None:
        removed = node.ingress.purge(r)
        node.egress.purge(r)
        if removed:
            self._event(r, node.as_id, EV_PURGE, None, ("count", str(removed)))

    # -- the run --

    def run(self) -> SimResult:
        if not self.topology.is_connected():
            log.warning("topology is not connected; some pairs will be unreachable")
        for r in range(self.config.rounds):
            for as_id in sorted(self.nodes):
                node = self.nodes[as_id]
                self._intake(node, r)
                self._origination(node, r)
                self._rac_phase(node, r)
                self._pd_phase(node, r)
                self._propagation(node, r)
                self._purge(node, r)
        registries = {
            as_id: tuple(self.nodes[as_id].egress.registry.rows())
            for as_id in sorted(self.nodes)
        }
        return SimResult(
            config=self.config,
            topology=self.topology,
            events=tuple(self.events),
            registries=registries,
            pd_states=dict(self.pd_states),
            returned=tuple(self.returned),
            rac_errors=tuple(self.rac_errors),
            drops=tuple(self.drops),
            group_members=dict(self.group_members),
        )

    # -- out-of-band queries (bootstrapping) --

    def registered_pcbs(self, as_id: AsId) -> list[Pcb]:
        return self.nodes[as_id].egress.registry.all_pcbs()


def _validate_config(config: SimConfig) -> None:
    if config.rounds < 1:
        raise ConfigError("rounds must be >= 1")
    if config.period < 1:
        raise ConfigError("period must be >= 1")
    if any(d <= 0 for d in config.group_thresholds_km):
        raise ConfigError("group thresholds must be positive")
    if len(config.group_thresholds_km) * GROUP_ID_STRIDE >= 1 << 16:
        raise ConfigError("too many grouping profiles")
    if config.validity > config.validity_cap:
        raise ConfigError("validity exceeds the validity cap")
    seen = set()
    for rc in config.racs:
        if rc.rac_id in seen:
            raise ConfigError(f"duplicate RAC id {rc.rac_id}")
        seen.add(rc.rac_id)
        if rc.partition_by_group and rc.group_threshold_km is None \
                and len(config.group_thresholds_km) > 1:
            raise ConfigError(
                f"RAC {rc.rac_id}: multiple grouping profiles need group_threshold_km")
    for pull in config.pulls:
        for a in (pull.origin_as, pull.target_as):
            if not config.topology.has_as(a):
                raise ConfigError(f"pull endpoint AS {a} not in topology")
        if pull.origin_as == pull.target_as:
            raise ConfigError("pull origin and target must differ")
    if config.pd is not None:
        if not any(r.rac_id == config.pd.seed_rac for r in config.racs):
            raise ConfigError(f"PD seed RAC {config.pd.seed_rac!r} is not configured")
        if not any(r.kind == "on_demand" for r in config.racs):
            raise ConfigError("PD needs an on-demand RAC in every AS")
        for src, tgt in config.pd.pairs:
            if src == tgt or not (config.topology.has_as(src) and config.topology.has_as(tgt)):
                raise ConfigError(f"bad PD pair ({src}, {tgt})")


def run(config: SimConfig) -> SimResult:
    """Execute one deterministic simulation."""
    return Simulation(config).run()
