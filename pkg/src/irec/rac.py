"""Routing-algorithm containers: partitioned intake, execution, isolation.

A RAC pulls candidate beacons from the ingress gateway, splits them into
partitions (per origin AS, and per interface group / target AS / shipped
algorithm when enabled), runs its algorithm per partition under strict
budgets, and hands ranked selections to the egress gateway. A failing
partition is logged and skipped; it can never touch another partition's
output.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Mapping

from .algorithms import BUILTIN_ALGORITHMS, BUILTIN_TAGS, AlgResult
from .errors import (
    ConfigError,
    HashMismatch,
    MemoryBudgetExceeded,
    MissingMetric,
    NotFound,
    ParseError,
    StepBudgetExceeded,
    TooLarge,
    UnknownInterface,
)
from .gateways import IngressDb, Submission
from .pcb import AlgorithmExt, AsId, InterfaceId, Pcb, path_links
from .programs import (
    OBJ_MAX_FRESH_LINKS,
    RoutingProgram,
    execute_program,
    parse_program,
)
from .topology import Topology

STATIC = "static"
ON_DEMAND = "on_demand"

_PARTITION_ERRORS = (
    StepBudgetExceeded, MemoryBudgetExceeded, HashMismatch, NotFound,
    TooLarge, ParseError, MissingMetric, UnknownInterface,
)


@dataclass(frozen=True)
class ExecutionLimits:
    max_steps: int = 1_000_000
    max_memory_items: int = 100_000
    max_program_bytes: int = 4096

    def __post_init__(self):
        if min(self.max_steps, self.max_memory_items, self.max_program_bytes) <= 0:
            raise ValueError("execution limits must be positive")


@dataclass(frozen=True)
class RacConfig:
    rac_id: str
    kind: str = STATIC
    static_algorithm: str | None = None
    partition_by_group: bool = False
    partition_by_target: bool = False
    max_selected: int = 20
    period: int = 1
    limits: ExecutionLimits = field(default_factory=ExecutionLimits)
    # Bind group partitioning to one grouping profile when a run has several.
    group_threshold_km: float | None = None
    group_ids: frozenset[int] | None = None

    def __post_init__(self):
        if self.kind not in (STATIC, ON_DEMAND):
            raise ConfigError(f"unknown RAC kind {self.kind!r}")
        if (self.kind == STATIC) != (self.static_algorithm is not None):
            raise ConfigError("static RACs need static_algorithm; on-demand must not set it")
        if self.kind == STATIC and self.static_algorithm not in BUILTIN_ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.static_algorithm!r}")
        if self.max_selected < 1 or self.period < 1:
            raise ConfigError("max_selected and period must be >= 1")
        if self.static_algorithm == "DOB" and not self.partition_by_group:
            raise ConfigError("DOB requires partition_by_group")


class TopologyView:
    """Read-only topology access scoped to one AS."""

    def __init__(self, topology: Topology, as_id: AsId):
        self._topology = topology
        self.as_id = as_id

    def egress_interfaces(self) -> tuple[InterfaceId, ...]:
        return tuple(sorted(i.if_id for i in self._topology.interfaces(self.as_id)))

    def intra_delay_ms(self, if_a: InterfaceId, if_b: InterfaceId) -> float:
        return self._topology.intra_delay_ms(self.as_id, if_a, if_b)

    def peer_of(self, egress_if: InterfaceId) -> tuple[AsId, InterfaceId]:
        return self._topology.interface(self.as_id, egress_if).peer

    def peer_as(self, egress_if: InterfaceId) -> AsId:
        return self.peer_of(egress_if)[0]

    def link_bandwidth(self, egress_if: InterfaceId) -> float:
        return self._topology.interface(self.as_id, egress_if).link_bandwidth_mbps

    def link_delay_ms(self, egress_if: InterfaceId) -> float:
        return self._topology.link_delay_ms(self.as_id, egress_if)

    def arrival_interface(self, pcb: Pcb) -> InterfaceId:
        """The local interface a stored beacon arrived on."""
        last = pcb.hops[-1]
        peer = self._topology.interface(last.as_id, last.egress_if).peer
        if peer[0] != self.as_id:
            raise UnknownInterface(
                f"beacon {pcb.digest().hex()[:8]} did not arrive at AS {self.as_id}")
        return peer[1]


class AlgorithmStore:
    """An AS's published routing programs, fetchable by algorithm id."""

    def __init__(self, max_program_bytes: int = 4096):
        self.max_program_bytes = max_program_bytes
        self._programs: dict[bytes, bytes] = {}
        self.access_count = 0

    def publish(self, algorithm_id: bytes, program_bytes: bytes) -> None:
        if len(program_bytes) > self.max_program_bytes:
            raise TooLarge(f"program exceeds {self.max_program_bytes} bytes")
        self._programs[algorithm_id] = program_bytes

    def fetch(self, algorithm_id: bytes) -> bytes:
        self.access_count += 1
        try:
            return self._programs[algorithm_id]
        except KeyError:
            raise NotFound(f"no program {algorithm_id!r} published")


def fetch_algorithm(
    origin_as: AsId,
    algorithm_id: bytes,
    expected_hash: bytes,
    stores: Mapping[AsId, AlgorithmStore],
    cache: dict[tuple[AsId, bytes, bytes], RoutingProgram],
    limits: ExecutionLimits,
) -> RoutingProgram:
    """Fetch, hash-verify, parse and cache a shipped routing program."""
    key = (origin_as, algorithm_id, expected_hash)
    hit = cache.get(key)
    if hit is not None:
        return hit
    store = stores.get(origin_as)
    if store is None:
        raise NotFound(f"AS {origin_as} publishes no programs")
    raw = store.fetch(algorithm_id)
    if len(raw) > limits.max_program_bytes:
        raise TooLarge(f"program is {len(raw)} bytes, cap {limits.max_program_bytes}")
    if hashlib.sha256(raw).digest() != expected_hash:
        raise HashMismatch(f"program {algorithm_id!r} from AS {origin_as} fails hash pin")
    prog = parse_program(raw, limits.max_program_bytes)
    cache[key] = prog
    return prog


# --- partitioning --------------------------------------------------------------

_ABSENT = ("-",)  # sorts before any value tuple


@dataclass(frozen=True)
class PartitionKey:
    origin_as: AsId
    group_id: int | None | tuple = _ABSENT
    target_as: AsId | None | tuple = _ABSENT
    algorithm: AlgorithmExt | None = None

    def sort_key(self) -> tuple:
        def norm(v):
            if v is _ABSENT:
                return (-2,)
            if v is None:
                return (-1,)
            return (0, v)

        alg = (b"", b"") if self.algorithm is None else (
            self.algorithm.algorithm_id, self.algorithm.code_hash)
        return (self.origin_as, norm(self.group_id), norm(self.target_as), alg)


def partition_candidates(
    candidates: list[Pcb], config: RacConfig, local_as: AsId | None = None,
) -> list[tuple[PartitionKey, list[Pcb]]]:
    """Group candidates by origin plus the enabled partition dimensions.

    On-demand RACs additionally partition by the shipped algorithm, and only
    see beacons that carry one; static RACs only see beacons that do not.
    """
    buckets: dict[PartitionKey, list[Pcb]] = {}
    for pcb in candidates:
        if (pcb.algorithm is not None) != (config.kind == ON_DEMAND):
            continue
        if config.partition_by_group and config.group_ids is not None:
            if pcb.group_id not in config.group_ids:
                continue
        key = PartitionKey(
            origin_as=pcb.origin_as,
            group_id=pcb.group_id if config.partition_by_group else _ABSENT,
            target_as=pcb.target_as if config.partition_by_target else _ABSENT,
            algorithm=pcb.algorithm if config.kind == ON_DEMAND else None,
        )
        buckets.setdefault(key, []).append(pcb)
    return sorted(buckets.items(), key=lambda kv: kv[0].sort_key())


# --- the container ---------------------------------------------------------------

@dataclass(frozen=True)
class RacTickResult:
    submissions: tuple[Submission, ...]
    registrations: tuple[tuple[Pcb, tuple], ...]
    tags: frozenset[str]
    errors: tuple[tuple[PartitionKey, str], ...]


class Rac:
    """One container instance; owns its cross-round algorithm state."""

    def __init__(self, config: RacConfig, view: TopologyView):
        self.config = config
        self.view = view
        self._alg_state: dict[PartitionKey, dict] = {}
        self._fresh_links: dict[tuple[PartitionKey, InterfaceId], frozenset] = {}
        self._cache: dict[tuple[AsId, bytes, bytes], RoutingProgram] = {}

    def due(self, now: int) -> bool:
        return now % self.config.period == 0

    def tick(
        self,
        now: int,
        ingress_db: IngressDb,
        stores: Mapping[AsId, AlgorithmStore],
    ) -> RacTickResult:
        cfg = self.config
        if not self.due(now):
            return RacTickResult((), (), frozenset(), ())
        candidates = ingress_db.all_unexpired(now)
        partitions = partition_candidates(candidates, cfg, self.view.as_id)
        submissions: list[Submission] = []
        registrations: list[tuple[Pcb, tuple]] = []
        errors: list[tuple[PartitionKey, str]] = []
        tags = self._tags()
        for key, phi in partitions:
            try:
                per_egress, registration = self._run_partition(key, phi, now, stores)
            except _PARTITION_ERRORS as exc:
                errors.append((key, f"{type(exc).__name__}: {exc}"))
                continue
            by_pcb: dict[bytes, tuple[Pcb, set[InterfaceId]]] = {}
            for eif, entries in sorted(per_egress.items()):
                for pcb, _ in entries[: cfg.max_selected]:
                    by_pcb.setdefault(pcb.digest(), (pcb, set()))[1].add(eif)
            for digest in sorted(by_pcb):
                pcb, eifs = by_pcb[digest]
                submissions.append(Submission(cfg.rac_id, pcb, frozenset(eifs)))
            registrations.extend(registration[: cfg.max_selected])
        return RacTickResult(tuple(submissions), tuple(registrations), tags, tuple(errors))

    def _tags(self) -> frozenset[str]:
        if self.config.kind == STATIC:
            return BUILTIN_TAGS[self.config.static_algorithm]
        return frozenset({"on_demand"})

    def _run_partition(self, key: PartitionKey, phi: list[Pcb], now: int, stores):
        cfg = self.config
        if cfg.kind == STATIC:
            fn = BUILTIN_ALGORITHMS[cfg.static_algorithm]
            state = self._alg_state.setdefault(key, {})
            result: AlgResult = fn(phi, self.view, max_selected=cfg.max_selected, state=state)
            return result.per_egress, result.registration

        prog = fetch_algorithm(
            key.origin_as, key.algorithm.algorithm_id, key.algorithm.code_hash,
            stores, self._cache, cfg.limits,
        )
        # A partition whose beacons target this AS ends here: evaluate the
        # received paths and let the egress gateway send the winners back.
        terminal = key.target_as == self.view.as_id or all(
            p.target_as == self.view.as_id for p in phi
        )
        uses_fresh = OBJ_MAX_FRESH_LINKS in prog.objectives
        context = frozenset()
        if uses_fresh:
            context = frozenset().union(
                *(self._fresh_links.get((key, e), frozenset())
                  for e in self.view.egress_interfaces()))
        execution = execute_program(
            prog, phi, self.view, cfg.limits,
            fresh_context=context, terminal=terminal,
        )
        if terminal:
            first_eif = self.view.egress_interfaces()[0]
            per_egress = {first_eif: execution.received} if execution.received else {}
            return per_egress, execution.received
        if uses_fresh:
            for eif, entries in execution.per_egress.items():
                links = frozenset().union(
                    *(path_links(p, self.view.as_id) for p, _ in entries))
                prev = self._fresh_links.get((key, eif), frozenset())
                self._fresh_links[(key, eif)] = prev | links
        return execution.per_egress, execution.received
