"""Declarative routing programs: the shippable, hash-addressed algorithm form.

A program is an ordered filter list, a nonempty lexicographic objective list,
and a selection count. Programs serialize to a canonical binary form whose
SHA-256 digest is the identity beacons refer to; execution is deterministic
and strictly budgeted in steps and live values.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

from . import pcb as pcbmod
from .errors import (
    MemoryBudgetExceeded,
    MissingMetric,
    ParseError,
    StepBudgetExceeded,
    TooLarge,
)
from .pcb import AsId, InterfaceId, Pcb

PROGRAM_MAGIC = b"IRECALG1"

Link = tuple[AsId, AsId]

# Filter wire tags
_TAG_AVOID_LINKS = 1
_TAG_AVOID_ASES = 2
_TAG_MAX_HOPS = 3
_TAG_MAX_DELAY_MS = 4
_TAG_MIN_BANDWIDTH = 5

# Objective wire tags
OBJ_MIN_SUM_DELAY = 1
OBJ_MIN_HOPS = 2
OBJ_MAX_MIN_BANDWIDTH = 3
OBJ_MAX_FRESH_LINKS = 4

_OBJECTIVE_TAGS = (OBJ_MIN_SUM_DELAY, OBJ_MIN_HOPS, OBJ_MAX_MIN_BANDWIDTH,
                   OBJ_MAX_FRESH_LINKS)
_OBJECTIVE_NAMES = {
    "min_sum_delay": OBJ_MIN_SUM_DELAY,
    "min_hops": OBJ_MIN_HOPS,
    "max_min_bandwidth": OBJ_MAX_MIN_BANDWIDTH,
    "max_fresh_links": OBJ_MAX_FRESH_LINKS,
}


def canon_link(a: AsId, b: AsId) -> Link:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class AvoidLinks:
    links: frozenset[Link]


@dataclass(frozen=True)
class AvoidAses:
    ases: frozenset[AsId]


@dataclass(frozen=True)
class MaxHops:
    limit: int


@dataclass(frozen=True)
class MaxDelayMs:
    limit: float


@dataclass(frozen=True)
class MinBandwidthMbps:
    limit: float


Filter = AvoidLinks | AvoidAses | MaxHops | MaxDelayMs | MinBandwidthMbps


@dataclass(frozen=True)
class RoutingProgram:
    filters: tuple[Filter, ...]
    objectives: tuple[int, ...]
    select_k: int

    def __post_init__(self):
        if not self.objectives:
            raise ValueError("objectives must be nonempty")
        for tag in self.objectives:
            if tag not in _OBJECTIVE_TAGS:
                raise ValueError(f"unknown objective tag {tag}")
        if not (0 < self.select_k < 1 << 16):
            raise ValueError("select_k must be a positive u16")

    def code_hash(self) -> bytes:
        return hashlib.sha256(serialize_program(self)).digest()


def program(*, filters: tuple[Filter, ...] = (), objectives, select_k: int = 1) -> RoutingProgram:
    tags = tuple(
        _OBJECTIVE_NAMES[o] if isinstance(o, str) else int(o) for o in objectives
    )
    return RoutingProgram(tuple(filters), tags, select_k)


# --- serialization -----------------------------------------------------------

def serialize_program(prog: RoutingProgram) -> bytes:
    parts = [PROGRAM_MAGIC, struct.pack(">B", len(prog.filters))]
    for f in prog.filters:
        if isinstance(f, AvoidLinks):
            parts.append(struct.pack(">BH", _TAG_AVOID_LINKS, len(f.links)))
            for a, b in sorted(f.links):
                parts.append(struct.pack(">QQ", a, b))
        elif isinstance(f, AvoidAses):
            parts.append(struct.pack(">BH", _TAG_AVOID_ASES, len(f.ases)))
            for a in sorted(f.ases):
                parts.append(struct.pack(">Q", a))
        elif isinstance(f, MaxHops):
            parts.append(struct.pack(">BH", _TAG_MAX_HOPS, f.limit))
        elif isinstance(f, MaxDelayMs):
            parts.append(struct.pack(">Bd", _TAG_MAX_DELAY_MS, f.limit))
        elif isinstance(f, MinBandwidthMbps):
            parts.append(struct.pack(">Bd", _TAG_MIN_BANDWIDTH, f.limit))
        else:
            raise TypeError(f"unknown filter {f!r}")
    parts.append(struct.pack(">B", len(prog.objectives)))
    for tag in prog.objectives:
        parts.append(struct.pack(">B", tag))
    parts.append(struct.pack(">H", prog.select_k))
    return b"".join(parts)


def parse_program(data: bytes, max_program_bytes: int | None = None) -> RoutingProgram:
    """Strict parse of the canonical serialization; unknown tags rejected."""
    if max_program_bytes is not None and len(data) > max_program_bytes:
        raise TooLarge(f"program is {len(data)} bytes, cap {max_program_bytes}")
    r = pcbmod._Reader(data)
    try:
        if r.take(len(PROGRAM_MAGIC)) != PROGRAM_MAGIC:
            raise ParseError("bad program magic")
        (n_filters,) = r.unpack(">B")
        filters: list[Filter] = []
        for _ in range(n_filters):
            (tag,) = r.unpack(">B")
            if tag == _TAG_AVOID_LINKS:
                (n,) = r.unpack(">H")
                links = []
                for _ in range(n):
                    a, b = r.unpack(">QQ")
                    if a > b:
                        raise ParseError("avoid-links pairs must be ordered")
                    links.append((a, b))
                if links != sorted(set(links)):
                    raise ParseError("avoid-links must be sorted and unique")
                filters.append(AvoidLinks(frozenset(links)))
            elif tag == _TAG_AVOID_ASES:
                (n,) = r.unpack(">H")
                ases = [r.unpack(">Q")[0] for _ in range(n)]
                if ases != sorted(set(ases)):
                    raise ParseError("avoid-ases must be sorted and unique")
                filters.append(AvoidAses(frozenset(ases)))
            elif tag == _TAG_MAX_HOPS:
                filters.append(MaxHops(r.unpack(">H")[0]))
            elif tag == _TAG_MAX_DELAY_MS:
                filters.append(MaxDelayMs(r.unpack(">d")[0]))
            elif tag == _TAG_MIN_BANDWIDTH:
                filters.append(MinBandwidthMbps(r.unpack(">d")[0]))
            else:
                raise ParseError(f"unknown filter tag {tag}")
        (n_obj,) = r.unpack(">B")
        if n_obj == 0:
            raise ParseError("objectives must be nonempty")
        objectives = []
        for _ in range(n_obj):
            (tag,) = r.unpack(">B")
            if tag not in _OBJECTIVE_TAGS:
                raise ParseError(f"unknown objective tag {tag}")
            objectives.append(tag)
        (select_k,) = r.unpack(">H")
        if select_k == 0:
            raise ParseError("select_k must be positive")
        if not r.done():
            raise ParseError("trailing bytes in program")
    except pcbmod.DecodeError as exc:
        raise ParseError(str(exc))
    return RoutingProgram(tuple(filters), tuple(objectives), select_k)


# --- execution ---------------------------------------------------------------

class _Budget:
    """Elementary-operation and live-value accounting for one execution."""

    def __init__(self, max_steps: int, max_memory_items: int):
        self.max_steps = max_steps
        self.max_memory_items = max_memory_items
        self.steps = 0
        self.items = 0

    def step(self, n: int = 1):
        self.steps += n
        if self.steps > self.max_steps:
            raise StepBudgetExceeded(f"exceeded {self.max_steps} steps")

    def alloc(self, n: int = 1):
        self.items += n
        if self.items > self.max_memory_items:
            raise MemoryBudgetExceeded(f"exceeded {self.max_memory_items} live items")


@dataclass(frozen=True)
class CandidateMetrics:
    """Received-path attributes of one candidate, computed once."""

    pcb: Pcb
    digest: bytes
    hops: int
    delay_ms: float
    min_bandwidth: float | None
    links: frozenset[Link]
    ases: frozenset[AsId]
    arrival_if: InterfaceId


def candidate_metrics(pcb: Pcb, view) -> CandidateMetrics:
    """view is a TopologyView scoped to the executing AS."""
    delay = pcbmod.accumulated_delay(pcb)
    try:
        min_bw = pcbmod.min_bandwidth(pcb)
    except MissingMetric:
        min_bw = None
    links = pcbmod.path_links(pcb, view.as_id)
    return CandidateMetrics(
        pcb=pcb, digest=pcb.digest(), hops=pcb.hop_count(), delay_ms=delay,
        min_bandwidth=min_bw, links=links, ases=frozenset(pcb.as_ids()),
        arrival_if=view.arrival_interface(pcb),
    )


@dataclass(frozen=True)
class _View:
    """Path attributes a filter or objective sees: received or extended.

    Extension adds the local crossing delay (the egress link's own delay is
    accounted by the next AS as part of the received path), and folds the
    egress link into hop count, bottleneck bandwidth, link set, and AS set.
    """

    hops: int
    delay_ms: float
    min_bandwidth: float | None
    links: frozenset[Link]
    ases: frozenset[AsId]


def _apply_filters(prog: RoutingProgram, v: _View, budget: _Budget) -> bool:
    for f in prog.filters:
        budget.step()
        if isinstance(f, AvoidLinks):
            if v.links & f.links:
                return False
        elif isinstance(f, AvoidAses):
            if v.ases & f.ases:
                return False
        elif isinstance(f, MaxHops):
            if v.hops > f.limit:
                return False
        elif isinstance(f, MaxDelayMs):
            if v.delay_ms > f.limit:
                return False
        elif isinstance(f, MinBandwidthMbps):
            if v.min_bandwidth is None or v.min_bandwidth < f.limit:
                return False
    return True


def _objective_key(prog: RoutingProgram, v: _View, fresh_context: frozenset[Link],
                   budget: _Budget) -> tuple:
    key = []
    for tag in prog.objectives:
        budget.step()
        if tag == OBJ_MIN_SUM_DELAY:
            key.append(v.delay_ms)
        elif tag == OBJ_MIN_HOPS:
            key.append(v.hops)
        elif tag == OBJ_MAX_MIN_BANDWIDTH:
            key.append(-(v.min_bandwidth if v.min_bandwidth is not None else 0.0))
        elif tag == OBJ_MAX_FRESH_LINKS:
            key.append(-len(v.links - fresh_context))
    return tuple(key)


def _received_view(m: CandidateMetrics) -> _View:
    return _View(m.hops, m.delay_ms, m.min_bandwidth, m.links, m.ases)


def _extended_view(m: CandidateMetrics, view, egress_if: InterfaceId,
                   peer_as: AsId) -> _View:
    extra = view.intra_delay_ms(m.arrival_if, egress_if)
    link_bw = view.link_bandwidth(egress_if)
    min_bw = m.min_bandwidth if m.min_bandwidth is None else min(m.min_bandwidth, link_bw)
    return _View(
        hops=m.hops + 1,
        delay_ms=m.delay_ms + extra,
        min_bandwidth=min_bw,
        links=m.links | {canon_link(view.as_id, peer_as)},
        ases=m.ases | {view.as_id, peer_as},
    )


@dataclass(frozen=True)
class ExecutionResult:
    """Ranked selections: per egress for propagation, received for registration."""

    per_egress: dict[InterfaceId, list[tuple[Pcb, tuple]]]
    received: list[tuple[Pcb, tuple]]
    steps_used: int = 0


def execute_program(
    prog: RoutingProgram,
    candidates: list[Pcb],
    view,
    limits,
    *,
    fresh_context: frozenset[Link] = frozenset(),
    terminal: bool = False,
) -> ExecutionResult:
    """Run a routing program over a candidate set.

    Filters and ranking evaluate on the candidate extended by the local hop to
    each egress interface; candidates whose extension would revisit an on-path
    AS are not eligible at that egress. The received-path ranking drives
    registration, and is the whole result in terminal mode (the candidates
    ended here, e.g. at a pull target).
    """
    budget = _Budget(limits.max_steps, limits.max_memory_items)
    metrics: list[CandidateMetrics] = []
    for pcb in sorted(candidates, key=lambda p: p.digest()):
        budget.step()
        budget.alloc()
        try:
            metrics.append(candidate_metrics(pcb, view))
        except MissingMetric:
            continue

    received: list[tuple[Pcb, tuple]] = []
    scored = []
    for m in metrics:
        v = _received_view(m)
        if not _apply_filters(prog, v, budget):
            continue
        key = _objective_key(prog, v, fresh_context, budget) + (m.delay_ms, m.digest)
        scored.append((key, m.pcb))
    budget.step(len(scored))
    for key, pcb in sorted(scored)[: prog.select_k]:
        budget.alloc()
        received.append((pcb, key))

    per_egress: dict[InterfaceId, list[tuple[Pcb, tuple]]] = {}
    if not terminal:
        for eif in view.egress_interfaces():
            peer_as = view.peer_as(eif)
            scored = []
            for m in metrics:
                budget.step()
                if peer_as in m.ases:
                    continue
                v = _extended_view(m, view, eif, peer_as)
                if not _apply_filters(prog, v, budget):
                    continue
                key = _objective_key(prog, v, fresh_context, budget) + (v.delay_ms, m.digest)
                scored.append((key, m.pcb))
            budget.step(len(scored))
            chosen = []
            for key, pcb in sorted(scored)[: prog.select_k]:
                budget.alloc()
                chosen.append((pcb, key))
            if chosen:
                per_egress[eif] = chosen
    return ExecutionResult(per_egress, received, budget.steps)
