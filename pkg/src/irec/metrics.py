"""Evaluation metrics over a completed simulation.

Three families: minimum PoP-pair propagation delay relative to a baseline
algorithm, tolerable link failures (min edge cut of the union of discovered
paths, at inter-AS link granularity), and propagated-beacon counts. Metrics
consume a flat ResultData view extracted from a run (or reloaded from disk),
so they are pure and trivially parallel across pairs.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

from .errors import TooLarge
from .pcb import AsId
from .programs import Link, canon_link
from .sim import EV_PROPAGATE, SimResult
from .topology import GeoPoint, Topology, haversine_km, propagation_delay_ms

POP_DEDUP_KM = 1.0

UNREACHABLE = float("inf")


# --- the metrics input -----------------------------------------------------------

@dataclass(frozen=True)
class PathRecord:
    """One registered path reduced to what the metrics need."""

    rac_id: str
    dest_as: AsId
    origin_as: AsId
    group_id: int
    digest_hex: str
    hops: int
    delay_ms: float | None
    start: GeoPoint  # where the beacon left its origin AS
    end: GeoPoint    # where it arrived at the registering AS
    as_path: tuple[AsId, ...]  # origin ... last extender; dest_as completes it

    def links(self) -> frozenset[Link]:
        chain = self.as_path + (self.dest_as,)
        return frozenset(canon_link(a, b) for a, b in zip(chain, chain[1:]))


@dataclass(frozen=True)
class ResultData:
    topology: Topology
    rounds: int
    rac_ids: tuple[str, ...]
    paths: tuple[PathRecord, ...]
    propagate_counts: dict[tuple[str, AsId, int, int], int]  # (alg, as, eif, round)
    pd_accepted: dict[tuple[AsId, AsId], tuple[frozenset[Link], ...]]


def result_data(result: SimResult) -> ResultData:
    """Flatten a live SimResult into the metrics input."""
    topo = result.topology
    paths = []
    for dest_as in sorted(result.registries):
        for row in result.registries[dest_as]:
            pcb = row.pcb
            start = topo.interface(pcb.origin_as, pcb.origin_egress_if).location
            last = pcb.hops[-1]
            end = topo.interface(*topo.interface(last.as_id, last.egress_if).peer).location
            paths.append(PathRecord(
                rac_id=row.rac_id, dest_as=dest_as, origin_as=row.origin_as,
                group_id=row.group_id, digest_hex=row.digest.hex(),
                hops=row.hops, delay_ms=row.delay_ms,
                start=start, end=end, as_path=pcb.as_ids(),
            ))
    counts: dict[tuple[str, AsId, int, int], int] = {}
    for ev in result.events:
        if ev.kind != EV_PROPAGATE:
            continue
        key = (ev.get("rac"), ev.as_id, int(ev.get("eif")), ev.round_no)
        counts[key] = counts.get(key, 0) + 1
    pd_accepted = {
        pair: tuple(state.accepted_links)
        for pair, state in sorted(result.pd_states.items())
    }
    return ResultData(
        topology=topo,
        rounds=result.config.rounds,
        rac_ids=result.rac_ids(),
        paths=tuple(paths),
        propagate_counts=counts,
        pd_accepted=pd_accepted,
    )


@dataclass(frozen=True)
class Pop:
    """A geolocation where an AS terminates at least one inter-domain link."""

    as_id: AsId
    location: GeoPoint


def enumerate_pops(topology: Topology) -> list[Pop]:
    """One PoP per (AS, location), deduplicating locations within 1 km."""
    pops: list[Pop] = []
    for as_id in topology.as_ids:
        kept: list[GeoPoint] = []
        for iface in sorted(topology.interfaces(as_id), key=lambda i: i.if_id):
            if any(haversine_km(iface.location, loc) <= POP_DEDUP_KM for loc in kept):
                continue
            kept.append(iface.location)
            pops.append(Pop(as_id, iface.location))
    return pops


# --- PoP-pair delay -----------------------------------------------------------

class PathIndex:
    """One algorithm's registered paths, indexed by unordered AS pair."""

    def __init__(self, data: ResultData, alg: str):
        self.alg = alg
        self._paths: dict[tuple[AsId, AsId], list[PathRecord]] = {}
        for rec in data.paths:
            if rec.rac_id != alg or rec.delay_ms is None:
                continue
            pair = (min(rec.origin_as, rec.dest_as), max(rec.origin_as, rec.dest_as))
            self._paths.setdefault(pair, []).append(rec)

    def min_delay(self, pop_a: Pop, pop_b: Pop) -> float:
        """Minimum corrected delay between two PoPs, inf when unreachable."""
        pair = (min(pop_a.as_id, pop_b.as_id), max(pop_a.as_id, pop_b.as_id))
        best = UNREACHABLE
        for rec in self._paths.get(pair, ()):
            origin_pop, dest_pop = (
                (pop_a, pop_b) if rec.origin_as == pop_a.as_id else (pop_b, pop_a))
            total = (
                rec.delay_ms
                + propagation_delay_ms(origin_pop.location, rec.start)
                + propagation_delay_ms(rec.end, dest_pop.location)
            )
            best = min(best, total)
        return best


def min_pop_delay(data: ResultData, alg: str, pop_a: Pop, pop_b: Pop,
                  index: PathIndex | None = None) -> float:
    """Delay of alg's best registered path, corrected to the two PoPs.

    When a path does not start or end at the requested PoP, the intra-domain
    great-circle delay from/to that PoP is added at the respective end.
    Returns inf when the algorithm found no path between the two ASes.
    """
    if pop_a.as_id == pop_b.as_id:
        raise ValueError("PoPs must belong to different ASes")
    if index is None or index.alg != alg:
        index = PathIndex(data, alg)
    return index.min_delay(pop_a, pop_b)


@dataclass(frozen=True)
class DelayRatioRow:
    pop_a: Pop
    pop_b: Pop
    alg: str
    ratio: float  # inf when alg found nothing but the baseline did


def delay_ratio_table(data: ResultData, alg: str, baseline: str = "1SP") -> list[DelayRatioRow]:
    """Per-PoP-pair delay of alg relative to baseline, over baseline-reachable pairs."""
    base_index = PathIndex(data, baseline)
    alg_index = PathIndex(data, alg)
    rows = []
    pops = enumerate_pops(data.topology)
    for i, pa in enumerate(pops):
        for pb in pops[i + 1:]:
            if pa.as_id == pb.as_id:
                continue
            base = base_index.min_delay(pa, pb)
            if base == UNREACHABLE:
                continue
            mine = alg_index.min_delay(pa, pb)
            if mine == UNREACHABLE:
                rows.append(DelayRatioRow(pa, pb, alg, UNREACHABLE))
            elif base == 0.0:
                rows.append(DelayRatioRow(pa, pb, alg, 1.0 if mine == 0.0 else UNREACHABLE))
            else:
                rows.append(DelayRatioRow(pa, pb, alg, mine / base))
    return rows


# --- tolerable link failures ---------------------------------------------------

@dataclass(frozen=True)
class TlfInput:
    as_pair: tuple[AsId, AsId]
    paths: tuple[frozenset[Link], ...]

    def __post_init__(self):
        if not self.paths:
            raise ValueError("path set must be nonempty")
        s, t = self.as_pair
        for links in self.paths:
            if not _connected(links, s, t):
                raise ValueError(f"a path does not connect {s} and {t}")

    def union_links(self) -> frozenset[Link]:
        out: set[Link] = set()
        for links in self.paths:
            out.update(links)
        return frozenset(out)


def _connected(links: Iterable[Link], s: AsId, t: AsId) -> bool:
    adj: dict[AsId, list[AsId]] = {}
    for a, b in links:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    if s not in adj or t not in adj:
        return False
    seen = {s}
    queue = deque([s])
    while queue:
        u = queue.popleft()
        if u == t:
            return True
        for v in adj.get(u, ()):
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return False


def tlf(input: TlfInput) -> int:
    """Minimum s-t edge cut of the union of the paths' links (unit capacities).

    Computed as max-flow with BFS augmenting paths; each undirected link
    becomes a pair of opposing unit arcs.
    """
    s, t = input.as_pair
    capacity: dict[AsId, dict[AsId, int]] = {}
    for a, b in sorted(input.union_links()):
        capacity.setdefault(a, {})[b] = 1
        capacity.setdefault(b, {})[a] = 1
    flow = 0
    while True:
        parent: dict[AsId, AsId] = {s: s}
        queue = deque([s])
        while queue and t not in parent:
            u = queue.popleft()
            for v in sorted(capacity.get(u, {})):
                if v not in parent and capacity[u][v] > 0:
                    parent[v] = u
                    queue.append(v)
        if t not in parent:
            return flow
        v = t
        while v != s:
            u = parent[v]
            capacity[u][v] -= 1
            capacity.setdefault(v, {}).setdefault(u, 0)
            capacity[v][u] += 1
            v = u
        flow += 1


def tlf_bruteforce(input: TlfInput, max_links: int = 20) -> int:
    """Exhaustive oracle: smallest link set meeting every s-t path of the union.

    Tries all k-subsets of the union's links in ascending k and returns the
    first k whose removal leaves s and t disconnected.
    """
    union = sorted(input.union_links())
    if len(union) > max_links:
        raise TooLarge(f"{len(union)} union links exceeds the {max_links} cap")
    s, t = input.as_pair
    upper = len(input.paths)
    for k in range(0, upper + 1):
        for removed in combinations(union, k):
            gone = set(removed)
            keep = [l for l in union if l not in gone]
            if not _connected(keep, s, t):
                return k
    return upper


def registered_tlf_input(data: ResultData, alg: str, s: AsId, t: AsId) -> TlfInput | None:
    """TLF input from alg's registered paths between two ASes (either side)."""
    paths = []
    for rec in data.paths:
        if rec.rac_id == alg and {rec.origin_as, rec.dest_as} == {s, t}:
            paths.append(rec.links())
    if not paths:
        return None
    return TlfInput((min(s, t), max(s, t)), tuple(paths))


def pd_tlf_input(data: ResultData, s: AsId, t: AsId) -> TlfInput | None:
    accepted = data.pd_accepted.get((s, t)) or data.pd_accepted.get((t, s))
    if not accepted:
        return None
    return TlfInput((min(s, t), max(s, t)), tuple(accepted))


# --- propagated-beacon counts ---------------------------------------------------

@dataclass(frozen=True)
class PcbCountRow:
    alg: str
    as_id: AsId
    interface: int
    round_no: int
    count: int


def pcb_count_distribution(data: ResultData) -> list[PcbCountRow]:
    """PROPAGATE events per (algorithm, AS, egress interface, round).

    Zero rows are included for every active interface so distributions show
    silent periods (saturated algorithms stop emitting).
    """
    rows = []
    for alg in data.rac_ids:
        for as_id in data.topology.as_ids:
            for iface in sorted(i.if_id for i in data.topology.interfaces(as_id)):
                for r in range(data.rounds):
                    rows.append(PcbCountRow(
                        alg, as_id, iface, r,
                        data.propagate_counts.get((alg, as_id, iface, r), 0)))
    return rows


# --- plot-ready renderers ---------------------------------------------------------

def _fmt(x: float) -> str:
    if x == UNREACHABLE:
        return "inf"
    return repr(x)


def delay_ratio_csv(rows: Sequence[DelayRatioRow]) -> str:
    out = ["pop_a_as,pop_a_lat,pop_a_lon,pop_b_as,pop_b_lat,pop_b_lon,alg,ratio"]
    for r in rows:
        out.append(
            f"{r.pop_a.as_id},{r.pop_a.location.lat_deg},{r.pop_a.location.lon_deg},"
            f"{r.pop_b.as_id},{r.pop_b.location.lat_deg},{r.pop_b.location.lon_deg},"
            f"{r.alg},{_fmt(r.ratio)}"
        )
    return "\n".join(out) + "\n"


def tlf_csv(rows: Sequence[tuple[AsId, AsId, str, int]]) -> str:
    out = ["src_as,dst_as,alg,tlf"]
    for s, t, alg, value in rows:
        out.append(f"{s},{t},{alg},{value}")
    return "\n".join(out) + "\n"


def pcb_counts_csv(rows: Sequence[PcbCountRow]) -> str:
    out = ["alg,as,interface,round,count"]
    for r in rows:
        out.append(f"{r.alg},{r.as_id},{r.interface},{r.round_no},{r.count}")
    return "\n".join(out) + "\n"


def cdf_csv(values: Iterable[float]) -> str:
    """Sorted values with cumulative fractions, for direct plotting."""
    vals = sorted(v for v in values if not math.isnan(v))
    n = len(vals)
    out = ["value,cum_fraction"]
    for i, v in enumerate(vals, start=1):
        out.append(f"{_fmt(v)},{i / n}")
    return "\n".join(out) + "\n"
