"""Geo-annotated AS-level topology: ingestion, synthesis, pruning, delays.

The topology is an AS-level multigraph whose link endpoints carry
geolocations. Inter-AS link delay is the great-circle propagation delay
between the two endpoint locations (zero when co-located, which is always the
case for geo-rel ingested links since the file gives one location per link).
Intra-AS delay between two interfaces is the great-circle delay between their
locations.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Iterable, TextIO

import networkx as nx

from .errors import (
    DuplicateLink,
    InfeasibleParameters,
    ParseError,
    UnknownInterface,
)
from .pcb import AsId, InterfaceId

EARTH_RADIUS_KM = 6371.0
# Signal propagation at 2/3 the speed of light in vacuum (fiber approximation).
PROPAGATION_KM_PER_S = 2.0 * 299_792.458 / 3.0
DEFAULT_BANDWIDTH_MBPS = 1000.0

VALID_RELS = ("p2c", "c2p", "p2p")


@dataclass(frozen=True)
class GeoPoint:
    lat_deg: float
    lon_deg: float

    def __post_init__(self):
        if not (-90.0 <= self.lat_deg <= 90.0):
            raise ValueError(f"latitude {self.lat_deg} out of range")
        if not (-180.0 <= self.lon_deg <= 180.0):
            raise ValueError(f"longitude {self.lon_deg} out of range")


@dataclass(frozen=True)
class Interface:
    owner: AsId
    if_id: InterfaceId
    location: GeoPoint
    peer: tuple[AsId, InterfaceId]
    link_bandwidth_mbps: float


@dataclass(frozen=True)
class InterfaceGroup:
    group_id: int
    members: frozenset[InterfaceId]


@dataclass(frozen=True)
class LinkSpec:
    """One inter-AS link for topology construction."""

    as_a: AsId
    as_b: AsId
    loc_a: GeoPoint
    loc_b: GeoPoint
    bandwidth_mbps: float = DEFAULT_BANDWIDTH_MBPS
    rel: str = "p2p"


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance with Earth radius 6371 km."""
    lat1, lon1 = math.radians(a.lat_deg), math.radians(a.lon_deg)
    lat2, lon2 = math.radians(b.lat_deg), math.radians(b.lon_deg)
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def propagation_delay_ms(a: GeoPoint, b: GeoPoint) -> float:
    return haversine_km(a, b) / PROPAGATION_KM_PER_S * 1000.0


class Topology:
    """Immutable after construction; read-shared by every AS in a run."""

    def __init__(self, links: Iterable[LinkSpec]):
        self._interfaces: dict[tuple[AsId, InterfaceId], Interface] = {}
        self._by_as: dict[AsId, list[Interface]] = {}
        self._links: list[tuple[tuple[AsId, InterfaceId], tuple[AsId, InterfaceId]]] = []
        self._link_specs: tuple[LinkSpec, ...] = tuple(links)
        counters: dict[AsId, int] = {}
        for spec in self._link_specs:
            if spec.as_a == spec.as_b:
                raise ValueError(f"self-loop link on AS {spec.as_a}")
            if spec.as_a <= 0 or spec.as_b <= 0:
                raise ValueError("AS ids must be positive")
            if spec.bandwidth_mbps <= 0:
                raise ValueError("bandwidth must be positive")
            if_a = counters.get(spec.as_a, 0) + 1
            counters[spec.as_a] = if_a
            if_b = counters.get(spec.as_b, 0) + 1
            counters[spec.as_b] = if_b
            iface_a = Interface(spec.as_a, if_a, spec.loc_a, (spec.as_b, if_b),
                                spec.bandwidth_mbps)
            iface_b = Interface(spec.as_b, if_b, spec.loc_b, (spec.as_a, if_a),
                                spec.bandwidth_mbps)
            for iface in (iface_a, iface_b):
                self._interfaces[(iface.owner, iface.if_id)] = iface
                self._by_as.setdefault(iface.owner, []).append(iface)
            self._links.append(((spec.as_a, if_a), (spec.as_b, if_b)))

    # -- lookups --

    @property
    def as_ids(self) -> tuple[AsId, ...]:
        return tuple(sorted(self._by_as))

    def interfaces(self, as_id: AsId) -> tuple[Interface, ...]:
        try:
            return tuple(self._by_as[as_id])
        except KeyError:
            raise UnknownInterface(f"unknown AS {as_id}")

    def interface(self, as_id: AsId, if_id: InterfaceId) -> Interface:
        try:
            return self._interfaces[(as_id, if_id)]
        except KeyError:
            raise UnknownInterface(f"unknown interface ({as_id}, {if_id})")

    def has_as(self, as_id: AsId) -> bool:
        return as_id in self._by_as

    def neighbors(self, as_id: AsId) -> tuple[AsId, ...]:
        return tuple(sorted({i.peer[0] for i in self.interfaces(as_id)}))

    def link_count(self) -> int:
        return len(self._links)

    def iter_links(self):
        return iter(self._links)

    def link_specs(self) -> tuple[LinkSpec, ...]:
        return self._link_specs

    def degree(self, as_id: AsId) -> int:
        return len(self.interfaces(as_id))

    # -- delays --

    def link_delay_ms(self, as_id: AsId, if_id: InterfaceId) -> float:
        iface = self.interface(as_id, if_id)
        peer = self.interface(*iface.peer)
        return propagation_delay_ms(iface.location, peer.location)

    def intra_delay_ms(self, as_id: AsId, if_a: InterfaceId, if_b: InterfaceId) -> float:
        a = self.interface(as_id, if_a)
        b = self.interface(as_id, if_b)
        return propagation_delay_ms(a.location, b.location)

    # -- derived graphs --

    def as_graph(self) -> nx.MultiGraph:
        g = nx.MultiGraph()
        g.add_nodes_from(self.as_ids)
        for (a, ia), (b, ib) in self._links:
            g.add_edge(a, b, key=(ia, ib))
        return g

    def interface_graph(self) -> nx.Graph:
        """Oracle substrate: interfaces as nodes, link + intra-AS delay edges."""
        g = nx.Graph()
        for key, iface in sorted(self._interfaces.items()):
            g.add_node(key, location=iface.location)
        for (a, ia), (b, ib) in self._links:
            g.add_edge((a, ia), (b, ib),
                       weight=self.link_delay_ms(a, ia), kind="link")
        for as_id in self.as_ids:
            ifaces = self.interfaces(as_id)
            for i, x in enumerate(ifaces):
                for y in ifaces[i + 1:]:
                    g.add_edge((as_id, x.if_id), (as_id, y.if_id),
                               weight=propagation_delay_ms(x.location, y.location),
                               kind="intra")
        return g

    def is_connected(self) -> bool:
        g = self.as_graph()
        return g.number_of_nodes() > 0 and nx.is_connected(g)


# --- geo-rel ingestion ------------------------------------------------------

def load_georel(reader: TextIO) -> Topology:
    """Parse the geo-rel text format, one link per line.

    Format: `as1 as2 rel lat lon [bandwidth_mbps]`, rel in {p2c, c2p, p2p};
    `#` starts a comment line. Interface ids are assigned per AS in line
    order, starting at 1.
    """
    specs: list[LinkSpec] = []
    seen: set[tuple[AsId, AsId, float, float]] = set()
    for line_no, raw in enumerate(reader, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) not in (5, 6):
            raise ParseError(f"expected 5 or 6 fields, got {len(fields)}", line_no)
        try:
            as1, as2 = int(fields[0]), int(fields[1])
        except ValueError:
            raise ParseError("AS ids must be integers", line_no)
        rel = fields[2]
        if rel not in VALID_RELS:
            raise ParseError(f"relationship must be one of {VALID_RELS}", line_no)
        try:
            lat, lon = float(fields[3]), float(fields[4])
            bw = float(fields[5]) if len(fields) == 6 else DEFAULT_BANDWIDTH_MBPS
        except ValueError:
            raise ParseError("coordinates and bandwidth must be numeric", line_no)
        if as1 <= 0 or as2 <= 0 or as1 == as2:
            raise ParseError("AS ids must be positive and distinct", line_no)
        try:
            loc = GeoPoint(lat, lon)
        except ValueError as exc:
            raise ParseError(str(exc), line_no)
        if bw <= 0:
            raise ParseError("bandwidth must be positive", line_no)
        key = (min(as1, as2), max(as1, as2), lat, lon)
        if key in seen:
            raise DuplicateLink(f"duplicate link {as1}-{as2} at ({lat}, {lon})", line_no)
        seen.add(key)
        specs.append(LinkSpec(as1, as2, loc, loc, bw, rel))
    return Topology(specs)


def dump_georel(topology: Topology) -> str:
    """Serialize back to geo-rel lines (uses the first endpoint's location)."""
    lines = ["# as1 as2 rel lat lon bandwidth_mbps"]
    for spec in topology.link_specs():
        lines.append(
            f"{spec.as_a} {spec.as_b} {spec.rel} "
            f"{spec.loc_a.lat_deg:.6f} {spec.loc_a.lon_deg:.6f} {spec.bandwidth_mbps:g}"
        )
    return "\n".join(lines) + "\n"


# --- pruning ----------------------------------------------------------------

def prune_to_top_n(topology: Topology, n: int) -> Topology:
    """Iteratively drop the minimum-degree AS (ties: smallest id) to n ASes.

    Isolated ASes left over after the greedy loop are dropped as well.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    alive = set(topology.as_ids)
    links = list(topology.link_specs())
    degree: dict[AsId, int] = {a: 0 for a in alive}
    for spec in links:
        degree[spec.as_a] += 1
        degree[spec.as_b] += 1
    while len(alive) > n:
        victim = min(alive, key=lambda a: (degree[a], a))
        alive.remove(victim)
        kept = []
        for spec in links:
            if spec.as_a == victim or spec.as_b == victim:
                other = spec.as_b if spec.as_a == victim else spec.as_a
                degree[other] -= 1
            else:
                kept.append(spec)
        links = kept
    return Topology([s for s in links])


# --- interface groups --------------------------------------------------------

def cluster_interface_groups(topology: Topology, as_id: AsId, d_km: float) -> list[InterfaceGroup]:
    """Greedy first-fit clustering of an AS's interfaces by geographic diameter.

    Interfaces are scanned in ascending id; each joins the first existing
    group whose diameter stays within d_km, else opens a new group. Group ids
    are assigned 1, 2, ... in creation order, so the result is deterministic.
    """
    if d_km <= 0:
        raise ValueError("d_km must be positive")
    groups: list[list[Interface]] = []
    for iface in sorted(topology.interfaces(as_id), key=lambda i: i.if_id):
        for members in groups:
            if all(haversine_km(iface.location, m.location) <= d_km for m in members):
                members.append(iface)
                break
        else:
            groups.append([iface])
    return [
        InterfaceGroup(i + 1, frozenset(m.if_id for m in members))
        for i, members in enumerate(groups)
    ]


# --- synthetic topologies -----------------------------------------------------

def _random_point(rng: random.Random) -> GeoPoint:
    # Area-uniform on the sphere, clamped away from the poles.
    lat = math.degrees(math.asin(rng.uniform(-0.95, 0.95)))
    lon = rng.uniform(-180.0, 180.0)
    return GeoPoint(lat, lon)


def _offset_point(base: GeoPoint, rng: random.Random, spread_km: float) -> GeoPoint:
    dlat = rng.uniform(-spread_km, spread_km) / EARTH_RADIUS_KM
    coslat = max(0.2, math.cos(math.radians(base.lat_deg)))
    dlon = rng.uniform(-spread_km, spread_km) / (EARTH_RADIUS_KM * coslat)
    lat = max(-90.0, min(90.0, base.lat_deg + math.degrees(dlat)))
    lon = (base.lon_deg + math.degrees(dlon) + 180.0) % 360.0 - 180.0
    return GeoPoint(lat, lon)


def synth_topology(n_ases: int, avg_degree: float, geo_spread_km: float, seed: int) -> Topology:
    """Deterministic random topology: connected, geo-placed, multi-PoP ASes.

    Each AS sits at a random base location with 1-8 points of presence within
    geo_spread_km; every link endpoint is pinned to one PoP of its side's AS.
    """
    if n_ases < 2:
        raise InfeasibleParameters("need at least 2 ASes")
    target_links = round(n_ases * avg_degree / 2.0)
    if target_links < n_ases - 1:
        raise InfeasibleParameters("avg_degree too low for a connected topology")
    max_links = n_ases * (n_ases - 1) // 2
    if target_links > max_links:
        raise InfeasibleParameters("avg_degree too high for a simple AS graph")

    rng = random.Random(seed)
    as_ids = list(range(1, n_ases + 1))
    pops: dict[AsId, list[GeoPoint]] = {}
    for a in as_ids:
        base = _random_point(rng)
        pops[a] = [_offset_point(base, rng, geo_spread_km) for _ in range(rng.randint(1, 8))]

    pairs: set[tuple[AsId, AsId]] = set()
    order = as_ids[:]
    rng.shuffle(order)
    for i, a in enumerate(order[1:], start=1):
        b = order[rng.randrange(i)]
        pairs.add((min(a, b), max(a, b)))
    while len(pairs) < target_links:
        a, b = rng.sample(as_ids, 2)
        pairs.add((min(a, b), max(a, b)))

    specs = []
    for a, b in sorted(pairs):
        # geo-rel style: the link lives at one location, shared by both ends
        loc = rng.choice(pops[a] if rng.random() < 0.5 else pops[b])
        bw = float(rng.choice([100, 200, 500, 1000, 2000, 5000, 10000]))
        specs.append(LinkSpec(a, b, loc, loc, bw))
    topo = Topology(specs)
    assert topo.is_connected()
    return topo
