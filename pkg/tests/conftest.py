"""Shared fixtures: signers, hand-built topologies, beacon builders."""

from __future__ import annotations

import math

import pytest

from irec.pcb import (
    AlgorithmExt,
    KeyedHashSigner,
    Pcb,
    extend,
    make_static_info,
    originate,
)
from irec.topology import (
    EARTH_RADIUS_KM,
    PROPAGATION_KM_PER_S,
    GeoPoint,
    LinkSpec,
    Topology,
)


def lat_for_km(km: float) -> float:
    return math.degrees(km / EARTH_RADIUS_KM)


def lat_for_ms(ms: float) -> float:
    return lat_for_km(ms * PROPAGATION_KM_PER_S / 1000.0)


@pytest.fixture
def signer():
    s = KeyedHashSigner()
    s.register_all(range(1, 65))
    return s


def make_signer(as_ids) -> KeyedHashSigner:
    s = KeyedHashSigner()
    s.register_all(as_ids)
    return s


# --- topology builders ---------------------------------------------------------

def line_topology(n: int, spacing_km: float = 100.0) -> Topology:
    """ASes 1..n chained along a meridian; link i sits at i*spacing north."""
    specs = []
    for i in range(1, n):
        loc = GeoPoint(lat_for_km(i * spacing_km), 0.0)
        specs.append(LinkSpec(i, i + 1, loc, loc))
    return Topology(specs)


# Received delays 10 and 12 ms into a middle AS whose crossings to the far
# interface cost 10 and 2 ms: extended delays flip the received preference.
LAT_2MS = lat_for_ms(2.0)
LAT_10MS = lat_for_ms(10.0)
LAT_12MS = lat_for_ms(12.0)


def extend_then_optimize_topology() -> Topology:
    """Origin 1 and middle 2 joined by two parallel links, then on to 3.

    Middle interfaces: if1 (10 ms from origin's if1), if2 (12 ms from
    origin's if2), if3 (co-located with AS 3). Crossings: if1->if3 = 10 ms,
    if2->if3 = 2 ms.
    """
    m_if1 = GeoPoint(LAT_10MS, 0.0)
    m_if2 = GeoPoint(LAT_2MS, 0.0)
    m_if3 = GeoPoint(0.0, 0.0)
    o_if1 = GeoPoint(LAT_10MS * 2, 0.0)
    o_if2 = GeoPoint(LAT_2MS + LAT_12MS, 0.0)
    return Topology([
        LinkSpec(1, 2, o_if1, m_if1),
        LinkSpec(1, 2, o_if2, m_if2),
        LinkSpec(2, 3, m_if3, m_if3),
    ])


def _to_vec(lat: float, lon: float):
    la, lo = math.radians(lat), math.radians(lon)
    return (math.cos(la) * math.cos(lo), math.cos(la) * math.sin(lo), math.sin(la))


def _to_latlon(v) -> GeoPoint:
    x, y, z = v
    return GeoPoint(math.degrees(math.asin(max(-1.0, min(1.0, z)))),
                    math.degrees(math.atan2(y, x)))


def criteria_example_topology() -> Topology:
    """Five ASes, seven links of exactly 10 ms each, thickness-ordered bandwidth.

    ASes: 1=Src, 2=X, 3=Y, 4=Z, 5=Dst. Every AS has one location, so all
    delay lives on the links. Built from equilateral spherical triangles
    (Src,X,Y), (X,Y,Z), (X,Z,Dst) glued edge to edge.
    """
    s_rad = 10.0 * PROPAGATION_KM_PER_S / 1000.0 / EARTH_RADIUS_KM
    s_deg = math.degrees(s_rad)
    x = GeoPoint(0.0, 0.0)
    y = GeoPoint(0.0, s_deg)
    phi = math.degrees(math.acos(math.cos(s_rad) / math.cos(s_rad / 2.0)))
    z = GeoPoint(phi, s_deg / 2.0)
    src = GeoPoint(-phi, s_deg / 2.0)
    vx, vy, vz = _to_vec(x.lat_deg, x.lon_deg), _to_vec(y.lat_deg, y.lon_deg), _to_vec(z.lat_deg, z.lon_deg)
    normal = (
        vx[1] * vz[2] - vx[2] * vz[1],
        vx[2] * vz[0] - vx[0] * vz[2],
        vx[0] * vz[1] - vx[1] * vz[0],
    )
    norm = math.sqrt(sum(c * c for c in normal))
    normal = tuple(c / norm for c in normal)
    d = sum(a * b for a, b in zip(vy, normal))
    dst = _to_latlon(tuple(c - 2.0 * d * n for c, n in zip(vy, normal)))

    loc = {1: src, 2: x, 3: y, 4: z, 5: dst}
    edges = [
        (1, 2, 100.0),    # Src-X, thin
        (1, 3, 1000.0),   # Src-Y, thick
        (3, 2, 1000.0),   # Y-X, thick
        (3, 4, 500.0),    # Y-Z, mid
        (2, 4, 1000.0),   # X-Z, thick
        (2, 5, 600.0),    # X-Dst, mid
        (4, 5, 1000.0),   # Z-Dst, thick
    ]
    return Topology([LinkSpec(a, b, loc[a], loc[b], bw) for a, b, bw in edges])


# --- beacon builders -------------------------------------------------------------

def static_info_for(topo: Topology, as_id: int, egress_if: int, ingress_if=None):
    iface = topo.interface(as_id, egress_if)
    kwargs = dict(
        link_delay_ms=topo.link_delay_ms(as_id, egress_if),
        bandwidth_mbps=iface.link_bandwidth_mbps,
        geo=(iface.location.lat_deg, iface.location.lon_deg),
    )
    if ingress_if is not None:
        kwargs["intra_delay_ms"] = topo.intra_delay_ms(as_id, ingress_if, egress_if)
    return make_static_info(**kwargs)


def originate_at(topo: Topology, signer: KeyedHashSigner, as_id: int, egress_if: int,
                 *, now: int = 0, validity: int = 100, target_as=None,
                 algorithm: AlgorithmExt | None = None, group_id=None) -> Pcb:
    return originate(
        as_id, egress_if,
        static_info=static_info_for(topo, as_id, egress_if),
        signer=signer, now=now, validity=validity,
        target_as=target_as, algorithm=algorithm, group_id=group_id,
    )


def extend_to(topo: Topology, signer: KeyedHashSigner, pcb: Pcb, egress_if: int) -> Pcb:
    """Extend through the AS the beacon just arrived at, out of egress_if."""
    last = pcb.hops[-1]
    as_id, arrival_if = topo.interface(last.as_id, last.egress_if).peer
    return extend(
        pcb, as_id, arrival_if, egress_if,
        static_info_for(topo, as_id, egress_if, arrival_if),
        signer,
    )


def beacon_along(topo: Topology, signer: KeyedHashSigner, egress_chain: list[tuple[int, int]],
                 *, now: int = 0, validity: int = 100, **exts) -> Pcb:
    """Build a beacon following [(origin, egress_if), (as, egress_if), ...]."""
    (origin, first_if), rest = egress_chain[0], egress_chain[1:]
    pcb = originate_at(topo, signer, origin, first_if, now=now, validity=validity, **exts)
    for as_id, egress_if in rest:
        pcb = extend_to(topo, signer, pcb, egress_if)
        assert pcb.hops[-1].as_id == as_id
    return pcb
