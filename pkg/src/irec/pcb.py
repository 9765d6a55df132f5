"""Path-construction beacons: data model, canonical encoding, hashing, signatures.

A beacon (Pcb) carries an ordered chain of signed hop entries plus optional
origin-set extensions (target AS, shipped algorithm, interface group). All
values are immutable after construction and safe to share between threads.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Mapping, Protocol

from .errors import (
    BadChain,
    DecodeError,
    LinkMismatch,
    LoopDetected,
    MissingMetric,
    UnknownAsKey,
    UnknownInterface,
    ValidityExceedsCap,
)

MAGIC = b"IRECPCB1"
DIGEST_LEN = 32
MAX_ALGORITHM_ID_LEN = 32
DEFAULT_VALIDITY_CAP = 144  # rounds; 24h at a 10-minute round

AsId = int
InterfaceId = int


class MetricId(IntEnum):
    """Static-info metric identifiers, one byte on the wire."""

    INTRA_DELAY_MS = 1   # ingress -> egress crossing of this hop
    LINK_DELAY_MS = 2    # egress link of this hop
    BANDWIDTH_MBPS = 3   # egress link bandwidth
    GEO_LAT_LON = 4      # egress interface location (two values)


_METRIC_ARITY = {
    MetricId.INTRA_DELAY_MS: 1,
    MetricId.LINK_DELAY_MS: 1,
    MetricId.BANDWIDTH_MBPS: 1,
    MetricId.GEO_LAT_LON: 2,
}

StaticInfo = tuple[tuple[int, tuple[float, ...]], ...]


def _validate_metric(metric_id: int, values: tuple[float, ...]) -> None:
    try:
        mid = MetricId(metric_id)
    except ValueError:
        raise ValueError(f"unknown metric id {metric_id}")
    if len(values) != _METRIC_ARITY[mid]:
        raise ValueError(f"metric {mid.name} takes {_METRIC_ARITY[mid]} value(s)")
    if mid in (MetricId.INTRA_DELAY_MS, MetricId.LINK_DELAY_MS) and values[0] < 0:
        raise ValueError(f"{mid.name} must be >= 0")
    if mid is MetricId.BANDWIDTH_MBPS and values[0] <= 0:
        raise ValueError("BANDWIDTH_MBPS must be > 0")
    if mid is MetricId.GEO_LAT_LON:
        lat, lon = values
        if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
            raise ValueError("geolocation out of range")


def make_static_info(
    *,
    intra_delay_ms: float | None = None,
    link_delay_ms: float | None = None,
    bandwidth_mbps: float | None = None,
    geo: tuple[float, float] | None = None,
) -> StaticInfo:
    entries: list[tuple[int, tuple[float, ...]]] = []
    if intra_delay_ms is not None:
        entries.append((MetricId.INTRA_DELAY_MS.value, (float(intra_delay_ms),)))
    if link_delay_ms is not None:
        entries.append((MetricId.LINK_DELAY_MS.value, (float(link_delay_ms),)))
    if bandwidth_mbps is not None:
        entries.append((MetricId.BANDWIDTH_MBPS.value, (float(bandwidth_mbps),)))
    if geo is not None:
        entries.append((MetricId.GEO_LAT_LON.value, (float(geo[0]), float(geo[1]))))
    return tuple(sorted(entries))


@dataclass(frozen=True)
class AlgorithmExt:
    """On-demand routing extension: hash-addressed algorithm reference."""

    algorithm_id: bytes
    code_hash: bytes

    def __post_init__(self):
        if not (0 < len(self.algorithm_id) <= MAX_ALGORITHM_ID_LEN):
            raise ValueError("algorithm id must be 1..32 bytes")
        if len(self.code_hash) != DIGEST_LEN:
            raise ValueError("code hash must be 32 bytes")


@dataclass(frozen=True)
class HopEntry:
    """One signed AS hop. The origin hop has no ingress interface."""

    as_id: AsId
    ingress_if: InterfaceId | None
    egress_if: InterfaceId
    static_info: StaticInfo
    signature: bytes

    def __post_init__(self):
        if self.as_id <= 0 or self.as_id >= 1 << 64:
            raise ValueError("as_id must be a nonzero u64")
        for if_id in (self.ingress_if, self.egress_if):
            if if_id is not None and not (0 < if_id < 1 << 16):
                raise ValueError("interface ids are nonzero u16")
        seen = set()
        for metric_id, values in self.static_info:
            _validate_metric(metric_id, values)
            if metric_id in seen:
                raise ValueError("duplicate static-info metric")
            seen.add(metric_id)
        if tuple(sorted(self.static_info)) != self.static_info:
            raise ValueError("static_info must be sorted by metric id")
        if self.ingress_if is None and self.metric(MetricId.INTRA_DELAY_MS) is not None:
            raise ValueError("origin hop carries no intra delay")

    def metric(self, metric_id: int) -> tuple[float, ...] | None:
        for mid, values in self.static_info:
            if mid == metric_id:
                return values
        return None

    @property
    def link_delay_ms(self) -> float | None:
        v = self.metric(MetricId.LINK_DELAY_MS)
        return v[0] if v else None

    @property
    def intra_delay_ms(self) -> float | None:
        v = self.metric(MetricId.INTRA_DELAY_MS)
        return v[0] if v else None

    @property
    def bandwidth_mbps(self) -> float | None:
        v = self.metric(MetricId.BANDWIDTH_MBPS)
        return v[0] if v else None


@dataclass(frozen=True)
class Pcb:
    """A path-construction beacon; hops[0] is the origin hop."""

    origin_as: AsId
    origin_egress_if: InterfaceId
    creation_time: int
    expiry_time: int
    target_as: AsId | None
    algorithm: AlgorithmExt | None
    group_id: int | None
    hops: tuple[HopEntry, ...]

    def __post_init__(self):
        if not self.hops:
            raise ValueError("hops must be nonempty")
        origin = self.hops[0]
        if origin.as_id != self.origin_as or origin.egress_if != self.origin_egress_if:
            raise ValueError("origin hop disagrees with beacon header")
        if origin.ingress_if is not None:
            raise ValueError("origin hop has no ingress interface")
        for hop in self.hops[1:]:
            if hop.ingress_if is None:
                raise ValueError("non-origin hops need an ingress interface")
        as_ids = [h.as_id for h in self.hops]
        if len(set(as_ids)) != len(as_ids):
            raise ValueError("repeated AS on path")
        if self.group_id is not None and not (0 < self.group_id < 1 << 16):
            raise ValueError("group id must be a nonzero u16")
        if not (0 <= self.creation_time < 1 << 32 and 0 <= self.expiry_time < 1 << 32):
            raise ValueError("times must fit u32")

    def digest(self) -> bytes:
        cached = self.__dict__.get("_digest")
        if cached is None:
            cached = hashlib.sha256(canonical_encode(self)).digest()
            object.__setattr__(self, "_digest", cached)
        return cached

    def hop_count(self) -> int:
        return len(self.hops)

    def as_ids(self) -> tuple[AsId, ...]:
        return tuple(h.as_id for h in self.hops)


# --- canonical encoding ---------------------------------------------------

def _encode_static_info(info: StaticInfo) -> bytes:
    parts = [struct.pack(">B", len(info))]
    for metric_id, values in info:
        parts.append(struct.pack(">B", metric_id))
        for v in values:
            parts.append(struct.pack(">d", v))
    return b"".join(parts)


def _encode_hop_core(hop: HopEntry) -> bytes:
    parts = [struct.pack(">Q", hop.as_id)]
    if hop.ingress_if is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01" + struct.pack(">H", hop.ingress_if))
    parts.append(struct.pack(">H", hop.egress_if))
    parts.append(_encode_static_info(hop.static_info))
    return b"".join(parts)


def _encode_header(pcb: Pcb) -> bytes:
    return MAGIC + struct.pack(
        ">QHII", pcb.origin_as, pcb.origin_egress_if, pcb.creation_time, pcb.expiry_time
    )


def _encode_extensions(pcb: Pcb) -> bytes:
    presence = 0
    body = b""
    if pcb.target_as is not None:
        presence |= 1
        body += struct.pack(">Q", pcb.target_as)
    if pcb.algorithm is not None:
        presence |= 2
        body += struct.pack(">B", len(pcb.algorithm.algorithm_id))
        body += pcb.algorithm.algorithm_id + pcb.algorithm.code_hash
    if pcb.group_id is not None:
        presence |= 4
        body += struct.pack(">H", pcb.group_id)
    return struct.pack(">B", presence) + body


def canonical_encode(pcb: Pcb) -> bytes:
    """Deterministic binary encoding; equal values yield identical bytes."""
    parts = [_encode_header(pcb), _encode_extensions(pcb), struct.pack(">H", len(pcb.hops))]
    for hop in pcb.hops:
        parts.append(_encode_hop_core(hop))
        parts.append(struct.pack(">H", len(hop.signature)) + hop.signature)
    return b"".join(parts)


def pcb_digest(pcb: Pcb) -> bytes:
    """SHA-256 of the canonical encoding (full content hash)."""
    return pcb.digest()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError("truncated beacon")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def done(self) -> bool:
        return self.pos == len(self.data)


def decode_pcb(data: bytes) -> Pcb:
    """Strict inverse of canonical_encode; rejects malformed or trailing bytes."""
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise DecodeError("bad magic")
    origin_as, origin_eif, creation, expiry = r.unpack(">QHII")
    (presence,) = r.unpack(">B")
    if presence & ~0b111:
        raise DecodeError("unknown extension bits")
    target = r.unpack(">Q")[0] if presence & 1 else None
    algorithm = None
    if presence & 2:
        (id_len,) = r.unpack(">B")
        if not (0 < id_len <= MAX_ALGORITHM_ID_LEN):
            raise DecodeError("bad algorithm id length")
        alg_id = r.take(id_len)
        code_hash = r.take(DIGEST_LEN)
        algorithm = AlgorithmExt(alg_id, code_hash)
    group = r.unpack(">H")[0] if presence & 4 else None
    (hop_count,) = r.unpack(">H")
    hops = []
    for _ in range(hop_count):
        (as_id,) = r.unpack(">Q")
        (has_ingress,) = r.unpack(">B")
        if has_ingress not in (0, 1):
            raise DecodeError("bad ingress presence byte")
        ingress = r.unpack(">H")[0] if has_ingress else None
        (egress,) = r.unpack(">H")
        (n_metrics,) = r.unpack(">B")
        info = []
        for _ in range(n_metrics):
            (metric_id,) = r.unpack(">B")
            try:
                arity = _METRIC_ARITY[MetricId(metric_id)]
            except ValueError:
                raise DecodeError(f"unknown metric id {metric_id}")
            values = tuple(r.unpack(">d")[0] for _ in range(arity))
            info.append((metric_id, values))
        (sig_len,) = r.unpack(">H")
        sig = r.take(sig_len)
        try:
            hops.append(HopEntry(as_id, ingress, egress, tuple(info), sig))
        except ValueError as exc:
            raise DecodeError(str(exc))
    if not r.done():
        raise DecodeError("trailing bytes")
    try:
        return Pcb(origin_as, origin_eif, creation, expiry, target, algorithm, group, tuple(hops))
    except ValueError as exc:
        raise DecodeError(str(exc))


# --- signing ---------------------------------------------------------------

class Signer(Protocol):
    def sign(self, as_id: AsId, message: bytes) -> bytes: ...
    def verify(self, as_id: AsId, message: bytes, signature: bytes) -> bool: ...


class KeyedHashSigner:
    """Test signer: HMAC-SHA256 under a per-AS secret key.

    Gives the tamper detection the artifact needs without a PKI. The same
    instance doubles as the key registry used for verification.
    """

    def __init__(self, master_secret: bytes = b"irec-test-secret"):
        self._master = master_secret
        self._keys: dict[AsId, bytes] = {}

    def register(self, as_id: AsId) -> None:
        self._keys[as_id] = hashlib.sha256(
            self._master + struct.pack(">Q", as_id)
        ).digest()

    def register_all(self, as_ids: Iterable[AsId]) -> None:
        for as_id in as_ids:
            self.register(as_id)

    def _key(self, as_id: AsId) -> bytes:
        try:
            return self._keys[as_id]
        except KeyError:
            raise UnknownAsKey(f"no key registered for AS {as_id}")

    def sign(self, as_id: AsId, message: bytes) -> bytes:
        return hmac.new(self._key(as_id), message, hashlib.sha256).digest()

    def verify(self, as_id: AsId, message: bytes, signature: bytes) -> bool:
        return hmac.compare_digest(self.sign(as_id, message), signature)


def _signed_bytes(pcb_header: bytes, ext_bytes: bytes, hop_core: bytes, prev_sig: bytes,
                  is_origin: bool) -> bytes:
    # The origin signature additionally covers the beacon header and the
    # origin-set extensions; later hops chain over the previous signature.
    msg = hop_core + prev_sig
    if is_origin:
        msg += pcb_header + ext_bytes
    return msg


def _sign_hop(pcb: Pcb, hop: HopEntry, prev_sig: bytes, is_origin: bool,
              signer: Signer) -> bytes:
    msg = _signed_bytes(_encode_header(pcb), _encode_extensions(pcb),
                        _encode_hop_core(hop), prev_sig, is_origin)
    return signer.sign(hop.as_id, msg)


def verify_chain(pcb: Pcb, key_lookup: Signer) -> None:
    """Check every hop signature; raises BadChain at the first bad hop."""
    header = _encode_header(pcb)
    exts = _encode_extensions(pcb)
    prev_sig = b""
    for i, hop in enumerate(pcb.hops):
        msg = _signed_bytes(header, exts, _encode_hop_core(hop), prev_sig, i == 0)
        if not key_lookup.verify(hop.as_id, msg, hop.signature):
            raise BadChain(i)
        prev_sig = hop.signature


def chain_ok(pcb: Pcb, key_lookup: Signer) -> bool:
    try:
        verify_chain(pcb, key_lookup)
    except BadChain:
        return False
    return True


# --- beacon operations -----------------------------------------------------

def originate(
    origin: AsId,
    egress_if: InterfaceId,
    *,
    static_info: StaticInfo,
    signer: Signer,
    now: int,
    validity: int,
    validity_cap: int = DEFAULT_VALIDITY_CAP,
    target_as: AsId | None = None,
    algorithm: AlgorithmExt | None = None,
    group_id: int | None = None,
) -> Pcb:
    """Create a one-hop beacon signed by the origin AS.

    static_info is supplied by the caller (normally the egress gateway, which
    fills it from the topology subject to the AS sharing policy).
    """
    if validity > validity_cap:
        raise ValidityExceedsCap(f"validity {validity} exceeds cap {validity_cap}")
    hop = HopEntry(origin, None, egress_if, static_info, b"")
    pcb = Pcb(origin, egress_if, now, now + validity, target_as, algorithm, group_id, (hop,))
    sig = _sign_hop(pcb, hop, b"", True, signer)
    signed_hop = HopEntry(origin, None, egress_if, static_info, sig)
    return Pcb(origin, egress_if, now, now + validity, target_as, algorithm, group_id,
               (signed_hop,))


def extend(
    pcb: Pcb,
    as_id: AsId,
    ingress_if: InterfaceId,
    egress_if: InterfaceId,
    static_info: StaticInfo,
    signer: Signer,
    *,
    key_lookup: Signer | None = None,
    expected_ingress: tuple[AsId, InterfaceId] | None = None,
) -> Pcb:
    """Append this AS's signed hop; the input beacon is left untouched.

    expected_ingress, when given, is the (as, interface) the topology says the
    previous hop's egress link leads to; a mismatch raises LinkMismatch.
    """
    if key_lookup is not None:
        verify_chain(pcb, key_lookup)
    if as_id in pcb.as_ids():
        raise LoopDetected(f"AS {as_id} already on path")
    if expected_ingress is not None and expected_ingress != (as_id, ingress_if):
        raise LinkMismatch(
            f"link from hop {len(pcb.hops) - 1} leads to {expected_ingress}, "
            f"not ({as_id}, {ingress_if})"
        )
    hop = HopEntry(as_id, ingress_if, egress_if, static_info, b"")
    extended = Pcb(
        pcb.origin_as, pcb.origin_egress_if, pcb.creation_time, pcb.expiry_time,
        pcb.target_as, pcb.algorithm, pcb.group_id, pcb.hops + (hop,),
    )
    sig = _sign_hop(extended, hop, pcb.hops[-1].signature, False, signer)
    signed_hop = HopEntry(as_id, ingress_if, egress_if, static_info, sig)
    return Pcb(
        pcb.origin_as, pcb.origin_egress_if, pcb.creation_time, pcb.expiry_time,
        pcb.target_as, pcb.algorithm, pcb.group_id, pcb.hops + (signed_hop,),
    )


def accumulated_delay(pcb: Pcb) -> float:
    """Sum of per-hop crossing and egress-link delays, in milliseconds."""
    total = 0.0
    for i, hop in enumerate(pcb.hops):
        if hop.link_delay_ms is None:
            raise MissingMetric(f"hop {i} lacks link delay")
        if i > 0:
            if hop.intra_delay_ms is None:
                raise MissingMetric(f"hop {i} lacks intra delay")
            total += hop.intra_delay_ms
        total += hop.link_delay_ms
    return total


def min_bandwidth(pcb: Pcb) -> float:
    """Bottleneck bandwidth over all egress links on the path."""
    best = None
    for i, hop in enumerate(pcb.hops):
        bw = hop.bandwidth_mbps
        if bw is None:
            raise MissingMetric(f"hop {i} lacks bandwidth")
        best = bw if best is None else min(best, bw)
    return best


def path_links(pcb: Pcb, final_as: AsId) -> frozenset[tuple[AsId, AsId]]:
    """AS-level links of the path, as unordered pairs, ending at final_as."""
    ases = list(pcb.as_ids()) + [final_as]
    links = set()
    for a, b in zip(ases, ases[1:]):
        links.add((a, b) if a <= b else (b, a))
    return frozenset(links)
