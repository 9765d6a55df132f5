"""irec: a deterministic, desk-scale extensible inter-domain control plane.

Beacons accumulate signed per-AS hops; per-AS routing-algorithm containers
select and propagate them in parallel, including algorithms shipped inside
beacons (on-demand) and origin-initiated discovery toward a named target
(pull-based). A round-based simulator plus delay/disjointness/overhead
metrics reproduce the qualitative behavior of the architecture.
"""

from .errors import IrecError
from .pcb import (
    AlgorithmExt,
    HopEntry,
    KeyedHashSigner,
    MetricId,
    Pcb,
    accumulated_delay,
    canonical_encode,
    decode_pcb,
    extend,
    originate,
    pcb_digest,
    verify_chain,
)
from .topology import (
    GeoPoint,
    Interface,
    InterfaceGroup,
    LinkSpec,
    Topology,
    cluster_interface_groups,
    haversine_km,
    load_georel,
    propagation_delay_ms,
    prune_to_top_n,
    synth_topology,
)
from .programs import RoutingProgram, execute_program, parse_program, serialize_program
from .rac import AlgorithmStore, ExecutionLimits, Rac, RacConfig, TopologyView
from .sim import PdSpec, PullSpec, SimConfig, SimResult, run
from .metrics import (
    ResultData,
    delay_ratio_table,
    enumerate_pops,
    min_pop_delay,
    pcb_count_distribution,
    result_data,
    tlf,
    tlf_bruteforce,
)

__version__ = "0.1.0"
