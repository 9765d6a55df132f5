"""Experiment runner and data exporter.

Subcommands: gen-topology (synthesize a geo-rel file), prune (top-N degree
pruning), run (execute a simulation from a TOML config), metrics (emit CSV
and CDF files from a run directory). Every subcommand is deterministic given
its inputs; errors go to stderr with documented exit codes.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import metrics as metricsmod
from .errors import (
    ConfigError,
    DuplicateLink,
    InfeasibleParameters,
    IrecError,
    MissingResult,
    ParseError,
)
from .gateways import RegistryRow
from .pcb import AsId
from .programs import (
    AvoidAses,
    AvoidLinks,
    MaxDelayMs,
    MaxHops,
    MinBandwidthMbps,
    RoutingProgram,
    canon_link,
    program,
)
from .rac import ExecutionLimits, RacConfig
from .sim import PdSpec, PullSpec, SimConfig, SimResult, run as run_sim
from .metrics import PathRecord, ResultData
from .topology import (
    GeoPoint,
    LinkSpec,
    Topology,
    dump_georel,
    load_georel,
    prune_to_top_n,
    synth_topology,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_BAD_INPUT = 2
EXIT_IO = 3
EXIT_MISSING_RESULT = 4


def _setup_logging() -> None:
    level = os.environ.get("IREC_LOG", "off").lower()
    if level == "off":
        logging.getLogger("irec").addHandler(logging.NullHandler())
        return
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if level == "debug" else logging.INFO,
        format="%(name)s %(levelname)s %(message)s",
    )


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


# --- gen-topology / prune ------------------------------------------------------

def cmd_gen_topology(args) -> int:
    topo = synth_topology(args.n, args.avg_degree, args.spread_km, args.seed)
    _write_atomic(Path(args.out), dump_georel(topo))
    n_ifaces = sum(len(topo.interfaces(a)) for a in topo.as_ids)
    print(f"ases={len(topo.as_ids)} links={topo.link_count()} interfaces={n_ifaces}")
    return EXIT_OK


def cmd_prune(args) -> int:
    with open(args.infile) as fh:
        topo = load_georel(fh)
    before = len(topo.as_ids)
    pruned = prune_to_top_n(topo, args.n)
    _write_atomic(Path(args.out), dump_georel(pruned))
    print(f"removed={before - len(pruned.as_ids)} kept={len(pruned.as_ids)} "
          f"links={pruned.link_count()}")
    return EXIT_OK


# --- config parsing --------------------------------------------------------------

def _topology_from_config(doc: dict, config_dir: Path) -> Topology:
    sec = doc.get("topology")
    if not isinstance(sec, dict):
        raise ConfigError("missing [topology] section")
    source = sec.get("source", "file")
    if source == "file":
        path = sec.get("path")
        if not path:
            raise ConfigError("[topology] path is required for source = \"file\"")
        with open(config_dir / path) as fh:
            topo = load_georel(fh)
    elif source == "synth":
        topo = synth_topology(
            int(sec.get("n_ases", 20)),
            float(sec.get("avg_degree", 4.0)),
            float(sec.get("spread_km", 500.0)),
            int(sec.get("seed", 0)),
        )
    else:
        raise ConfigError(f"unknown topology source {source!r}")
    prune_to = int(sec.get("prune_to", 0))
    if prune_to:
        topo = prune_to_top_n(topo, prune_to)
    return topo


def _rac_from_section(name: str, sec: dict) -> RacConfig:
    limits = ExecutionLimits(
        max_steps=int(sec.get("max_steps", 1_000_000)),
        max_memory_items=int(sec.get("max_memory_items", 100_000)),
        max_program_bytes=int(sec.get("max_program_bytes", 65_536)),
    )
    return RacConfig(
        rac_id=name,
        kind=sec.get("kind", "static"),
        static_algorithm=sec.get("algorithm"),
        partition_by_group=bool(sec.get("partition_by_group", False)),
        partition_by_target=bool(sec.get("partition_by_target", False)),
        max_selected=int(sec.get("max_selected", 20)),
        period=int(sec.get("period", 1)),
        limits=limits,
        group_threshold_km=(
            float(sec["group_threshold_km"]) if "group_threshold_km" in sec else None),
    )


def _program_from_section(sec: dict) -> RoutingProgram:
    filters = []
    if sec.get("avoid_links"):
        filters.append(AvoidLinks(frozenset(
            canon_link(int(a), int(b)) for a, b in sec["avoid_links"])))
    if sec.get("avoid_ases"):
        filters.append(AvoidAses(frozenset(int(a) for a in sec["avoid_ases"])))
    if sec.get("max_hops"):
        filters.append(MaxHops(int(sec["max_hops"])))
    if sec.get("max_delay_ms"):
        filters.append(MaxDelayMs(float(sec["max_delay_ms"])))
    if sec.get("min_bandwidth_mbps"):
        filters.append(MinBandwidthMbps(float(sec["min_bandwidth_mbps"])))
    objectives = sec.get("objectives")
    if not objectives:
        raise ConfigError("pull program needs objectives")
    return program(filters=tuple(filters), objectives=objectives,
                   select_k=int(sec.get("select_k", 1)))


def load_config(path: str | Path) -> SimConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"bad config: {exc}")
    topo = _topology_from_config(doc, path.parent)
    sim = doc.get("sim", {})
    racs = tuple(
        _rac_from_section(name, sec)
        for name, sec in sorted(doc.get("rac", {}).items())
    )
    pulls = tuple(
        PullSpec(
            origin_as=int(sec["origin"]),
            target_as=int(sec["target"]),
            program=_program_from_section(sec),
            start_round=int(sec.get("start_round", 0)),
        )
        for sec in doc.get("pull", ())
    )
    pd = None
    if "pd" in doc:
        sec = doc["pd"]
        pd = PdSpec(
            pairs=tuple((int(a), int(b)) for a, b in sec.get("pairs", ())),
            goal_k=int(sec.get("goal_k", 20)),
            timeout_rounds=int(sec.get("timeout_rounds", 30)),
            seed_rac=sec.get("seed_rac", "HD"),
            start_round=int(sec.get("start_round", 0)),
        )
    return SimConfig(
        topology=topo,
        rounds=int(sim.get("rounds", 10)),
        racs=racs,
        period=int(sim.get("period", 1)),
        origination_period=(
            int(sim["origination_period"]) if "origination_period" in sim else None),
        originate_plain=bool(sim.get("originate_plain", True)),
        group_thresholds_km=tuple(float(x) for x in sim.get("group_thresholds_km", ())),
        validity=int(sim.get("validity", 144)),
        validity_cap=int(sim.get("validity_cap", 144)),
        registry_cap=int(sim.get("registry_cap", 20)),
        purge_lookahead=int(sim.get("purge_lookahead", 1)),
        pulls=pulls,
        pd=pd,
        seed=int(sim.get("seed", 0)),
    )


# --- result serialization ---------------------------------------------------------

def _registry_csv(result: SimResult) -> str:
    out = ["as,rac,origin,group,digest,hops,delay_ms,tags"]
    for as_id in sorted(result.registries):
        for row in result.registries[as_id]:
            delay = "" if row.delay_ms is None else repr(row.delay_ms)
            tags = "|".join(sorted(row.tags))
            out.append(f"{as_id},{row.rac_id},{row.origin_as},{row.group_id},"
                       f"{row.digest.hex()},{row.hops},{delay},{tags}")
    return "\n".join(out) + "\n"


def result_to_json(result: SimResult) -> str:
    data = metricsmod.result_data(result)
    doc = {
        "meta": {
            "rounds": data.rounds,
            "rac_ids": list(data.rac_ids),
            "group_thresholds_km": list(result.config.group_thresholds_km),
            "seed": result.config.seed,
        },
        "topology": {
            "links": [
                {
                    "a": s.as_a, "b": s.as_b,
                    "lat_a": s.loc_a.lat_deg, "lon_a": s.loc_a.lon_deg,
                    "lat_b": s.loc_b.lat_deg, "lon_b": s.loc_b.lon_deg,
                    "bw": s.bandwidth_mbps, "rel": s.rel,
                }
                for s in result.topology.link_specs()
            ],
        },
        "paths": [
            {
                "rac": p.rac_id, "dest": p.dest_as, "origin": p.origin_as,
                "group": p.group_id, "digest": p.digest_hex, "hops": p.hops,
                "delay_ms": p.delay_ms,
                "start": [p.start.lat_deg, p.start.lon_deg],
                "end": [p.end.lat_deg, p.end.lon_deg],
                "as_path": list(p.as_path),
            }
            for p in data.paths
        ],
        "propagate_counts": [
            [alg, as_id, eif, rnd, count]
            for (alg, as_id, eif, rnd), count in sorted(data.propagate_counts.items())
        ],
        "pd": [
            {
                "source": src, "target": tgt,
                "accepted": [sorted(map(list, links)) for links in accepted],
            }
            for (src, tgt), accepted in sorted(data.pd_accepted.items())
        ],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def result_data_from_json(text: str) -> ResultData:
    doc = json.loads(text)
    specs = [
        LinkSpec(
            l["a"], l["b"],
            GeoPoint(l["lat_a"], l["lon_a"]), GeoPoint(l["lat_b"], l["lon_b"]),
            l["bw"], l["rel"],
        )
        for l in doc["topology"]["links"]
    ]
    topo = Topology(specs)
    paths = tuple(
        PathRecord(
            rac_id=p["rac"], dest_as=p["dest"], origin_as=p["origin"],
            group_id=p["group"], digest_hex=p["digest"], hops=p["hops"],
            delay_ms=p["delay_ms"],
            start=GeoPoint(*p["start"]), end=GeoPoint(*p["end"]),
            as_path=tuple(p["as_path"]),
        )
        for p in doc["paths"]
    )
    counts = {
        (alg, as_id, eif, rnd): count
        for alg, as_id, eif, rnd, count in doc["propagate_counts"]
    }
    pd_accepted = {
        (entry["source"], entry["target"]): tuple(
            frozenset(canon_link(a, b) for a, b in links) for links in entry["accepted"])
        for entry in doc["pd"]
    }
    return ResultData(
        topology=topo,
        rounds=doc["meta"]["rounds"],
        rac_ids=tuple(doc["meta"]["rac_ids"]),
        paths=paths,
        propagate_counts=counts,
        pd_accepted=pd_accepted,
    )


def cmd_run(args) -> int:
    config = load_config(args.config)
    result = run_sim(config)
    out = Path(args.out)
    _write_atomic(out / "events.log", result.event_log_text())
    _write_atomic(out / "registries.csv", _registry_csv(result))
    _write_atomic(out / "result.json", result_to_json(result))
    registered = sum(len(rows) for rows in result.registries.values())
    print(f"rounds={config.rounds} events={len(result.events)} registered={registered}")
    return EXIT_OK


# --- metrics ----------------------------------------------------------------------

def _load_result_data(result_dir: Path) -> ResultData:
    path = result_dir / "result.json"
    if not path.exists():
        raise MissingResult(f"no result.json under {result_dir}")
    return result_data_from_json(path.read_text())


def cmd_metrics(args) -> int:
    data = _load_result_data(Path(args.result))
    out = Path(args.out)
    if args.kind == "delay":
        baseline = args.baseline
        all_rows = []
        for alg in data.rac_ids:
            if alg == baseline:
                continue
            rows = metricsmod.delay_ratio_table(data, alg, baseline)
            all_rows.extend(rows)
            _write_atomic(out / f"cdf_delay_{alg}.csv",
                          metricsmod.cdf_csv(r.ratio for r in rows))
        _write_atomic(out / "delay_ratio.csv", metricsmod.delay_ratio_csv(all_rows))
        print(f"pairs={len(all_rows)}")
    elif args.kind == "tlf":
        rows = []
        pairs = sorted({
            (min(p.origin_as, p.dest_as), max(p.origin_as, p.dest_as))
            for p in data.paths
        })
        for alg in data.rac_ids:
            for s, t in pairs:
                tin = metricsmod.registered_tlf_input(data, alg, s, t)
                if tin is not None:
                    rows.append((s, t, alg, metricsmod.tlf(tin)))
        for (s, t) in sorted(data.pd_accepted):
            tin = metricsmod.pd_tlf_input(data, s, t)
            if tin is not None:
                rows.append((min(s, t), max(s, t), "PD", metricsmod.tlf(tin)))
        _write_atomic(out / "tlf.csv", metricsmod.tlf_csv(rows))
        algs = sorted({alg for _, _, alg, _ in rows})
        for alg in algs:
            _write_atomic(out / f"cdf_tlf_{alg}.csv",
                          metricsmod.cdf_csv(v for _, _, a, v in rows if a == alg))
        print(f"rows={len(rows)}")
    elif args.kind == "pcb":
        rows = metricsmod.pcb_count_distribution(data)
        _write_atomic(out / "pcb_counts.csv", metricsmod.pcb_counts_csv(rows))
        for alg in data.rac_ids:
            _write_atomic(out / f"cdf_pcb_{alg}.csv",
                          metricsmod.cdf_csv(r.count for r in rows if r.alg == alg))
        print(f"rows={len(rows)}")
    else:
        raise ConfigError(f"unknown metrics kind {args.kind!r}")
    return EXIT_OK


# --- entry point --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="irec",
        description="Deterministic inter-domain control-plane simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-topology", help="synthesize a geo-rel topology file")
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--avg-degree", type=float, required=True)
    gen.add_argument("--spread-km", type=float, default=500.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_gen_topology)

    prune = sub.add_parser("prune", help="keep the N highest-degree ASes")
    prune.add_argument("--in", dest="infile", required=True)
    prune.add_argument("--n", type=int, required=True)
    prune.add_argument("--out", required=True)
    prune.set_defaults(func=cmd_prune)

    runp = sub.add_parser("run", help="execute a simulation from a TOML config")
    runp.add_argument("--config", required=True)
    runp.add_argument("--out", required=True)
    runp.set_defaults(func=cmd_run)

    met = sub.add_parser("metrics", help="emit CSV/CDF files from a run directory")
    met.add_argument("--result", required=True)
    met.add_argument("--kind", choices=("delay", "tlf", "pcb"), required=True)
    met.add_argument("--baseline", default="1SP")
    met.add_argument("--out", required=True)
    met.set_defaults(func=cmd_metrics)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MissingResult as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_RESULT
    except (ConfigError, ParseError, DuplicateLink, InfeasibleParameters) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except IrecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
