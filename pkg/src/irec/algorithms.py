"""Built-in routing algorithms behind the standardized selection interface.

Every algorithm maps a candidate beacon set (one partition) plus a local
topology view to ranked per-egress selections for propagation and a ranked
received-path list for registration. Ties always break by (objective,
accumulated delay, digest) so runs are reproducible.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

from . import pcb as pcbmod
from .errors import MissingMetric
from .pcb import AlgorithmExt, AsId, InterfaceId, Pcb
from .programs import (
    AvoidLinks,
    Link,
    OBJ_MIN_HOPS,
    RoutingProgram,
    canon_link,
    serialize_program,
)

SelectionList = list[tuple[Pcb, tuple]]


@dataclass(frozen=True)
class AlgResult:
    per_egress: dict[InterfaceId, SelectionList]
    registration: SelectionList


@dataclass(frozen=True)
class _Cand:
    pcb: Pcb
    digest: bytes
    hops: int
    delay_ms: float | None
    links: frozenset[Link]
    ases: frozenset[AsId]
    arrival_if: InterfaceId


def _scan(candidates: list[Pcb], view) -> list[_Cand]:
    out = []
    for pcb in sorted(candidates, key=lambda p: p.digest()):
        try:
            delay = pcbmod.accumulated_delay(pcb)
        except MissingMetric:
            delay = None
        out.append(_Cand(
            pcb=pcb, digest=pcb.digest(), hops=pcb.hop_count(), delay_ms=delay,
            links=pcbmod.path_links(pcb, view.as_id),
            ases=frozenset(pcb.as_ids()),
            arrival_if=view.arrival_interface(pcb),
        ))
    return out


def _broadcast(selection: SelectionList, view) -> dict[InterfaceId, SelectionList]:
    if not selection:
        return {}
    return {eif: list(selection) for eif in view.egress_interfaces()}


def _hop_key(c: _Cand) -> tuple:
    return (c.hops, c.delay_ms if c.delay_ms is not None else float("inf"), c.digest)


def alg_ksp(k: int) -> Callable:
    """Minimum-hop selection keeping the k best paths per origin."""

    def run(candidates: list[Pcb], view, *, max_selected: int, state=None) -> AlgResult:
        cands = sorted(_scan(candidates, view), key=_hop_key)
        chosen = [(c.pcb, _hop_key(c)) for c in cands[: min(k, max_selected)]]
        return AlgResult(_broadcast(chosen, view), list(chosen))

    return run


alg_1sp = alg_ksp(1)


def alg_hd(candidates: list[Pcb], view, *, max_selected: int, state=None) -> AlgResult:
    """Greedy inter-domain link disjointness with cross-round memory.

    Per egress interface, repeatedly pick the candidate contributing the most
    links not yet selected on that egress (this round or earlier); stop when
    nothing fresh remains. Saturated egresses therefore go quiet in later
    rounds.
    """
    if state is None:
        state = {}
    cands = _scan(candidates, view)
    per_egress: dict[InterfaceId, SelectionList] = {}
    registration: dict[bytes, tuple[Pcb, tuple]] = {}
    for eif in view.egress_interfaces():
        peer = view.peer_as(eif)
        mem: set[Link] = state.setdefault(eif, set())
        chosen: SelectionList = []
        taken: set[bytes] = set()
        while len(chosen) < max_selected:
            best = None
            best_key = None
            for c in cands:
                if c.digest in taken or peer in c.ases:
                    continue
                fresh = len(c.links - mem)
                if fresh == 0:
                    continue
                key = (-fresh, c.hops, c.digest)
                if best_key is None or key < best_key:
                    best, best_key = c, key
            if best is None:
                break
            mem.update(best.links)
            taken.add(best.digest)
            chosen.append((best.pcb, best_key))
            registration.setdefault(best.digest, (best.pcb, _hop_key(best)))
        if chosen:
            per_egress[eif] = chosen
    reg = sorted(registration.values(), key=lambda e: e[1])[:max_selected]
    return AlgResult(per_egress, reg)


def _delay_key(c: _Cand) -> tuple:
    return (c.delay_ms, c.digest)


def alg_don(candidates: list[Pcb], view, *, max_selected: int, state=None) -> AlgResult:
    """Delay optimization on received paths; one selection for all egresses."""
    cands = [c for c in _scan(candidates, view) if c.delay_ms is not None]
    cands.sort(key=_delay_key)
    chosen = [(c.pcb, _delay_key(c)) for c in cands[:max_selected]]
    return AlgResult(_broadcast(chosen, view), list(chosen))


def alg_dob(candidates: list[Pcb], view, *, max_selected: int, state=None) -> AlgResult:
    """Delay optimization on extended paths, ranked per egress interface.

    A candidate's rank at egress e is its received delay plus the local
    crossing from its arrival interface to e; candidates whose extension
    would revisit the egress peer are not eligible there. Registration is by
    received delay, which is what endpoint-facing paths are worth here.
    """
    cands = [c for c in _scan(candidates, view) if c.delay_ms is not None]
    per_egress: dict[InterfaceId, SelectionList] = {}
    for eif in view.egress_interfaces():
        peer = view.peer_as(eif)
        scored = []
        for c in cands:
            if peer in c.ases:
                continue
            ext = c.delay_ms + view.intra_delay_ms(c.arrival_if, eif)
            scored.append(((ext, c.digest), c.pcb))
        scored.sort()
        if scored:
            per_egress[eif] = [(pcb, key) for key, pcb in scored[:max_selected]]
    registration = [(c.pcb, _delay_key(c)) for c in sorted(cands, key=_delay_key)[:max_selected]]
    return AlgResult(per_egress, registration)


BUILTIN_ALGORITHMS: Mapping[str, Callable] = {
    "1SP": alg_1sp,
    "5SP": alg_ksp(5),
    "LEG20": alg_ksp(20),
    "HD": alg_hd,
    "DON": alg_don,
    "DOB": alg_dob,
}

BUILTIN_TAGS: Mapping[str, frozenset[str]] = {
    "1SP": frozenset({"hops"}),
    "5SP": frozenset({"hops"}),
    "LEG20": frozenset({"hops"}),
    "HD": frozenset({"disjointness"}),
    "DON": frozenset({"delay"}),
    "DOB": frozenset({"delay", "granularity"}),
}


# --- pull-based disjointness controller ---------------------------------------

@dataclass(frozen=True)
class PdState:
    """Origin-side state of one iterative disjoint-path construction."""

    source_as: AsId
    target_as: AsId
    goal_k: int = 20
    timeout_rounds: int = 30
    accepted: tuple[Pcb, ...] = ()
    accepted_links: tuple[frozenset[Link], ...] = ()
    avoid_links: frozenset[Link] = frozenset()
    iteration: int = 0
    iteration_started: int | None = None
    done: bool = False

    @property
    def seeded(self) -> bool:
        return self.iteration > 0


def pd_algorithm_id(source_as: AsId, target_as: AsId, iteration: int) -> bytes:
    return b"PD" + struct.pack(">QQH", source_as, target_as, iteration)


def pd_program(avoid_links: frozenset[Link]) -> RoutingProgram:
    """Shortest path avoiding every link already covered by accepted paths."""
    return RoutingProgram(
        filters=(AvoidLinks(frozenset(avoid_links)),),
        objectives=(OBJ_MIN_HOPS,),
        select_k=1,
    )


@dataclass(frozen=True)
class PdOrigination:
    """Directive for the egress gateway: publish and beacon this program."""

    algorithm: AlgorithmExt
    program_bytes: bytes
    target_as: AsId


def _pd_originate(state: PdState, now: int) -> tuple[PdState, PdOrigination]:
    prog = pd_program(state.avoid_links)
    raw = serialize_program(prog)
    ext = AlgorithmExt(
        pd_algorithm_id(state.source_as, state.target_as, state.iteration),
        prog.code_hash(),
    )
    return replace(state, iteration_started=now), PdOrigination(ext, raw, state.target_as)


def pd_seed(state: PdState, pcb: Pcb, links: frozenset[Link],
            now: int) -> tuple[PdState, PdOrigination]:
    """Install the first accepted path and start iteration 1."""
    seeded = replace(
        state,
        accepted=(pcb,),
        accepted_links=(links,),
        avoid_links=frozenset(links),
        iteration=1,
    )
    return _pd_originate(seeded, now)


def pd_step(state: PdState, returned: list[Pcb], now: int) -> tuple[PdState, PdOrigination | None]:
    """Advance one round: accept the first-received return or time out.

    `returned` must hold only this iteration's returns; within one round,
    first-received means minimum accumulated delay, then digest.
    """
    if state.done or not state.seeded:
        return state, None
    if returned:
        def order(p: Pcb) -> tuple:
            try:
                return (pcbmod.accumulated_delay(p), p.digest())
            except MissingMetric:
                return (float("inf"), p.digest())

        best = min(returned, key=order)
        links = pcbmod.path_links(best, state.target_as)
        state = replace(
            state,
            accepted=state.accepted + (best,),
            accepted_links=state.accepted_links + (links,),
            avoid_links=state.avoid_links | links,
            iteration=state.iteration + 1,
            iteration_started=None,
        )
        if len(state.accepted) >= state.goal_k:
            return replace(state, done=True), None
        return _pd_originate(state, now)
    if state.iteration_started is not None and now - state.iteration_started >= state.timeout_rounds:
        return replace(state, done=True, iteration_started=None), None
    return state, None
