"""Reference engines used to check the closed-form models and the search.

Nothing here shares code with the formulas it checks beyond the data types:
the simulator schedules transfers and compute explicitly with exact
rationals, the loop nest counts cycles one step at a time, and the
brute-force search scores every lattice point through the full evaluation.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, TextIO

from .analytic import Dataflow, GenericPlan
from .errors import InfeasibleError
from .model_ir import FpgaSpec, LayerKind, LayerSpec, NetworkModel

MAX_BRUTE_FORCE_POINTS = 10**6


@dataclass(frozen=True)
class SimEvent:
    kind: str  # weight_load | ifm_load | compute | ofm_store
    group_index: int
    start: Fraction
    end: Fraction
    image: int = 0


SIM_TRACE_FIELDS = ("kind", "group", "image", "start", "end")


def _q(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def _transfer(bits: int, bw) -> Fraction:
    if bits == 0:
        return Fraction(0)
    bw = _q(bw)
    if bw == 0:
        raise InfeasibleError("transfer with zero bandwidth")
    return Fraction(bits) / bw


def _ceil(a: int, b: int) -> int:
    return (a + b - 1) // b


def loop_nest_cycles(layer: LayerSpec, cpf: int, kpf: int) -> int:
    """Counts the steps of the tiled loop nest one iteration at a time."""
    k_tiles = 1 if layer.kind is LayerKind.POOL else _ceil(layer.k, kpf)
    steps = 0
    for _h in range(layer.h):
        for _w in range(layer.w):
            for _r in range(layer.r):
                for _s in range(layer.s):
                    for _ct in range(0, layer.c, cpf):
                        for _kt in range(k_tiles):
                            steps += 1
    return steps


@dataclass(frozen=True)
class _Item:
    group: int
    image: int
    weight: Fraction  # 0 when the group's weights are already loaded
    ifm: Fraction
    compute: Fraction
    ofm: Fraction
    last_of_group: bool


def _items(layer: LayerSpec, plan: GenericPlan, freq, batch: int) -> list[_Item]:
    freq = _q(freq)
    k_tiles = 1 if layer.kind is LayerKind.POOL else _ceil(layer.k, plan.kpf)
    cycles = layer.h * layer.w * layer.r * layer.s * _ceil(layer.c, plan.cpf) * k_tiles
    comp = Fraction(cycles) / freq
    w_all = _transfer(layer.weight_bits, plan.bw_w)
    ifm = _transfer(layer.input_bits, plan.bw_ifm)
    ofm = _transfer(layer.output_bits, plan.bw_ofm)
    items = []
    if plan.dataflow is Dataflow.WS:
        groups = 1
        if layer.weight_bits:
            groups = max(1, _ceil(2 * layer.weight_bits, plan.cap_wbuff))
        # each weight group sweeps the whole batch's feature maps
        for g in range(groups):
            items.append(_Item(g, 0, w_all / groups, batch * ifm, batch * comp / groups,
                               batch * ofm, True))
        return items
    groups = max(1, _ceil(2 * layer.output_bits, plan.cap_abuff))
    resident = 2 * max(layer.input_bits, layer.output_bits) <= plan.cap_abuff
    if resident:
        ifm = ofm = Fraction(0)
    for g in range(groups):
        for b in range(batch):
            items.append(_Item(g, b, w_all if b == 0 else Fraction(0), ifm / groups,
                               comp / groups, ofm / groups, b == batch - 1))
    return items


def simulate_generic_layer(layer: LayerSpec, plan: GenericPlan, freq, batch: int = 1):
    """Explicit double-buffered schedule of one layer on the generic engine.

    Weight, input and output transfers run on their own bandwidth shares and
    the compute array is a fourth resource; each resource handles one event at
    a time.  Buffers hold two tiles, so a load may run at most one item ahead
    of compute and compute may run at most one item ahead of the store.
    Returns (makespan, events) with exact rational times.
    """
    items = _items(layer, plan, freq, batch)
    events: list[SimEvent] = []
    w_free = i_free = c_free = o_free = Fraction(0)
    comp_end: list[Fraction] = []
    store_end: list[Fraction] = []
    group_done: dict[int, Fraction] = {}  # compute end of a group's last item
    group_loaded: dict[int, Fraction] = {}
    zero = Fraction(0)
    for k, it in enumerate(items):
        if it.image == 0 or plan.dataflow is Dataflow.WS:
            # weight slot reused from two groups back
            slot = group_done.get(it.group - 2, zero)
            start = max(w_free, slot)
            end = start + it.weight
            if it.weight:
                events.append(SimEvent("weight_load", it.group, start, end, it.image))
                w_free = end
            group_loaded[it.group] = end
        slot = comp_end[k - 2] if k >= 2 else zero
        start = max(i_free, slot)
        i_end = start + it.ifm
        if it.ifm:
            events.append(SimEvent("ifm_load", it.group, start, i_end, it.image))
            i_free = i_end
        out_slot = store_end[k - 2] if k >= 2 else zero
        start = max(c_free, group_loaded[it.group], i_end, out_slot)
        end = start + it.compute
        events.append(SimEvent("compute", it.group, start, end, it.image))
        c_free = end
        comp_end.append(end)
        if it.last_of_group:
            group_done[it.group] = end
        start = max(o_free, end)
        o_end = start + it.ofm
        if it.ofm:
            events.append(SimEvent("ofm_store", it.group, start, o_end, it.image))
            o_free = o_end
        store_end.append(o_end)
    makespan = max((e.end for e in events), default=zero)
    return makespan, events


def group_count(layer: LayerSpec, plan: GenericPlan) -> int:
    """Number of rounds the simulator schedules (feature-map or weight groups)."""
    if plan.dataflow is Dataflow.WS:
        return max(1, _ceil(2 * layer.weight_bits, plan.cap_wbuff)) if layer.weight_bits else 1
    return max(1, _ceil(2 * layer.output_bits, plan.cap_abuff))


def write_sim_trace(events: Iterable[SimEvent], out: TextIO) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(SIM_TRACE_FIELDS)
    for e in events:
        writer.writerow((e.kind, e.group_index, e.image, float(e.start), float(e.end)))


def enumerate_batch_schedule(layer_latencies, batch: int):
    """Sequential layers, images back to back within each layer.

    Returns (total, [(layer, image, start, end), ...]).
    """
    t = Fraction(0)
    slots = []
    for li, lat in enumerate(layer_latencies):
        for b in range(batch):
            slots.append((li, b, t, t + _q(lat)))
            t += _q(lat)
    return t, slots


# --------------------------------------------------------------------------
# brute force search


def brute_force_points(n_layers: int, grid: int, batch_min: int, batch_max: int) -> int:
    batches = batch_max - batch_min + 1
    interior = max(n_layers - 1, 0)
    return batches * (2 + interior * (grid + 1) ** 3) if n_layers else batches


def brute_force_dse(network: NetworkModel, fpga: FpgaSpec, grid: int = 4, batch_min: int = 1,
                    batch_max: int = 2, bw_grid: int = 4, strategy: str = "auto",
                    limit: int = MAX_BRUTE_FORCE_POINTS):
    """Scores every lattice point and returns the best ArchitectureConfig."""
    from .dse import Evaluator, ResourceAllocationVector

    n = len(network.layers)
    total = brute_force_points(n, grid, batch_min, batch_max)
    if total >= limit:
        raise ValueError(f"grid too large for brute force: {total} points (limit {limit})")
    ev = Evaluator(network, fpga, bw_grid, strategy)
    best = None
    reasons = {}
    for sp in range(n + 1):
        for batch in range(batch_min, batch_max + 1):
            if sp in (0, n):
                candidates = [ResourceAllocationVector.pure(sp, batch, n)]
            else:
                candidates = (
                    ResourceAllocationVector(sp, batch, *(Fraction(v, grid) for v in point))
                    for point in itertools.product(range(grid + 1), repeat=3)
                )
            for rav in candidates:
                cfg = ev.evaluate(rav)
                if not cfg.feasible:
                    reasons.setdefault(sp, cfg.reason)
                    continue
                if best is None or cfg.key > best.key:
                    best = cfg
    if best is None:
        raise InfeasibleError(
            f"no feasible configuration for {network.name} on {fpga.name}", {"per_sp": reasons}
        )
    return best
