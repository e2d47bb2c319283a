"""Resource allocation for the two structures.

Pipeline: integer (CPF, KPF) per stage balancing stage latencies under a DSP
budget, then line buffers, weight residency and stream bandwidth.
Generic: engine size from the DSP budget, then buffer capacities and the
three-way bandwidth split picked on a quantized grid.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

from ._kernels import STRATEGY_CODES, search_generic
from .analytic import (
    Dataflow,
    GenericPlan,
    PipelineStagePlan,
    ceil_div,
    compute_cycles,
    dsp_cost,
    pipeline_stream_bits,
)
from .errors import InfeasibleError
from .model_ir import LayerKind, LayerSpec

DEFAULT_GRID = 16
BRAM_BLOCK_BITS = 36 * 1024  # one 36Kb block RAM


@dataclass(frozen=True)
class PipelinePlanSet:
    """Stage plans plus the memory plan of the pipeline structure.

    ``resident[i]`` tells whether stage i keeps all its weights on chip;
    otherwise it streams ``stream_bits[i]`` per batch over ``stage_bw[i]``.
    """

    stages: tuple[PipelineStagePlan, ...]
    dsp_used: int
    bram_used: int = 0
    bw_used: float = 0.0
    resident: tuple[bool, ...] = ()
    stream_bits: tuple[int, ...] = ()
    stage_bw: tuple[float, ...] = ()
    max_cycles: Fraction = Fraction(0)
    continuous_bound: Fraction = Fraction(0)
    equal_split_bound: Fraction = Fraction(0)


# --------------------------------------------------------------------------
# pipeline compute balancing


def _divisors(n: int) -> list[int]:
    small, large = [], []
    for d in range(1, math.isqrt(n) + 1):
        if n % d == 0:
            small.append(d)
            if d != n // d:
                large.append(n // d)
    return small + large[::-1]


@lru_cache(maxsize=None)
def stage_options(c: int, k: int) -> tuple[tuple[int, ...], dict[int, tuple[int, int]]]:
    """Achievable CPF*KPF products with divisor-feasible factors.

    Maps each product to its lexicographically smallest (CPF, KPF).
    """
    best: dict[int, tuple[int, int]] = {}
    kdivs = _divisors(k)
    for cpf in _divisors(c):
        for kpf in kdivs:
            p = cpf * kpf
            if p not in best or (cpf, kpf) < best[p]:
                best[p] = (cpf, kpf)
    return tuple(sorted(best)), best


def _pool_stage(index: int, layer: LayerSpec) -> PipelineStagePlan:
    # comparators only: full channel parallelism, no DSPs
    return PipelineStagePlan(index, layer.c, 1)


def balance_pipeline(
    layers: Sequence[LayerSpec], dsp_budget: int, freq=1, alpha: int = 2
) -> PipelinePlanSet:
    """Divisor-feasible parallelism minimizing the slowest stage's latency.

    Seeds every stage proportionally to its MACs, turns the seed's bottleneck
    latency into a per-stage floor, then upgrades whichever stage is slowest
    one product step at a time while the budget allows.  Finally each stage is
    trimmed to the smallest product that still meets the final bottleneck.
    The result is min-max optimal over the divisor lattice.
    """
    layers = list(layers)
    weighted = [i for i, layer in enumerate(layers) if layer.has_weights]
    if len(weighted) * dsp_cost(1, alpha) > dsp_budget:
        raise InfeasibleError(
            f"{dsp_budget} DSPs cannot give each of {len(weighted)} stages one MAC unit",
            {"dsp_budget": dsp_budget, "stages": len(weighted)},
        )
    options = {i: stage_options(layers[i].c, layers[i].k) for i in weighted}
    lanes = Fraction(dsp_budget * alpha, 2)

    def cycles(i, p):
        return Fraction(layers[i].macs, p)

    fixed = {
        i: Fraction(layer.macs, layer.c)
        for i, layer in enumerate(layers)
        if not layer.has_weights
    }
    total_macs = sum(layers[i].macs for i in weighted)

    def cost(alloc):
        return sum(dsp_cost(p, alpha) for p in alloc.values())

    def floor_product(i, target):
        products = options[i][0]
        pos = bisect.bisect_right(products, target) - 1
        return products[max(pos, 0)]

    def min_product(i, bound):
        # smallest product whose latency is <= bound
        products = options[i][0]
        for p in products:
            if cycles(i, p) <= bound:
                return p
        return products[-1]

    def bottleneck(alloc):
        lat = {**fixed, **{i: cycles(i, p) for i, p in alloc.items()}}
        worst = max(lat.values())
        return min(i for i, v in lat.items() if v == worst), worst

    alloc = {i: 1 for i in weighted}
    if weighted:
        seed = {i: floor_product(i, lanes * layers[i].macs / total_macs) for i in weighted}
        if cost(seed) <= dsp_budget:
            _, upper = bottleneck(seed)
            alloc = {i: min_product(i, upper) for i in weighted}

    while weighted:
        j, _ = bottleneck(alloc)
        if j not in alloc:
            break
        products = options[j][0]
        pos = products.index(alloc[j])
        if pos + 1 == len(products):
            break
        step = dsp_cost(products[pos + 1], alpha) - dsp_cost(alloc[j], alpha)
        if cost(alloc) + step > dsp_budget:
            break
        alloc[j] = products[pos + 1]

    _, worst = bottleneck(alloc) if (alloc or fixed) else (None, Fraction(0))
    alloc = {i: min_product(i, worst) for i in weighted}

    stages = []
    for i, layer in enumerate(layers):
        if i in alloc:
            cpf, kpf = options[i][1][alloc[i]]
            stages.append(PipelineStagePlan(i, cpf, kpf))
        else:
            stages.append(_pool_stage(i, layer))
    n = max(len(weighted), 1)
    return PipelinePlanSet(
        stages=tuple(stages),
        dsp_used=cost(alloc),
        max_cycles=worst,
        continuous_bound=Fraction(total_macs) / lanes,
        equal_split_bound=Fraction(max((layers[i].macs for i in weighted), default=0) * n) / lanes,
    )


# --------------------------------------------------------------------------
# pipeline memory


def line_buffer_bits(layer: LayerSpec, batch: int = 1) -> int:
    """Ping-pong buffer of R input rows; batches interleave rows, one set each."""
    return 2 * layer.r * layer.input_w * layer.c * layer.dw * batch


def weight_tile_bits(layer: LayerSpec, stage: PipelineStagePlan) -> int:
    """Ping-pong tile feeding a stage that streams its weights."""
    if not layer.has_weights:
        return 0
    return 2 * stage.cpf * stage.kpf * layer.r * layer.s * layer.ww


def size_pipeline_buffers(
    layers: Sequence[LayerSpec],
    plans: Sequence[PipelineStagePlan] | None = None,
    batch: int = 1,
    bram_budget: int | None = None,
) -> int:
    per_stage = {layer.name: line_buffer_bits(layer, batch) for layer in layers}
    total = sum(per_stage.values())
    if bram_budget is not None and total > bram_budget:
        raise InfeasibleError(
            f"pipeline line buffers need {total} bits, budget is {bram_budget}",
            {"stages": per_stage, "required": total, "budget": bram_budget},
        )
    return total


def _blocks(bits: int, block_bits: int) -> int:
    return ceil_div(bits, block_bits)


def _knapsack(costs: list[int], values: list[int], capacity: int) -> list[bool]:
    """Exact 0/1 knapsack over integer costs; ties keep an item out."""
    dp = np.zeros(capacity + 1, dtype=np.int64)
    takes = []
    for w, v in zip(costs, values):
        if w > capacity:
            takes.append(None)
            continue
        cand = np.full(capacity + 1, -1, dtype=np.int64)
        cand[w:] = dp[: capacity + 1 - w] + v
        take = cand > dp
        dp = np.where(take, cand, dp)
        takes.append(take)
    chosen = [False] * len(costs)
    c = capacity
    for idx in range(len(costs) - 1, -1, -1):
        take = takes[idx]
        if take is not None and take[c]:
            chosen[idx] = True
            c -= costs[idx]
    return chosen


def plan_pipeline_memory(
    layers: Sequence[LayerSpec],
    plan: PipelinePlanSet,
    bram_budget: int,
    bw_budget,
    batch: int = 1,
    block_bits: int = BRAM_BLOCK_BITS,
) -> PipelinePlanSet:
    """Choose which stages keep weights on chip and split the stream bandwidth.

    Every buffer occupies whole BRAM blocks.  Line buffers are mandatory, and
    so is each stage's streaming tile unless its full weights are no larger.
    Leftover blocks make stages resident by an exact knapsack maximizing the
    stream traffic removed.  Streamed stages share the bandwidth in proportion
    to their traffic so they all finish their transfers together.
    """
    layers = list(layers)
    line = [_blocks(line_buffer_bits(layer, batch), block_bits) for layer in layers]
    tiles = [_blocks(weight_tile_bits(layer, st), block_bits) for layer, st in zip(layers, plan.stages)]
    wblocks = [_blocks(layer.weight_bits, block_bits) for layer in layers]
    mandatory = [lb + min(t, w) for lb, t, w in zip(line, tiles, wblocks)]
    budget = bram_budget // block_bits
    if sum(mandatory) > budget:
        raise InfeasibleError(
            f"pipeline buffers need {sum(mandatory)} BRAM blocks, budget is {budget}",
            {
                "stages": {layer.name: m * block_bits for layer, m in zip(layers, mandatory)},
                "required": sum(mandatory) * block_bits,
                "budget": bram_budget,
            },
        )
    resident = [not layer.has_weights or w <= t for layer, t, w in zip(layers, tiles, wblocks)]
    candidates = [i for i, res in enumerate(resident) if not res]
    chosen = _knapsack(
        [wblocks[i] - tiles[i] for i in candidates],
        [pipeline_stream_bits(layers[i]) for i in candidates],
        budget - sum(mandatory),
    )
    for i, take in zip(candidates, chosen):
        resident[i] = take
    used = sum(
        lb + (w if res and layer.has_weights else t)
        for layer, lb, t, w, res in zip(layers, line, tiles, wblocks, resident)
    )
    stream = [0 if res else pipeline_stream_bits(layer) for layer, res in zip(layers, resident)]
    total_stream = sum(stream)
    stage_bw = [bw_budget * bits / total_stream if bits else 0.0 for bits in stream]
    return PipelinePlanSet(
        stages=plan.stages,
        dsp_used=plan.dsp_used,
        bram_used=used * block_bits,
        bw_used=bw_budget if total_stream else 0.0,
        resident=tuple(resident),
        stream_bits=tuple(stream),
        stage_bw=tuple(stage_bw),
        max_cycles=plan.max_cycles,
        continuous_bound=plan.continuous_bound,
        equal_split_bound=plan.equal_split_bound,
    )


# --------------------------------------------------------------------------
# generic engine


def _pow2_upto(n: int) -> list[int]:
    out, v = [], 1
    while True:
        out.append(v)
        if v >= n:
            return out
        v *= 2


def choose_generic_engine(
    layers: Sequence[LayerSpec], dsp_budget: int, alpha: int = 2
) -> tuple[int, int]:
    """Power-of-two CPF x KPF array minimizing total compute cycles.

    Ties go to the lexicographically smallest (CPF, KPF).
    """
    if dsp_budget < dsp_cost(1, alpha):
        raise InfeasibleError(f"{dsp_budget} DSPs cannot build a generic engine", {"dsp_budget": dsp_budget})
    max_c = max(layer.c for layer in layers)
    max_k = max(layer.k for layer in layers if layer.kind is not LayerKind.POOL) if any(
        layer.has_weights for layer in layers) else 1
    best = None
    for cpf in _pow2_upto(max_c):
        for kpf in _pow2_upto(max_k):
            if dsp_cost(cpf * kpf, alpha) > dsp_budget:
                break
            cycles = sum(compute_cycles(layer, cpf, kpf) for layer in layers)
            if best is None or cycles < best[0]:
                best = (cycles, cpf, kpf)
    return best[1], best[2]


def _strategy_flags(strategy: str) -> tuple[bool, bool, bool]:
    strategy = str(strategy).lower()
    if strategy == "auto":
        # 2-IS shares strategy 1's formulas with a smaller feature buffer, so it
        # can only tie strategy 1; skipping it leaves the optimum unchanged
        return True, False, True
    if strategy not in STRATEGY_CODES:
        raise ValueError(f"unknown strategy {strategy!r}; use 1, 2is, 2ws or auto")
    return strategy == "1", strategy == "2is", strategy == "2ws"


@dataclass(frozen=True)
class GenericLayerArrays:
    """Per-layer integer constants consumed by the search kernel."""

    cycles: np.ndarray
    in_bits: np.ndarray
    out_bits: np.ndarray
    w_bits: np.ndarray
    row_bits: np.ndarray
    slice_bits: np.ndarray
    dw: np.ndarray


def layer_arrays(layers: Sequence[LayerSpec], cpf: int, kpf: int) -> GenericLayerArrays:
    as_i64 = lambda values: np.array(values, dtype=np.int64)  # noqa: E731
    return GenericLayerArrays(
        cycles=as_i64([compute_cycles(layer, cpf, kpf) for layer in layers]),
        in_bits=as_i64([layer.input_bits for layer in layers]),
        out_bits=as_i64([layer.output_bits for layer in layers]),
        w_bits=as_i64([layer.weight_bits for layer in layers]),
        row_bits=as_i64([layer.w * layer.k * layer.dw for layer in layers]),
        slice_bits=as_i64(
            [layer.r * layer.s * layer.c * layer.ww if layer.has_weights else 0 for layer in layers]
        ),
        dw=as_i64([layer.dw for layer in layers]),
    )


@dataclass(frozen=True)
class GenericSearchResult:
    plan: GenericPlan
    total_latency: float
    memory_latency: float


def search_generic_plan(
    arrays: GenericLayerArrays,
    cpf: int,
    kpf: int,
    bram_budget: int,
    bw_budget: float,
    freq: float,
    batch: int = 1,
    strategy: str = "auto",
    grid: int = DEFAULT_GRID,
) -> GenericSearchResult | None:
    """Best buffer/bandwidth plan on the grid, or None if nothing is feasible."""
    s1, s2is, s2ws = _strategy_flags(strategy)
    lc_b = batch * (arrays.cycles / float(freq))
    code, cap_a, i, j, total, mem = search_generic(
        lc_b, arrays.in_bits, arrays.out_bits, arrays.w_bits, arrays.row_bits,
        arrays.slice_bits, arrays.dw, float(batch), int(bram_budget), float(bw_budget),
        int(grid), s1, s2is, s2ws,
    )
    if code < 0:
        return None
    bw = float(bw_budget)
    plan = GenericPlan(
        cpf=cpf,
        kpf=kpf,
        strategy=1 if code == 0 else 2,
        dataflow=Dataflow.WS if code == 2 else Dataflow.IS,
        cap_abuff=int(cap_a),
        cap_wbuff=0 if code == 0 else int(bram_budget) - int(cap_a),
        bw_w=bw * i / grid,
        bw_ifm=bw * j / grid,
        bw_ofm=bw * (grid - i - j) / grid,
    )
    return GenericSearchResult(plan, total, mem)


def partition_generic_resources(
    layers: Sequence[LayerSpec],
    bram_budget: int,
    bw_budget: float,
    strategy: str = "auto",
    *,
    dsp_budget: int,
    freq: float,
    batch: int = 1,
    alpha: int = 2,
    grid: int = DEFAULT_GRID,
) -> GenericPlan:
    """Engine, buffer capacities and bandwidth split minimizing the batch latency.

    Buffer split (strategy 2) and bandwidth split both move in steps of
    ``1/grid`` of their budget.  Ties prefer the smaller memory-side latency,
    then strategy 1 over 2, then smaller feature buffers, then the
    lexicographically smallest (weight, ifm) bandwidth shares.
    """
    if bram_budget <= 0 or bw_budget <= 0:
        raise InfeasibleError("generic structure needs positive BRAM and bandwidth budgets")
    cpf, kpf = choose_generic_engine(layers, dsp_budget, alpha)
    result = search_generic_plan(
        layer_arrays(layers, cpf, kpf), cpf, kpf, bram_budget, bw_budget, freq, batch, strategy, grid
    )
    if result is None:
        raise InfeasibleError(
            f"no feasible generic plan with {bram_budget} BRAM bits and {bw_budget:g} bits/s "
            f"at grid 1/{grid}",
            {"bram_budget": bram_budget, "bw_budget": bw_budget},
        )
    return result.plan


def strategy_configs(bram_budget: int, strategy: str, grid: int):
    """(strategy, dataflow, cap_abuff, cap_wbuff) tuples in search order."""
    s1, s2is, s2ws = _strategy_flags(strategy)
    configs = []
    if s1:
        configs.append((1, Dataflow.IS, bram_budget, 0))
    for flag, flow in ((s2is, Dataflow.IS), (s2ws, Dataflow.WS)):
        if flag:
            for a in range(1, grid):
                cap_a = bram_budget * a // grid
                configs.append((2, flow, cap_a, bram_budget - cap_a))
    return configs


def bandwidth_splits(grid: int):
    for i in range(grid + 1):
        for j in range(grid + 1 - i):
            yield i, j, grid - i - j


__all__ = [
    "DEFAULT_GRID",
    "PipelinePlanSet",
    "balance_pipeline",
    "bandwidth_splits",
    "ceil_div",
    "choose_generic_engine",
    "line_buffer_bits",
    "partition_generic_resources",
    "plan_pipeline_memory",
    "search_generic_plan",
    "size_pipeline_buffers",
    "stage_options",
    "strategy_configs",
]
