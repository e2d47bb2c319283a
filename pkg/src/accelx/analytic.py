"""Closed-form latency, throughput and efficiency models.

Every function accepts ints, floats or :class:`fractions.Fraction` and keeps
whatever arithmetic it is given, so the formulas can be checked exactly with
rationals and run fast with floats inside the search.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

from .errors import InfeasibleError, ModelConsistencyError
from .model_ir import LayerKind, LayerSpec

GIGA = 10**9


class Dataflow(str, enum.Enum):
    IS = "is"  # input stationary
    WS = "ws"  # weight stationary


class Regime(str, enum.Enum):
    RESIDENT = "resident"  # fmaps on chip: max(L_comp, L_w*G_fm)
    SWAPPED = "swapped"  # fmaps swapped: max(L_comp, L_w*G_fm, L_ifm, L_ofm)
    WEIGHT_STATIONARY = "ws"  # max(L_comp, L_w, L_ifm*G_w, L_ofm*G_w)
    PIPELINE = "pipeline"


@dataclass(frozen=True)
class PipelineStagePlan:
    layer_index: int
    cpf: int
    kpf: int

    def __post_init__(self):
        if self.cpf < 1 or self.kpf < 1:
            raise ValueError(f"parallelism must be >= 1, got ({self.cpf}, {self.kpf})")

    @property
    def parallelism(self) -> int:
        return self.cpf * self.kpf


def check_divisors(layer: LayerSpec, stage: PipelineStagePlan) -> None:
    if layer.c % stage.cpf or layer.k % stage.kpf:
        raise ValueError(
            f"stage for '{layer.name}': CPF={stage.cpf} must divide C={layer.c} "
            f"and KPF={stage.kpf} must divide K={layer.k}"
        )


@dataclass(frozen=True)
class GenericPlan:
    """Generic engine configuration.

    Strategy 1 spends all BRAM on the feature/accumulation buffer
    (``cap_abuff``) and always runs input stationary.  Strategy 2 also keeps a
    weight buffer (``cap_wbuff``) and may run either dataflow.  Buffer sizes
    are in bits, bandwidths in bits/s.
    """

    cpf: int
    kpf: int
    strategy: int
    dataflow: Dataflow
    cap_abuff: int
    cap_wbuff: int
    bw_w: float
    bw_ifm: float
    bw_ofm: float

    def __post_init__(self):
        object.__setattr__(self, "dataflow", Dataflow(self.dataflow))
        if self.cpf < 1 or self.kpf < 1:
            raise ValueError("engine parallelism must be >= 1")
        if self.strategy not in (1, 2):
            raise ValueError(f"strategy must be 1 or 2, got {self.strategy!r}")
        if self.strategy == 1 and (self.dataflow is not Dataflow.IS or self.cap_wbuff):
            raise ValueError("strategy 1 is input stationary with no weight buffer")
        if self.cap_abuff < 0 or self.cap_wbuff < 0:
            raise ValueError("buffer capacities must be non-negative")
        if min(self.bw_w, self.bw_ifm, self.bw_ofm) < 0:
            raise ValueError("bandwidth shares must be non-negative")

    @property
    def label(self) -> str:
        return "1" if self.strategy == 1 else f"2{self.dataflow.value}"

    @property
    def bram_bits(self) -> int:
        return self.cap_abuff + self.cap_wbuff

    @property
    def bandwidth(self):
        return self.bw_w + self.bw_ifm + self.bw_ofm


@dataclass(frozen=True)
class LayerPerf:
    name: str
    l_comp: float  # per image
    l_w: float  # one full weight transfer
    l_ifm: float  # per image
    l_ofm: float  # per image
    l_layer: float  # whole batch through this layer / stage
    g_fm: int
    g_w: int
    regime: Regime


@dataclass(frozen=True)
class PerfEstimate:
    """Performance of one structure (or the composed system) for a batch.

    ``total_latency`` is the time one batch spends in the structure: the sum
    of per-layer latencies for the generic engine, the fill-to-drain latency
    for the pipeline.
    """

    per_layer: tuple[LayerPerf, ...]
    total_latency: float
    throughput_inf_s: float
    throughput_gops: float
    dsp_efficiency: float
    batch: int
    dsp_used: int
    bram_used: int
    bw_used: float


# --------------------------------------------------------------------------
# shared formula core


def _div(num, den):
    if num == 0:
        return 0 * den if not isinstance(den, int) else 0
    if den == 0:
        return math.inf
    return num / den


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def dsp_cost(parallel_macs: int, alpha: int) -> int:
    """DSPs needed for ``parallel_macs`` MAC lanes: one lane per DSP at α=2."""
    return ceil_div(2 * parallel_macs, alpha)


def pipeline_stage_latency(layer: LayerSpec, stage: PipelineStagePlan, freq):
    """Compute latency of one image through a dedicated stage."""
    return layer.macs / (stage.cpf * stage.kpf * freq)


def pipeline_throughput(stage_latencies: Sequence, batch: int):
    """Inferences per second of a pipeline whose stages take ``stage_latencies``
    to process a batch of ``batch`` images."""
    if not stage_latencies:
        raise ValueError("pipeline has no stages")
    if batch < 1:
        raise ValueError("batch must be >= 1")
    return _div(batch, max(stage_latencies))


def dsp_efficiency(achieved_gops, alpha: int, dsp_used: int, freq):
    """Achieved GOP/s over the peak of the allocated DSPs (2 ops per MAC)."""
    if alpha <= 0 or dsp_used <= 0 or freq <= 0:
        raise ValueError("alpha, dsp_used and freq must be positive")
    effi = achieved_gops * GIGA / (alpha * dsp_used * freq)
    if effi > 1 and (not isinstance(effi, float) or effi > 1 + 1e-9):
        raise ModelConsistencyError(f"DSP efficiency {float(effi):.6f} exceeds 1")
    return effi


def fmap_groups(layer: LayerSpec, cap_abuff: int) -> int:
    """Feature-map groups: output fmap over half the (ping-pong) buffer."""
    if cap_abuff < 2 * layer.dw:
        raise ValueError(f"cap_abuff={cap_abuff} holds no {layer.dw}-bit element per half")
    return max(1, ceil_div(2 * layer.output_bits, cap_abuff))


def weight_groups(layer: LayerSpec, cap_wbuff: int) -> int:
    if not layer.weight_bits:
        return 1
    if cap_wbuff < 2 * layer.ww:
        raise ValueError(f"cap_wbuff={cap_wbuff} holds no {layer.ww}-bit weight per half")
    return max(1, ceil_div(2 * layer.weight_bits, cap_wbuff))


def compute_cycles(layer: LayerSpec, cpf: int, kpf: int) -> int:
    """Cycles on a fixed CPF x KPF array; partial channel tiles cost a full pass."""
    passes = layer.h * layer.w * layer.r * layer.s * ceil_div(layer.c, cpf)
    if layer.kind is LayerKind.POOL:
        return passes
    return passes * ceil_div(layer.k, kpf)


def generic_compute_latency(layer: LayerSpec, cpf: int, kpf: int, freq):
    return compute_cycles(layer, cpf, kpf) / freq


def weight_load_latency(layer: LayerSpec, bw_w):
    return _div(layer.weight_bits, bw_w)


def fmap_move_latencies(layer: LayerSpec, bw_ifm, bw_ofm):
    return _div(layer.input_bits, bw_ifm), _div(layer.output_bits, bw_ofm)


def fmaps_resident(layer: LayerSpec, cap_abuff: int) -> bool:
    """Input and output fmap each fit one ping-pong half, so neither is swapped."""
    return 2 * max(layer.input_bits, layer.output_bits) <= cap_abuff


def generic_layer_latency(layer: LayerSpec, plan: GenericPlan, freq, batch: int = 1) -> LayerPerf:
    """Latency of ``batch`` images through one layer on the generic engine.

    Weights fetched for a feature-map group serve every image of the batch;
    compute and feature-map traffic scale with the batch.
    """
    l_comp = generic_compute_latency(layer, plan.cpf, plan.kpf, freq)
    l_w = weight_load_latency(layer, plan.bw_w)
    l_ifm, l_ofm = fmap_move_latencies(layer, plan.bw_ifm, plan.bw_ofm)

    if plan.dataflow is Dataflow.WS:
        slice_bits = layer.r * layer.s * layer.c * layer.ww if layer.weight_bits else 0
        if 2 * slice_bits > plan.cap_wbuff or plan.cap_abuff < 2 * layer.dw:
            raise InfeasibleError(
                f"layer '{layer.name}': weight buffer of {plan.cap_wbuff} bits cannot hold "
                f"one output channel ({slice_bits} bits) per ping-pong half",
                {"layer": layer.name},
            )
        g_fm, g_w = 1, weight_groups(layer, plan.cap_wbuff)
        l_layer = max(batch * l_comp, l_w, batch * l_ifm * g_w, batch * l_ofm * g_w)
        regime = Regime.WEIGHT_STATIONARY
    else:
        row_bits = layer.w * layer.k * layer.dw
        if 2 * row_bits > plan.cap_abuff:
            raise InfeasibleError(
                f"layer '{layer.name}': feature buffer of {plan.cap_abuff} bits cannot hold "
                f"one output row ({row_bits} bits) per ping-pong half",
                {"layer": layer.name},
            )
        g_fm, g_w = fmap_groups(layer, plan.cap_abuff), 1
        if fmaps_resident(layer, plan.cap_abuff):
            l_ifm = l_ofm = 0 * l_comp
            l_layer = max(batch * l_comp, l_w * g_fm)
            regime = Regime.RESIDENT
        else:
            l_layer = max(batch * l_comp, l_w * g_fm, batch * l_ifm, batch * l_ofm)
            regime = Regime.SWAPPED

    if l_layer == math.inf:
        raise InfeasibleError(
            f"layer '{layer.name}': plan gives no bandwidth to a transfer it needs",
            {"layer": layer.name},
        )
    return LayerPerf(layer.name, l_comp, l_w, l_ifm, l_ofm, l_layer, g_fm, g_w, regime)


def _ops(layers) -> int:
    return sum(layer.ops for layer in layers)


def generic_network_perf(
    layers: Sequence[LayerSpec], plan: GenericPlan, freq, batch: int = 1, alpha: int = 2
) -> PerfEstimate:
    """Layers run one after another, each finishing the whole batch first."""
    if not layers:
        raise ValueError("no layers to evaluate")
    per_layer = []
    for layer in layers:
        try:
            per_layer.append(generic_layer_latency(layer, plan, freq, batch))
        except InfeasibleError as exc:
            raise InfeasibleError(f"generic structure: {exc}", exc.details) from None
    total = sum(p.l_layer for p in per_layer)
    inf_s = batch / total
    gops = _ops(layers) * inf_s / GIGA
    dsp = dsp_cost(plan.cpf * plan.kpf, alpha)
    return PerfEstimate(
        per_layer=tuple(per_layer),
        total_latency=total,
        throughput_inf_s=inf_s,
        throughput_gops=gops,
        dsp_efficiency=dsp_efficiency(gops, alpha, dsp, freq),
        batch=batch,
        dsp_used=dsp,
        bram_used=plan.bram_bits,
        bw_used=plan.bandwidth,
    )


def pipeline_stream_bits(layer: LayerSpec) -> int:
    """Weight traffic of a stage whose weights are not resident.

    The line-buffered stage emits one output row at a time and needs every
    weight for each row, so non-resident weights are re-fetched once per output
    row; images of a batch are interleaved row by row and share each fetch.
    """
    return layer.weight_bits * layer.h


def pipeline_network_perf(
    layers: Sequence[LayerSpec],
    stages: Sequence[PipelineStagePlan],
    freq,
    batch: int = 1,
    alpha: int = 2,
    stream_bits: Sequence[int] | None = None,
    stage_bw: Sequence | None = None,
    bram_used: int = 0,
) -> PerfEstimate:
    """One dedicated stage per layer; throughput set by the slowest stage.

    A stage's batch latency is ``max(batch * L_comp, streamed bits / stage bw)``.
    """
    if not layers or len(layers) != len(stages):
        raise ValueError("need exactly one stage plan per layer")
    stream_bits = stream_bits or [0] * len(layers)
    stage_bw = stage_bw or [0] * len(layers)
    per_layer = []
    for layer, stage, bits, bw in zip(layers, stages, stream_bits, stage_bw):
        check_divisors(layer, stage)
        l_comp = pipeline_stage_latency(layer, stage, freq)
        l_w = _div(bits, bw)
        if l_w == math.inf:
            raise InfeasibleError(
                f"pipeline stage '{layer.name}' streams weights with no bandwidth",
                {"layer": layer.name},
            )
        per_layer.append(
            LayerPerf(layer.name, l_comp, l_w, 0 * l_comp, 0 * l_comp,
                      max(batch * l_comp, l_w), 1, 1, Regime.PIPELINE)
        )
    latencies = [p.l_layer for p in per_layer]
    inf_s = pipeline_throughput(latencies, batch)
    gops = _ops(layers) * inf_s / GIGA
    dsp = sum(
        dsp_cost(stage.parallelism, alpha)
        for layer, stage in zip(layers, stages)
        if layer.has_weights
    )
    bw_used = sum(_div(bits, max(latencies)) for bits in stream_bits)
    return PerfEstimate(
        per_layer=tuple(per_layer),
        total_latency=sum(latencies),
        throughput_inf_s=inf_s,
        throughput_gops=gops,
        dsp_efficiency=dsp_efficiency(gops, alpha, dsp, freq) if dsp else 0 * gops,
        batch=batch,
        dsp_used=dsp,
        bram_used=bram_used,
        bw_used=bw_used,
    )
