"""Design-space exploration over resource allocation vectors.

The outer search is exhaustive over split point and batch size; the three
resource fractions are searched by coordinate descent with random restarts on
a ``1/grid`` lattice.  Each point runs the pipeline and generic allocators on
their share of the platform and composes the two.
"""

from __future__ import annotations

import math
import os
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .allocation import (
    DEFAULT_GRID,
    PipelinePlanSet,
    balance_pipeline,
    choose_generic_engine,
    layer_arrays,
    plan_pipeline_memory,
    search_generic_plan,
)
from .analytic import (
    GIGA,
    GenericPlan,
    PerfEstimate,
    _div,
    dsp_cost,
    dsp_efficiency,
    generic_network_perf,
    pipeline_network_perf,
)
from .errors import InfeasibleError
from .model_ir import FpgaSpec, NetworkModel


def _fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(str(value))
    return Fraction(value)


@dataclass(frozen=True)
class ResourceAllocationVector:
    """Split point, batch, and the share of each resource given to the pipeline.

    The pipeline runs layers ``[0, sp)``; the generic engine runs the rest.
    """

    sp: int
    batch: int
    dsp_split: Fraction = Fraction(0)
    bram_split: Fraction = Fraction(0)
    bw_split: Fraction = Fraction(0)

    def __post_init__(self):
        for name in ("dsp_split", "bram_split", "bw_split"):
            value = _fraction(getattr(self, name))
            if not 0 <= value <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {float(value)}")
            object.__setattr__(self, name, value)
        if self.sp < 0:
            raise ValueError(f"sp must be >= 0, got {self.sp}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if self.sp == 0 and self.splits != (0, 0, 0):
            raise ValueError("sp = 0 (pure generic) requires all splits 0")

    @property
    def splits(self) -> tuple[Fraction, Fraction, Fraction]:
        return self.dsp_split, self.bram_split, self.bw_split

    def check(self, n_layers: int) -> None:
        if self.sp > n_layers:
            raise ValueError(f"sp = {self.sp} exceeds the {n_layers} layers of the network")
        if self.sp == n_layers and self.splits != (1, 1, 1):
            raise ValueError("sp = N (pure pipeline) requires all splits 1")

    @classmethod
    def pure(cls, sp: int, batch: int, n_layers: int) -> "ResourceAllocationVector":
        share = 1 if sp == n_layers else 0
        return cls(sp, batch, share, share, share)

    def to_dict(self) -> dict:
        return {
            "sp": self.sp,
            "batch": self.batch,
            "dsp_split": float(self.dsp_split),
            "bram_split": float(self.bram_split),
            "bw_split": float(self.bw_split),
        }


@dataclass(frozen=True)
class ArchitectureConfig:
    rav: ResourceAllocationVector
    pipeline: PipelinePlanSet | None
    generic: GenericPlan | None
    perf: PerfEstimate | None
    feasible: bool = True
    reason: str = ""

    @property
    def key(self):
        return objective_key(self.perf) if self.feasible else None


def objective_key(perf: PerfEstimate) -> tuple:
    """Higher is better: GOP/s, then DSP efficiency, then less BRAM."""
    return (perf.throughput_gops, perf.dsp_efficiency, -perf.bram_used)


@dataclass(frozen=True)
class ExploreOptions:
    grid: int = DEFAULT_GRID  # split lattice of the outer search
    bw_grid: int = DEFAULT_GRID  # bandwidth / buffer lattice of the generic side
    batch_min: int = 1
    batch_max: int = 16
    seed: int = 0
    restarts: int = 8
    strategy: str = "auto"
    sp_values: tuple[int, ...] | None = None
    threads: int | None = None

    def __post_init__(self):
        if self.grid < 1 or self.bw_grid < 1:
            raise ValueError("grids must be >= 1")
        if not 1 <= self.batch_min <= self.batch_max:
            raise ValueError("need 1 <= batch_min <= batch_max")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


def _threads(requested: int | None) -> int:
    if requested is not None:
        return max(1, requested)
    env = os.environ.get("ACCELX_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"ACCELX_THREADS must be an integer, got {env!r}") from None
    return 1


# --------------------------------------------------------------------------
# composition


def compose_system_perf(
    pipeline_perf: PerfEstimate | None,
    generic_perf: PerfEstimate | None,
    batch: int,
    network_ops: int,
    alpha: int,
    freq,
) -> PerfEstimate:
    """The slower structure sets the rate; both share the network's work."""
    sides = [p for p in (pipeline_perf, generic_perf) if p is not None]
    if not sides:
        raise ValueError("need at least one structure")
    inf_s = min(p.throughput_inf_s for p in sides)
    gops = network_ops * inf_s / GIGA
    dsp = sum(p.dsp_used for p in sides)
    return PerfEstimate(
        per_layer=tuple(lp for p in sides for lp in p.per_layer),
        total_latency=sum(p.total_latency for p in sides),
        throughput_inf_s=inf_s,
        throughput_gops=gops,
        dsp_efficiency=dsp_efficiency(gops, alpha, dsp, freq) if dsp else 0.0,
        batch=batch,
        dsp_used=dsp,
        bram_used=sum(p.bram_used for p in sides),
        bw_used=sum(p.bw_used for p in sides),
    )


# --------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class Budgets:
    dsp_p: int
    bram_p: int
    bw_p: float
    dsp_g: int
    bram_g: int
    bw_g: float


def split_budgets(fpga: FpgaSpec, rav: ResourceAllocationVector) -> Budgets:
    dsp_p = math.floor(fpga.dsp * rav.dsp_split)
    bram_p = math.floor(fpga.bram_bits * rav.bram_split)
    bw = _fraction(fpga.bw)
    return Budgets(
        dsp_p=dsp_p,
        bram_p=bram_p,
        bw_p=float(bw * rav.bw_split),
        dsp_g=fpga.dsp - dsp_p,
        bram_g=fpga.bram_bits - bram_p,
        bw_g=float(bw * (1 - rav.bw_split)),
    )


class _Infeasible(Exception):
    pass


class Evaluator:
    """Scores allocation vectors for one network and platform, with caching.

    ``score`` is the fast path used inside the search; ``evaluate`` builds the
    full :class:`ArchitectureConfig` and yields the same objective values.
    """

    def __init__(self, network: NetworkModel, fpga: FpgaSpec, bw_grid: int = DEFAULT_GRID,
                 strategy: str = "auto"):
        self.network = network
        self.fpga = fpga
        self.layers = network.layers
        self.n = len(network.layers)
        self.bw_grid = bw_grid
        self.strategy = strategy
        self.alpha = fpga.alpha_for(network.max_width)
        self.freq = fpga.freq
        self.ops = network.total_ops
        self._balance: dict = {}
        self._memory: dict = {}
        self._engine: dict = {}
        self._generic: dict = {}
        self._scores: dict = {}

    # pipeline side
    def _pipeline_balance(self, sp, dsp_p):
        key = (sp, dsp_p)
        if key not in self._balance:
            try:
                self._balance[key] = balance_pipeline(self.layers[:sp], dsp_p, self.freq, self.alpha)
            except InfeasibleError as exc:
                self._balance[key] = exc
        return self._balance[key]

    def _pipeline_plan(self, sp, batch, b: Budgets) -> PipelinePlanSet:
        if b.dsp_p <= 0 or b.bram_p <= 0:
            raise _Infeasible("pipeline: no DSP or BRAM share")
        bal = self._pipeline_balance(sp, b.dsp_p)
        if isinstance(bal, InfeasibleError):
            raise _Infeasible(f"pipeline: {bal}")
        key = (sp, batch, b.dsp_p, b.bram_p)
        if key not in self._memory:
            try:
                self._memory[key] = plan_pipeline_memory(self.layers[:sp], bal, b.bram_p, 1.0, batch)
            except InfeasibleError as exc:
                self._memory[key] = exc
        mem = self._memory[key]
        if isinstance(mem, InfeasibleError):
            raise _Infeasible(f"pipeline: {mem}")
        total = sum(mem.stream_bits)
        if total and b.bw_p <= 0:
            raise _Infeasible("pipeline: streamed weights but no bandwidth share")
        stage_bw = tuple(b.bw_p * bits / total if bits else 0.0 for bits in mem.stream_bits)
        return PipelinePlanSet(
            stages=mem.stages, dsp_used=mem.dsp_used, bram_used=mem.bram_used,
            bw_used=b.bw_p if total else 0.0, resident=mem.resident,
            stream_bits=mem.stream_bits, stage_bw=stage_bw, max_cycles=mem.max_cycles,
            continuous_bound=mem.continuous_bound, equal_split_bound=mem.equal_split_bound,
        )

    def _pipeline_rate(self, sp, batch, plan: PipelinePlanSet) -> float:
        worst = 0.0
        for layer, stage, bits, bw in zip(self.layers[:sp], plan.stages, plan.stream_bits, plan.stage_bw):
            l_comp = layer.macs / (stage.cpf * stage.kpf * self.freq)
            worst = max(worst, batch * l_comp, _div(bits, bw))
        return _div(batch, worst)

    # generic side
    def _generic_engine(self, sp, dsp_g):
        key = (sp, dsp_g)
        if key not in self._engine:
            try:
                cpf, kpf = choose_generic_engine(self.layers[sp:], dsp_g, self.alpha)
                self._engine[key] = (cpf, kpf, layer_arrays(self.layers[sp:], cpf, kpf))
            except InfeasibleError as exc:
                self._engine[key] = exc
        return self._engine[key]

    def _generic_search(self, sp, batch, b: Budgets):
        if b.dsp_g <= 0 or b.bram_g <= 0 or b.bw_g <= 0:
            raise _Infeasible("generic: no DSP, BRAM or bandwidth share")
        engine = self._generic_engine(sp, b.dsp_g)
        if isinstance(engine, InfeasibleError):
            raise _Infeasible(f"generic: {engine}")
        key = (sp, batch, b.dsp_g, b.bram_g, b.bw_g)
        if key not in self._generic:
            cpf, kpf, arrays = engine
            self._generic[key] = search_generic_plan(
                arrays, cpf, kpf, b.bram_g, b.bw_g, self.freq, batch, self.strategy, self.bw_grid
            )
        result = self._generic[key]
        if result is None:
            raise _Infeasible(f"generic: no feasible buffer/bandwidth plan on the 1/{self.bw_grid} grid")
        return result

    # public
    def score(self, rav: ResourceAllocationVector):
        """(feasible, objective key or None, reason)."""
        cached = self._scores.get(rav)
        if cached is not None:
            return cached
        try:
            rav.check(self.n)
            b = split_budgets(self.fpga, rav)
            rates, dsp, bram = [], 0, 0
            if rav.sp > 0:
                plan = self._pipeline_plan(rav.sp, rav.batch, b)
                rates.append(self._pipeline_rate(rav.sp, rav.batch, plan))
                dsp += plan.dsp_used
                bram += plan.bram_used
            if rav.sp < self.n:
                res = self._generic_search(rav.sp, rav.batch, b)
                rates.append(rav.batch / res.total_latency)
                dsp += dsp_cost(res.plan.cpf * res.plan.kpf, self.alpha)
                bram += res.plan.bram_bits
            gops = self.ops * min(rates) / GIGA
            effi = dsp_efficiency(gops, self.alpha, dsp, self.freq) if dsp else 0.0
            out = (True, (gops, effi, -bram), "")
        except _Infeasible as exc:
            out = (False, None, str(exc))
        self._scores[rav] = out
        return out

    def evaluate(self, rav: ResourceAllocationVector) -> ArchitectureConfig:
        rav.check(self.n)
        b = split_budgets(self.fpga, rav)
        pipe_plan = gen_plan = pipe_perf = gen_perf = None
        try:
            if rav.sp > 0:
                pipe_plan = self._pipeline_plan(rav.sp, rav.batch, b)
                pipe_perf = pipeline_network_perf(
                    self.layers[: rav.sp], pipe_plan.stages, self.freq, rav.batch, self.alpha,
                    pipe_plan.stream_bits, pipe_plan.stage_bw, pipe_plan.bram_used,
                )
            if rav.sp < self.n:
                gen_plan = self._generic_search(rav.sp, rav.batch, b).plan
                gen_perf = generic_network_perf(self.layers[rav.sp:], gen_plan, self.freq, rav.batch, self.alpha)
        except _Infeasible as exc:
            return ArchitectureConfig(rav, pipe_plan, gen_plan, None, False, str(exc))
        perf = compose_system_perf(pipe_perf, gen_perf, rav.batch, self.ops, self.alpha, self.freq)
        return ArchitectureConfig(rav, pipe_plan, gen_plan, perf)


def evaluate_rav(network: NetworkModel, fpga: FpgaSpec, rav: ResourceAllocationVector,
                 bw_grid: int = DEFAULT_GRID, strategy: str = "auto") -> ArchitectureConfig:
    return Evaluator(network, fpga, bw_grid, strategy).evaluate(rav)


# --------------------------------------------------------------------------
# search


@dataclass(frozen=True)
class TraceRow:
    sp: int
    batch: int
    dsp_split: float
    bram_split: float
    bw_split: float
    feasible: bool
    gops: float
    effi: float
    reason: str = ""


TRACE_FIELDS = tuple(TraceRow.__dataclass_fields__)


def _better(a, b) -> bool:
    return a is not None and (b is None or a > b)


def _rav(sp, batch, point, grid) -> ResourceAllocationVector:
    return ResourceAllocationVector(sp, batch, *(Fraction(v, grid) for v in point))


def _search_split(ev: Evaluator, sp: int, batch: int, opts: ExploreOptions, trace: list):
    """Best (key, rav) for one (sp, batch); records every new point in ``trace``."""
    seen = set()

    def f(point):
        rav = _rav(sp, batch, point, opts.grid) if point is not None else ResourceAllocationVector.pure(
            sp, batch, ev.n)
        feasible, key, reason = ev.score(rav)
        if rav not in seen:
            seen.add(rav)
            trace.append(TraceRow(
                sp, batch, float(rav.dsp_split), float(rav.bram_split), float(rav.bw_split),
                feasible, key[0] if feasible else 0.0, key[1] if feasible else 0.0, reason,
            ))
        return key, rav

    if sp in (0, ev.n):
        return f(None)

    grid = opts.grid
    rng = random.Random(f"{opts.seed}:{sp}:{batch}")
    lo, hi = (1, grid - 1) if grid >= 2 else (0, grid)
    best_key, best_rav = None, None
    for _ in range(opts.restarts):
        cur = tuple(rng.randint(lo, hi) for _ in range(3))
        cur_key, cur_rav = f(cur)
        while True:
            move = None
            move_key = cur_key
            for axis in range(3):
                for v in range(grid + 1):
                    if v == cur[axis]:
                        continue
                    cand = cur[:axis] + (v,) + cur[axis + 1:]
                    key, _ = f(cand)
                    if _better(key, move_key):
                        move, move_key = cand, key
            if move is None:
                break
            cur, cur_key = move, move_key
            _, cur_rav = f(cur)
        if _better(cur_key, best_key):
            best_key, best_rav = cur_key, cur_rav
    if best_rav is None:
        # nothing feasible; report the first start so the caller has a reason
        return None, _rav(sp, batch, (lo, lo, lo), grid)
    return best_key, best_rav


def _explore_sp(args):
    network, fpga, opts, sp = args
    ev = Evaluator(network, fpga, opts.bw_grid, opts.strategy)
    trace: list[TraceRow] = []
    best_key, best_rav, reason = None, None, ""
    for batch in range(opts.batch_min, opts.batch_max + 1):
        key, rav = _search_split(ev, sp, batch, opts, trace)
        if _better(key, best_key):
            best_key, best_rav = key, rav
    if best_rav is None:
        reasons = sorted({row.reason for row in trace if not row.feasible})
        reason = "; ".join(reasons[:3])
    return sp, best_key, best_rav, trace, reason


@dataclass
class ExploreResult:
    best: ArchitectureConfig
    trace: list[TraceRow] = field(default_factory=list)
    per_sp_best: dict = field(default_factory=dict)  # sp -> objective key or None

    @property
    def evaluations(self) -> int:
        return len(self.trace)


def explore_full(network: NetworkModel, fpga: FpgaSpec, options: ExploreOptions | None = None) -> ExploreResult:
    opts = options or ExploreOptions()
    n = len(network.layers)
    sps = list(opts.sp_values) if opts.sp_values is not None else list(range(n + 1))
    for sp in sps:
        if not 0 <= sp <= n:
            raise ValueError(f"split point {sp} outside [0, {n}]")
    jobs = [(network, fpga, opts, sp) for sp in sps]
    threads = _threads(opts.threads)
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_explore_sp, jobs))
    else:
        results = [_explore_sp(job) for job in jobs]

    best_key, best_rav, trace, per_sp, reasons = None, None, [], {}, {}
    for sp, key, rav, rows, reason in results:
        trace.extend(rows)
        per_sp[sp] = key
        if key is None:
            reasons[sp] = reason
        elif _better(key, best_key):
            best_key, best_rav = key, rav
    if best_rav is None:
        raise InfeasibleError(
            f"no feasible configuration for {network.name} on {fpga.name}",
            {"per_sp": reasons},
        )
    best = Evaluator(network, fpga, opts.bw_grid, opts.strategy).evaluate(best_rav)
    return ExploreResult(best, trace, per_sp)


def explore(network: NetworkModel, fpga: FpgaSpec, options: ExploreOptions | None = None) -> ArchitectureConfig:
    """Best feasible configuration found; raises InfeasibleError if none."""
    return explore_full(network, fpga, options).best


def trace_rows_as_dicts(rows: Iterable[TraceRow]) -> list[dict]:
    return [asdict(row) for row in rows]


__all__: Sequence[str] = [
    "ArchitectureConfig",
    "Evaluator",
    "ExploreOptions",
    "ExploreResult",
    "ResourceAllocationVector",
    "TRACE_FIELDS",
    "TraceRow",
    "compose_system_perf",
    "evaluate_rav",
    "explore",
    "explore_full",
    "objective_key",
    "split_budgets",
]
