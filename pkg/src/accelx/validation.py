"""Seeded random instances and the oracle comparison suites.

Shared by ``accelx validate`` and the test-suite.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction

from .analytic import Dataflow, GenericPlan, generic_layer_latency
from .dse import ExploreOptions, explore
from .errors import InfeasibleError
from .model_ir import FpgaSpec, LayerKind, LayerSpec, NetworkModel
from .oracle import brute_force_dse, group_count, simulate_generic_layer

SIM_FREQ = Fraction(200 * 10**6)


def random_layer(rng: random.Random) -> LayerSpec:
    kind = rng.choice((LayerKind.CONV, LayerKind.CONV, LayerKind.POOL, LayerKind.FC))
    c = rng.choice((3, 8, 16, 64, 128))
    width = rng.choice((8, 16))
    if kind is LayerKind.FC:
        return LayerSpec("fc", kind, 1, 1, c, rng.choice((10, 64, 256)), 1, 1, width, width)
    h = rng.randint(1, 32)
    r = rng.choice((1, 2, 3))
    k = c if kind is LayerKind.POOL else rng.choice((8, 16, 64, 256))
    return LayerSpec("layer", kind, h, h, c, k, r, r, width, width)


def random_plan(rng: random.Random, layer: LayerSpec) -> GenericPlan:
    """Exact-rational plan whose buffers hold at least one row / weight slice."""
    row = layer.w * layer.k * layer.dw
    slice_bits = layer.r * layer.s * layer.c * layer.ww
    bw = [Fraction(rng.randint(1, 64) * 10**6) for _ in range(3)]
    cpf, kpf = rng.choice((1, 2, 4, 8, 16)), rng.choice((1, 4, 16, 64))
    if rng.random() < 0.4:
        cap_w = 2 * slice_bits + rng.randint(0, 2 * layer.weight_bits)
        cap_a = 2 * layer.dw + rng.randint(0, 4 * row)
        return GenericPlan(cpf, kpf, 2, Dataflow.WS, cap_a, cap_w, *bw)
    cap_a = 2 * row + rng.randint(0, 3 * max(layer.input_bits, layer.output_bits))
    return GenericPlan(cpf, kpf, 1, Dataflow.IS, cap_a, 0, *bw)


@dataclass
class SimSuiteResult:
    instances: int
    violations: list = field(default_factory=list)
    max_deviation: Fraction = Fraction(0)  # in group periods

    @property
    def passed(self) -> bool:
        return not self.violations


def check_simulator(instances: int = 1000, seed: int = 0, max_batch: int = 4) -> SimSuiteResult:
    """Analytic latency <= simulated <= analytic + 2 group periods."""
    rng = random.Random(seed)
    result = SimSuiteResult(instances)
    for i in range(instances):
        layer = random_layer(rng)
        plan = random_plan(rng, layer)
        batch = rng.randint(1, max_batch)
        analytic = generic_layer_latency(layer, plan, SIM_FREQ, batch).l_layer
        sim, _ = simulate_generic_layer(layer, plan, SIM_FREQ, batch)
        period = analytic / group_count(layer, plan)
        dev = (sim - analytic) / period
        result.max_deviation = max(result.max_deviation, dev)
        if sim < analytic or dev > 2:
            result.violations.append({"instance": i, "layer": repr(layer), "plan": repr(plan),
                                      "batch": batch, "analytic": float(analytic), "sim": float(sim)})
    return result


def toy_network(rng: random.Random, name: str = "toy") -> NetworkModel:
    """1 to 5 small layers, CONV/POOL/FC, with consistent channel chaining."""
    n = rng.randint(1, 5)
    c = c0 = rng.choice((3, 4, 8))
    h = h0 = rng.choice((8, 16, 32))
    layers = []
    flat = False
    for i in range(n):
        roll = rng.random()
        if flat or (roll < 0.15 and i > 0):
            k = rng.choice((4, 10, 16))
            layers.append(LayerSpec(f"fc{i}", LayerKind.FC, 1, 1, c * (1 if flat else h * h), k))
            c, flat = k, True
        elif roll < 0.35 and i > 0 and h % 2 == 0:
            h //= 2
            layers.append(LayerSpec(f"pool{i}", LayerKind.POOL, h, h, c, c, 2, 2))
        else:
            k = rng.choice((4, 8, 16, 32))
            r = rng.choice((1, 3))
            layers.append(LayerSpec(f"conv{i}", LayerKind.CONV, h, h, c, k, r, r))
            c = k
    return NetworkModel(name, (c0, h0, h0), tuple(layers))


def toy_fpga(rng: random.Random) -> FpgaSpec:
    return FpgaSpec(
        "toy",
        dsp=rng.choice((8, 32, 128, 512)),
        bram_bits=36 * 1024 * rng.choice((16, 64, 256)),
        bw=rng.choice((1e9, 4e9, 16e9)),
        freq=100e6,
        alpha={8: 4, 16: 2},
    )


TOY_GRID = 4
TOY_BATCH_MAX = 2


@dataclass
class SearchSuiteResult:
    fixtures: int
    mismatches: list = field(default_factory=list)
    infeasible_both: int = 0

    @property
    def passed(self) -> bool:
        return not self.mismatches


def _best_key(fn):
    try:
        return fn().key
    except InfeasibleError:
        return None


def check_search(fixtures: int = 40, seed: int = 0) -> SearchSuiteResult:
    """explore must reach the brute-force optimum on every toy fixture."""
    rng = random.Random(seed)
    result = SearchSuiteResult(fixtures)
    for i in range(fixtures):
        net = toy_network(rng, f"toy{i}")
        fpga = toy_fpga(rng)
        opts = ExploreOptions(grid=TOY_GRID, bw_grid=TOY_GRID, batch_max=TOY_BATCH_MAX, seed=seed + i)
        found = _best_key(lambda: explore(net, fpga, opts))
        exact = _best_key(lambda: brute_force_dse(net, fpga, TOY_GRID, 1, TOY_BATCH_MAX, TOY_GRID))
        if found is None and exact is None:
            result.infeasible_both += 1
        if found != exact:
            result.mismatches.append({"fixture": i, "network": net.name, "explore": found, "brute_force": exact})
    return result
