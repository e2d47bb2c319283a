import itertools
import random
from fractions import Fraction as F

import pytest
from hypothesis import given
from hypothesis import strategies as st

from accelx.allocation import (
    BRAM_BLOCK_BITS,
    _knapsack,
    balance_pipeline,
    bandwidth_splits,
    choose_generic_engine,
    line_buffer_bits,
    partition_generic_resources,
    plan_pipeline_memory,
    size_pipeline_buffers,
    stage_options,
    strategy_configs,
)
from accelx.analytic import GenericPlan, Regime, dsp_cost, generic_network_perf, pipeline_stream_bits
from accelx.errors import InfeasibleError
from accelx.model_ir import LayerKind, LayerSpec, bundled_network

CONV, POOL, FC = LayerKind.CONV, LayerKind.POOL, LayerKind.FC


def conv(name, h, c, k, r=3):
    return LayerSpec(name, CONV, h, h, c, k, r, r)


# ---------------------------------------------------------------- balance


def brute_force_balance(layers, budget, alpha=2):
    """Smallest achievable max stage latency over every divisor-feasible allocation."""
    fixed = [F(l.macs, l.c) for l in layers if not l.has_weights]
    weighted = [l for l in layers if l.has_weights]
    best = None
    for combo in itertools.product(*(stage_options(l.c, l.k)[0] for l in weighted)):
        if sum(dsp_cost(p, alpha) for p in combo) > budget:
            continue
        worst = max([F(l.macs, p) for l, p in zip(weighted, combo)] + fixed)
        if best is None or worst < best:
            best = worst
    return best


small_layer = st.builds(
    lambda h, c, k, r: conv("x", h, c, k, r),
    st.integers(1, 4), st.integers(1, 6), st.integers(1, 6), st.integers(1, 3),
)


@given(st.lists(small_layer, min_size=1, max_size=3), st.integers(0, 30), st.sampled_from([2, 4]))
def test_balance_matches_brute_force(layers, extra, alpha):
    layers = [LayerSpec(f"l{i}", l.kind, l.h, l.w, l.c, l.k, l.r, l.s) for i, l in enumerate(layers)]
    budget = len(layers) + extra
    plan = balance_pipeline(layers, budget, alpha=alpha)
    assert plan.dsp_used <= budget
    assert plan.dsp_used == sum(dsp_cost(s.cpf * s.kpf, alpha) for s in plan.stages)
    assert plan.max_cycles == brute_force_balance(layers, budget, alpha)
    for layer, stage in zip(layers, plan.stages):
        assert layer.c % stage.cpf == 0 and layer.k % stage.kpf == 0
        # lexicographically smallest factors for the product
        assert (stage.cpf, stage.kpf) == stage_options(layer.c, layer.k)[1][stage.cpf * stage.kpf]


def test_three_to_one_macs():
    layers = [conv("big", 8, 16, 48), conv("small", 8, 16, 16)]
    plan = balance_pipeline(layers, 256)
    big, small = plan.stages
    assert big.cpf * big.kpf == 3 * small.cpf * small.kpf
    lat = [F(l.macs, s.cpf * s.kpf) for l, s in zip(layers, plan.stages)]
    assert lat[0] == lat[1]
    assert plan.max_cycles == brute_force_balance(layers, 256)


def test_identical_layers_get_equal_parallelism():
    layers = [conv("a", 4, 8, 8), conv("b", 4, 8, 8)]
    plan = balance_pipeline(layers, 32)
    assert plan.stages[0].cpf == plan.stages[1].cpf and plan.stages[0].kpf == plan.stages[1].kpf


@given(st.integers(1, 6), st.integers(1, 64))
def test_uniform_layers_get_uniform_plans(n, budget):
    layers = [conv(f"l{i}", 4, 8, 16) for i in range(n)]
    if budget < n:
        with pytest.raises(InfeasibleError):
            balance_pipeline(layers, budget)
        return
    plan = balance_pipeline(layers, budget)
    assert len({(s.cpf, s.kpf) for s in plan.stages}) == 1


def test_budget_equal_to_stage_count_forces_units():
    layers = [conv(f"l{i}", 4, 8, 8) for i in range(5)]
    plan = balance_pipeline(layers, 5)
    assert all((s.cpf, s.kpf) == (1, 1) for s in plan.stages)


def test_budget_below_one_unit_per_stage():
    with pytest.raises(InfeasibleError) as err:
        balance_pipeline([conv("a", 4, 8, 8), conv("b", 4, 8, 8)], 1)
    assert err.value.details["stages"] == 2


@given(st.lists(small_layer, min_size=1, max_size=4), st.integers(0, 40))
def test_removing_a_unit_never_helps(layers, extra):
    layers = [LayerSpec(f"l{i}", l.kind, l.h, l.w, l.c, l.k, l.r, l.s) for i, l in enumerate(layers)]
    plan = balance_pipeline(layers, len(layers) + extra)
    for i, (layer, stage) in enumerate(zip(layers, plan.stages)):
        products = stage_options(layer.c, layer.k)[0]
        pos = products.index(stage.cpf * stage.kpf)
        if pos == 0:
            continue
        lat = [F(l.macs, s.cpf * s.kpf) for l, s in zip(layers, plan.stages)]
        lat[i] = F(layer.macs, products[pos - 1])
        assert max(lat) >= plan.max_cycles


def test_pool_stages_cost_nothing():
    layers = [conv("c", 4, 8, 8), LayerSpec("p", POOL, 2, 2, 8, 8, 2, 2)]
    plan = balance_pipeline(layers, 4)
    assert plan.stages[1].cpf == 8 and plan.stages[1].kpf == 1
    assert plan.dsp_used == 4


@pytest.mark.parametrize("budget", [100, 500, 2000, 5520])
def test_vgg16_within_reported_bounds(budget):
    plan = balance_pipeline(bundled_network("vgg16").layers, budget)
    assert plan.dsp_used <= budget
    assert plan.continuous_bound <= plan.max_cycles <= 2 * plan.equal_split_bound


# ---------------------------------------------------------------- buffers


def test_line_buffer_examples():
    assert size_pipeline_buffers([LayerSpec("p", CONV, 7, 7, 32, 8, 1, 1)]) == 2 * 7 * 32 * 16
    assert size_pipeline_buffers([conv("c", 224, 64, 64)]) == 2 * 3 * 224 * 64 * 16 == 1_376_256
    assert size_pipeline_buffers([]) == 0
    assert line_buffer_bits(conv("c", 224, 64, 64), batch=3) == 3 * 1_376_256


def test_line_buffer_budget_breakdown():
    layers = [conv("a", 8, 4, 4), conv("b", 8, 4, 4)]
    with pytest.raises(InfeasibleError) as err:
        size_pipeline_buffers(layers, bram_budget=100)
    assert set(err.value.details["stages"]) == {"a", "b"}


def brute_knapsack(costs, values, cap):
    best = 0
    for mask in itertools.product([0, 1], repeat=len(costs)):
        if sum(c for c, m in zip(costs, mask) if m) <= cap:
            best = max(best, sum(v for v, m in zip(values, mask) if m))
    return best


@given(st.lists(st.tuples(st.integers(0, 12), st.integers(0, 50)), max_size=8), st.integers(0, 30))
def test_knapsack_matches_brute_force(items, cap):
    costs = [c for c, _ in items]
    values = [v for _, v in items]
    chosen = _knapsack(costs, values, cap)
    assert sum(c for c, m in zip(costs, chosen) if m) <= cap
    assert sum(v for v, m in zip(values, chosen) if m) == brute_knapsack(costs, values, cap)


def test_memory_plan_all_resident_with_big_budget():
    layers = list(bundled_network("vgg16").layers)
    plan = balance_pipeline(layers, 2000)
    mem = plan_pipeline_memory(layers, plan, 10**10, 1e10)
    assert all(mem.resident)
    assert mem.bw_used == 0.0 and sum(mem.stream_bits) == 0


def test_memory_plan_streams_within_budget():
    layers = list(bundled_network("vgg16").layers)
    plan = balance_pipeline(layers, 2000)
    budget = 40_000_000
    mem = plan_pipeline_memory(layers, plan, budget, 1e10)
    assert mem.bram_used <= budget and mem.bram_used % BRAM_BLOCK_BITS == 0
    assert not all(mem.resident)
    assert sum(mem.stage_bw) == pytest.approx(1e10)
    for layer, res, bits, bw in zip(layers, mem.resident, mem.stream_bits, mem.stage_bw):
        assert bits == (0 if res else pipeline_stream_bits(layer))
        if bits:
            assert bw / bits == pytest.approx(1e10 / sum(mem.stream_bits))


def test_memory_plan_infeasible_budget():
    layers = list(bundled_network("vgg16").layers)
    plan = balance_pipeline(layers, 2000)
    with pytest.raises(InfeasibleError) as err:
        plan_pipeline_memory(layers, plan, 1_000_000, 1e10)
    assert err.value.details["required"] > 1_000_000


# ---------------------------------------------------------------- generic


def test_engine_is_power_of_two_and_within_budget():
    layers = bundled_network("vgg16").layers
    for budget, alpha in ((64, 2), (1000, 2), (1000, 4)):
        cpf, kpf = choose_generic_engine(layers, budget, alpha)
        assert dsp_cost(cpf * kpf, alpha) <= budget
        assert cpf & (cpf - 1) == 0 and kpf & (kpf - 1) == 0
    with pytest.raises(InfeasibleError):
        choose_generic_engine(layers, 0, 2)


def exhaustive_partition(layers, bram, bw, strategy, dsp, freq, batch, grid):
    """Scalar enumeration of every grid plan; returns the best total latency."""
    cpf, kpf = choose_generic_engine(layers, dsp)
    best = None
    for strat, flow, cap_a, cap_w in strategy_configs(bram, strategy, grid):
        for i, j, l in bandwidth_splits(grid):
            plan = GenericPlan(cpf, kpf, strat, flow, cap_a, cap_w, bw * i / grid, bw * j / grid, bw * l / grid)
            try:
                total = generic_network_perf(layers, plan, freq, batch).total_latency
            except InfeasibleError:
                continue
            if best is None or total < best:
                best = total
    return best


def _random_net(rng):
    layers, c, h = [], rng.choice([1, 2, 3, 4]), rng.choice([2, 4, 8])
    for i in range(rng.randint(1, 4)):
        if rng.random() < 0.25 and h > 1:
            layers.append(LayerSpec(f"p{i}", POOL, h // 2, h // 2, c, c, 2, 2, in_h=h, in_w=h))
            h //= 2
        else:
            k = rng.choice([2, 4, 8, 16, 32])
            layers.append(LayerSpec(f"c{i}", CONV, h, h, c, k, rng.choice([1, 3]), rng.choice([1, 3])))
            c = k
    return layers


@pytest.mark.parametrize("strategy", ["1", "2is", "2ws", "auto"])
@given(seed=st.integers(0, 10**9))
def test_partition_matches_exhaustive_grid(strategy, seed):
    rng = random.Random(seed)
    layers = _random_net(rng)
    bram = rng.randint(2_000, 200_000)
    bw, freq, batch, dsp = float(rng.choice([1e8, 1e9])), 1e8, rng.randint(1, 3), rng.choice([4, 16, 64])
    expected = exhaustive_partition(layers, bram, bw, strategy, dsp, freq, batch, 4)
    if expected is None:
        with pytest.raises(InfeasibleError):
            partition_generic_resources(layers, bram, bw, strategy, dsp_budget=dsp, freq=freq, batch=batch, grid=4)
        return
    plan = partition_generic_resources(layers, bram, bw, strategy, dsp_budget=dsp, freq=freq, batch=batch, grid=4)
    got = generic_network_perf(layers, plan, freq, batch).total_latency
    assert got == pytest.approx(expected, rel=1e-12)


def test_auto_ties_with_all_strategies():
    rng = random.Random(7)
    for _ in range(20):
        layers = _random_net(rng)
        bram = rng.randint(5_000, 100_000)
        try:
            full = min(
                generic_network_perf(
                    layers, partition_generic_resources(layers, bram, 1e9, s, dsp_budget=16, freq=1e8, grid=4), 1e8
                ).total_latency
                for s in ("1", "2is", "2ws")
            )
        except InfeasibleError:
            continue
        auto = partition_generic_resources(layers, bram, 1e9, "auto", dsp_budget=16, freq=1e8, grid=4)
        assert generic_network_perf(layers, auto, 1e8).total_latency == pytest.approx(full, rel=1e-12)


def test_weight_heavy_layer_gets_weight_bandwidth():
    layers = [conv("w", 2, 64, 64)]
    plan = partition_generic_resources(layers, 10**7, 1e9, dsp_budget=16, freq=1e8)
    assert plan.bw_w > plan.bw_ifm and plan.bw_w > plan.bw_ofm


def test_symmetric_fmaps_split_evenly():
    layers = [LayerSpec("p", POOL, 8, 8, 16, 16, 1, 1)]
    plan = partition_generic_resources(layers, 8 * 8 * 16 * 16, 1e9, dsp_budget=16, freq=1e8)
    perf = generic_network_perf(layers, plan, 1e8)
    assert perf.per_layer[0].regime is Regime.SWAPPED
    assert plan.bw_ifm == plan.bw_ofm


def test_large_bram_selects_resident_regime():
    layers = [conv("c", 8, 16, 16)]
    plan = partition_generic_resources(layers, 10**8, 1e9, dsp_budget=16, freq=1e8)
    perf = generic_network_perf(layers, plan, 1e8)
    assert perf.per_layer[0].regime is Regime.RESIDENT
    assert plan.bw_ifm == 0 and plan.bw_ofm == 0


def test_partition_errors():
    layers = [conv("c", 8, 16, 16)]
    with pytest.raises(InfeasibleError):
        partition_generic_resources(layers, 0, 1e9, dsp_budget=16, freq=1e8)
    with pytest.raises(InfeasibleError):
        partition_generic_resources(layers, 10, 1e9, dsp_budget=16, freq=1e8)
    with pytest.raises(ValueError):
        partition_generic_resources(layers, 10**6, 1e9, "3", dsp_budget=16, freq=1e8)
