import random
from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from accelx.allocation import balance_pipeline, partition_generic_resources, plan_pipeline_memory
from accelx.analytic import PerfEstimate, generic_network_perf, pipeline_network_perf
from accelx.dse import (
    Evaluator,
    ExploreOptions,
    ResourceAllocationVector,
    compose_system_perf,
    evaluate_rav,
    explore,
    explore_full,
    split_budgets,
)
from accelx.errors import InfeasibleError
from accelx.model_ir import FpgaSpec, LayerKind, LayerSpec, NetworkModel
from accelx.oracle import brute_force_dse
from accelx.validation import TOY_BATCH_MAX, TOY_GRID, toy_fpga, toy_network

RAV = ResourceAllocationVector
TOY_OPTS = ExploreOptions(grid=TOY_GRID, bw_grid=TOY_GRID, batch_max=TOY_BATCH_MAX)


def side(inf_s, dsp=1000):
    return PerfEstimate((), F(1, inf_s), F(inf_s), 0.0, 0.0, 1, dsp, 0, 0.0)


# ---------------------------------------------------------------- RAV


def test_rav_validation():
    with pytest.raises(ValueError):
        RAV(0, 1, F(1, 2), 0, 0)
    with pytest.raises(ValueError):
        RAV(1, 0, F(1, 2), F(1, 2), F(1, 2))
    with pytest.raises(ValueError):
        RAV(1, 1, F(3, 2), 0, 0)
    with pytest.raises(ValueError):
        RAV(-1, 1)
    with pytest.raises(ValueError):
        RAV(2, 1, F(1, 2), 1, 1).check(2)
    with pytest.raises(ValueError):
        RAV(3, 1, 1, 1, 1).check(2)
    assert RAV.pure(2, 1, 2).splits == (1, 1, 1)
    assert RAV.pure(0, 4, 2).splits == (0, 0, 0)
    assert RAV(1, 1, 0.5, "1/4", 1).bram_split == F(1, 4)


def test_split_budgets_partition_the_device(small_fpga):
    b = split_budgets(small_fpga, RAV(1, 1, F(1, 3), F(1, 3), F(1, 3)))
    assert b.dsp_p + b.dsp_g == small_fpga.dsp
    assert b.bram_p + b.bram_g == small_fpga.bram_bits
    assert b.bw_p + b.bw_g == pytest.approx(small_fpga.bw)
    assert b.dsp_p == small_fpga.dsp // 3


# ---------------------------------------------------------------- composition


def test_compose_takes_the_slower_side():
    perf = compose_system_perf(side(100), side(60), 1, 10**9, 2, 10**9)
    assert perf.throughput_inf_s == 60
    assert perf.throughput_gops == 60
    assert perf.dsp_used == 2000


def test_compose_equal_and_single_sides():
    assert compose_system_perf(side(50), side(50), 1, 10**9, 2, 10**9).throughput_inf_s == 50
    assert compose_system_perf(side(70), None, 1, 10**9, 2, 10**9).throughput_inf_s == 70
    assert compose_system_perf(None, side(30), 1, 10**9, 2, 10**9).throughput_inf_s == 30
    with pytest.raises(ValueError):
        compose_system_perf(None, None, 1, 1, 2, 1)


# ---------------------------------------------------------------- evaluate


def test_pure_generic_boundary(two_layer_net, small_fpga):
    cfg = evaluate_rav(two_layer_net, small_fpga, RAV.pure(0, 2, 2))
    assert cfg.feasible and cfg.pipeline is None
    plan = partition_generic_resources(
        two_layer_net.layers, small_fpga.bram_bits, small_fpga.bw,
        dsp_budget=small_fpga.dsp, freq=small_fpga.freq, batch=2,
    )
    assert cfg.generic == plan
    gen = generic_network_perf(two_layer_net.layers, plan, small_fpga.freq, 2)
    assert cfg.perf.throughput_inf_s == pytest.approx(float(gen.throughput_inf_s))


def test_pure_pipeline_boundary(two_layer_net, small_fpga):
    cfg = evaluate_rav(two_layer_net, small_fpga, RAV.pure(2, 3, 2))
    assert cfg.feasible and cfg.generic is None
    layers = two_layer_net.layers
    # everything fits on chip, so throughput is the compute-only pipeline rate
    assert all(cfg.pipeline.resident)
    lat = [F(l.macs, s.cpf * s.kpf) / F(small_fpga.freq) for l, s in zip(layers, cfg.pipeline.stages)]
    assert cfg.perf.throughput_inf_s == pytest.approx(float(1 / max(lat)))


def test_mid_split_matches_hand_composition(two_layer_net, small_fpga):
    rav = RAV(1, 2, F(1, 2), F(1, 2), F(1, 2))
    cfg = evaluate_rav(two_layer_net, small_fpga, rav)
    assert cfg.feasible
    first, second = two_layer_net.layers[:1], two_layer_net.layers[1:]
    fpga, alpha = small_fpga, 2

    bal = balance_pipeline(first, fpga.dsp // 2, fpga.freq, alpha)
    mem = plan_pipeline_memory(first, bal, fpga.bram_bits // 2, fpga.bw / 2, 2)
    pipe = pipeline_network_perf(first, mem.stages, fpga.freq, 2, alpha, mem.stream_bits, mem.stage_bw)
    gplan = partition_generic_resources(
        second, fpga.bram_bits - fpga.bram_bits // 2, fpga.bw / 2,
        dsp_budget=fpga.dsp - fpga.dsp // 2, freq=fpga.freq, batch=2,
    )
    gen = generic_network_perf(second, gplan, fpga.freq, 2)
    expected = min(float(pipe.throughput_inf_s), float(gen.throughput_inf_s))

    assert cfg.pipeline.stages == mem.stages and cfg.generic == gplan
    assert float(cfg.perf.throughput_inf_s) == pytest.approx(expected, rel=1e-12)
    assert cfg.perf.throughput_gops == pytest.approx(two_layer_net.total_ops * expected / 1e9, rel=1e-12)
    assert cfg.perf.dsp_used <= fpga.dsp


def test_infeasible_side_is_reported_not_raised(two_layer_net, small_fpga):
    cfg = evaluate_rav(two_layer_net, small_fpga, RAV(1, 1, 0, F(1, 2), F(1, 2)))
    assert not cfg.feasible and cfg.perf is None
    assert cfg.reason.startswith("pipeline")
    assert cfg.key is None


@settings(max_examples=25)
@given(st.integers(0, 10**6))
def test_fast_score_matches_full_evaluate(seed):
    rng = random.Random(seed)
    net, fpga = toy_network(rng), toy_fpga(rng)
    ev = Evaluator(net, fpga, bw_grid=4)
    n = len(net.layers)
    sp = rng.randint(0, n)
    if sp in (0, n):
        rav = RAV.pure(sp, rng.randint(1, 3), n)
    else:
        rav = RAV(sp, rng.randint(1, 3), *(F(rng.randint(0, 4), 4) for _ in range(3)))
    feasible, key, _ = ev.score(rav)
    cfg = Evaluator(net, fpga, bw_grid=4).evaluate(rav)
    assert feasible == cfg.feasible
    if feasible:
        assert key[0] == pytest.approx(cfg.key[0], rel=1e-9)
        assert key[1] == pytest.approx(cfg.key[1], rel=1e-9)
        assert key[2] == cfg.key[2]


# ---------------------------------------------------------------- explore


def test_explore_is_deterministic(two_layer_net, small_fpga):
    opts = ExploreOptions(grid=4, bw_grid=4, batch_max=3, seed=5)
    a = explore_full(two_layer_net, small_fpga, opts)
    b = explore_full(two_layer_net, small_fpga, opts)
    assert a.best.rav == b.best.rav and a.best.key == b.best.key
    assert a.trace == b.trace


def test_explore_parallel_equals_serial(two_layer_net, small_fpga):
    serial = explore_full(two_layer_net, small_fpga, ExploreOptions(grid=4, bw_grid=4, batch_max=2, threads=1))
    parallel = explore_full(two_layer_net, small_fpga, ExploreOptions(grid=4, bw_grid=4, batch_max=2, threads=2))
    assert serial.best.rav == parallel.best.rav
    assert serial.trace == parallel.trace


def test_explore_dominates_pure_paradigms(two_layer_net, small_fpga):
    opts = ExploreOptions(grid=4, bw_grid=4, batch_max=4)
    best = explore(two_layer_net, small_fpga, opts)
    for sp in (0, 2):
        pure = explore(two_layer_net, small_fpga, ExploreOptions(grid=4, bw_grid=4, batch_max=4, sp_values=(sp,)))
        assert best.key >= pure.key
    trace = explore_full(two_layer_net, small_fpga, opts).trace
    assert all(bool(row.reason) != row.feasible for row in trace)
    assert {row.sp for row in trace} == {0, 1, 2}


def test_one_layer_network_is_best_pure_paradigm(small_fpga):
    net = NetworkModel("one", (4, 8, 8), (LayerSpec("c", LayerKind.CONV, 8, 8, 4, 8, 3, 3),))
    best = explore(net, small_fpga, TOY_OPTS)
    pure = [evaluate_rav(net, small_fpga, RAV.pure(sp, b, 1), bw_grid=4) for sp in (0, 1) for b in (1, 2)]
    assert best.key == max(c.key for c in pure if c.feasible)


def test_all_infeasible_reports_every_split(two_layer_net):
    tiny = FpgaSpec("tiny", dsp=1, bram_bits=10, bw=1e6, freq=1e8, alpha={8: 4, 16: 2})
    with pytest.raises(InfeasibleError) as err:
        explore(two_layer_net, tiny, TOY_OPTS)
    assert set(err.value.details["per_sp"]) == {0, 1, 2}
    with pytest.raises(InfeasibleError):
        brute_force_dse(two_layer_net, tiny)


def test_explore_options_validation():
    with pytest.raises(ValueError):
        ExploreOptions(grid=0)
    with pytest.raises(ValueError):
        ExploreOptions(batch_min=3, batch_max=2)
    with pytest.raises(ValueError):
        explore_full(NetworkModel("one", (4, 8, 8), (LayerSpec("c", LayerKind.CONV, 8, 8, 4, 8),)),
                     FpgaSpec("f", 64, 10**6, 1e9, 1e8, {8: 4, 16: 2}), ExploreOptions(sp_values=(5,)))


@pytest.mark.parametrize("seed", range(12))
def test_explore_equals_brute_force_on_toys(seed):
    rng = random.Random(1000 + seed)
    net, fpga = toy_network(rng, f"toy{seed}"), toy_fpga(rng)

    def best(fn):
        try:
            return fn().key
        except InfeasibleError:
            return None

    found = best(lambda: explore(net, fpga, TOY_OPTS))
    exact = best(lambda: brute_force_dse(net, fpga, TOY_GRID, 1, TOY_BATCH_MAX, TOY_GRID))
    assert found == exact
