"""Command-line interface: ``accelx profile|estimate|explore|validate``.

Exit codes: 0 success, 1 user error, 2 infeasible, 3 validation failure.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import click

from . import __version__
from .dse import (
    TRACE_FIELDS,
    Evaluator,
    ExploreOptions,
    ResourceAllocationVector,
    explore_full,
)
from .errors import AccelxError, DegenerateSplitError, InfeasibleError, ModelError
from .model_ir import (
    DEFAULT_SWEEP,
    CtcModel,
    _data_dir,
    half_split,
    load_fpga,
    load_network,
    network_profile,
    resolution_sweep,
)
from .reports import (
    RunConfig,
    config_to_dict,
    csv_text,
    dump_json,
    provenance,
    sha256_bytes,
    write_text,
)

EXIT_OK, EXIT_USER, EXIT_INFEASIBLE, EXIT_VALIDATION = 0, 1, 2, 3


@dataclass
class _Input:
    model: object
    digest: str


def _read_input(ref: str, kind: str) -> _Input:
    path = Path(ref)
    if not path.is_file():
        bundled = _data_dir(kind) / f"{ref}.json"
        if not bundled.is_file():
            raise ModelError(f"{ref!r} is neither a file nor a bundled {kind[:-1]} name")
        data = bundled.read_bytes()
    else:
        data = path.read_bytes()
    loader = load_network if kind == "networks" else load_fpga
    return _Input(loader(data.decode("utf-8")), sha256_bytes(data))


def _out_dir(out: str) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _parse_sweep(text: str) -> tuple[int, ...]:
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = (int(v) for v in text.split("..", 1))
            sizes = tuple(s for s in DEFAULT_SWEEP if lo <= s <= hi)
        else:
            sizes = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise click.BadParameter(f"expected LO..HI or a comma list of sizes, got {text!r}") from None
    if len(sizes) < 2:
        raise click.BadParameter(f"sweep {text!r} selects fewer than two sizes")
    return sizes


def _fraction_arg(value):
    if value is None:
        return None
    try:
        return Fraction(value)
    except (ValueError, ZeroDivisionError):
        raise click.BadParameter(f"not a fraction: {value!r}") from None


def _provenance_lines(prov: dict) -> list[str]:
    lines = [f"accelx {prov['version']}"]
    lines += [f"{k} sha256 {v}" for k, v in sorted(prov["inputs"].items())]
    opts = prov["run_config"]
    lines.append("run " + " ".join(f"{k}={opts[k]}" for k in sorted(opts) if k != "options"))
    lines += [f"option {k}={v}" for k, v in sorted(opts["options"].items())]
    return lines


@click.group()
@click.version_option(__version__, prog_name="accelx")
def cli():
    """Hybrid pipeline/generic DNN accelerator modeling and exploration."""


# --------------------------------------------------------------------------
# profile


@cli.command()
@click.option("--network", required=True, help="Network JSON file or bundled name.")
@click.option("--out", default="out", show_default=True, help="Output directory.")
@click.option("--ctc", "ctc_model", type=click.Choice([m.value for m in CtcModel]),
              default=CtcModel.OFFCHIP.value, show_default=True, help="CTC used by the half split.")
@click.option("--sweep", default=None, help="Resolution sweep, LO..HI or a comma list.")
@click.option("--sweep-ctc", type=click.Choice([m.value for m in CtcModel]),
              default=CtcModel.WEIGHTS.value, show_default=True, help="CTC used by the sweep.")
def profile(network, out, ctc_model, sweep, sweep_ctc):
    """Per-layer MACs, bit volumes and CTC, plus the half-split variance report."""
    net = _read_input(network, "networks")
    sizes = _parse_sweep(sweep) if sweep else None
    run = RunConfig("profile", network, None, out, {
        "ctc": ctc_model, "sweep": list(sizes) if sizes else None, "sweep_ctc": sweep_ctc})
    prov = provenance(run, {"network": net.digest})
    out_dir = _out_dir(out)

    rows = [(p.name, p.kind, p.macs, p.input_bits, p.output_bits, p.weight_bits, p.ctc, p.weight_ctc)
            for p in network_profile(net.model)]
    header = ("name", "kind", "macs", "input_bits", "output_bits", "weight_bits", "ctc", "weight_ctc")
    write_text(out_dir / "profile.csv", csv_text(header, rows, _provenance_lines(prov)))

    try:
        hs = half_split(net.model, ctc_model=CtcModel(ctc_model))
        split = {"split_index": hs.split_index, "v1": hs.v1, "v2": hs.v2, "ratio": hs.ratio,
                 "ctc_model": ctc_model}
        reason = ""
    except DegenerateSplitError as exc:
        split, reason = None, str(exc)
    report = {"provenance": prov, "network": net.model.name, "layers": len(rows),
              "half_split": split, "half_split_error": reason or None}

    click.echo(f"{net.model.name}: {len(rows)} layers -> {out_dir / 'profile.csv'}")
    if split:
        ratio = "n/a" if split["ratio"] is None else f"{split['ratio']:.3f}"
        click.echo(f"half split at layer {split['split_index']}: V1={split['v1']:.4g} "
                   f"V2={split['v2']:.4g} ratio={ratio}")
    else:
        click.echo(f"half split undefined: {reason}")

    if sizes:
        table = resolution_sweep(net.model, sizes, ctc_model=CtcModel(sweep_ctc))
        write_text(out_dir / "sweep.csv", csv_text(
            ("size", "median_ctc", "min_ctc", "max_ctc"),
            [(r.size, r.median_ctc, r.min_ctc, r.max_ctc) for r in table],
            _provenance_lines(prov)))
        ratio = table[-1].median_ctc / table[0].median_ctc
        report["sweep"] = {"sizes": list(sizes), "median_ratio_last_first": ratio}
        click.echo(f"sweep {sizes[0]}..{sizes[-1]}: median CTC ratio {ratio:.2f}")
    write_text(out_dir / "half_split.json", dump_json(report))
    return EXIT_OK


# --------------------------------------------------------------------------
# estimate


def _summary(cfg_dict: dict) -> list[str]:
    perf, rav = cfg_dict["perf"], cfg_dict["rav"]
    lines = [
        f"RAV: sp={rav['sp']} batch={rav['batch']} dsp={rav['dsp_split']:.4f} "
        f"bram={rav['bram_split']:.4f} bw={rav['bw_split']:.4f}",
        f"throughput: {perf['throughput_gops']:.2f} GOP/s ({perf['throughput_inf_s']:.2f} inf/s)",
        f"DSP efficiency: {perf['dsp_efficiency']:.4f} ({perf['dsp_used']} DSPs)",
        f"BRAM: {perf['bram_used_bits']} bits",
    ]
    if cfg_dict["pipeline"]:
        lines.append("pipeline stages:")
        for st in cfg_dict["pipeline"]["stages"]:
            res = {True: "weights resident", False: "weights streamed", None: "no weights"}
            lines.append(f"  {st['layer']}: CPF={st['cpf']} KPF={st['kpf']} {res[st['resident_weights']]}")
    if cfg_dict["generic"]:
        g = cfg_dict["generic"]
        lines.append(
            f"generic engine: CPF={g['cpf']} KPF={g['kpf']} strategy {g['label']} "
            f"abuff={g['cap_abuff']} wbuff={g['cap_wbuff']} "
            f"bw w/ifm/ofm={g['bw_w']:.4g}/{g['bw_ifm']:.4g}/{g['bw_ofm']:.4g}"
        )
    return lines


@cli.command()
@click.option("--network", required=True, help="Network JSON file or bundled name.")
@click.option("--fpga", required=True, help="FPGA JSON file or bundled name.")
@click.option("--sp", type=int, required=True, help="Split point: layers [0, sp) go to the pipeline.")
@click.option("--batch", type=int, default=1, show_default=True)
@click.option("--dsp-split", default=None, help="Pipeline share of DSPs (e.g. 0.25 or 1/4).")
@click.option("--bram-split", default=None, help="Pipeline share of BRAM.")
@click.option("--bw-split", default=None, help="Pipeline share of bandwidth.")
@click.option("--grid", "bw_grid", type=int, default=16, show_default=True,
              help="Generic buffer/bandwidth search lattice (1/grid steps).")
@click.option("--strategy", type=click.Choice(["1", "2is", "2ws", "auto"]), default="auto", show_default=True)
@click.option("--out", default="out", show_default=True)
def estimate(network, fpga, sp, batch, dsp_split, bram_split, bw_split, bw_grid, strategy, out):
    """Performance of one resource allocation vector."""
    net, dev = _read_input(network, "networks"), _read_input(fpga, "fpgas")
    n = len(net.model.layers)
    splits = [_fraction_arg(v) for v in (dsp_split, bram_split, bw_split)]
    if sp in (0, n):
        default = Fraction(1 if sp == n else 0)
        splits = [default if v is None else v for v in splits]
    elif any(v is None for v in splits):
        raise click.UsageError("a split point inside the network needs --dsp-split, --bram-split and --bw-split")
    try:
        rav = ResourceAllocationVector(sp, batch, *splits)
        rav.check(n)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None
    if bw_grid < 1:
        raise click.UsageError("--grid must be >= 1")

    run = RunConfig("estimate", network, fpga, out, {"rav": rav.to_dict(), "grid": bw_grid, "strategy": strategy})
    prov = provenance(run, {"network": net.digest, "fpga": dev.digest})
    cfg = Evaluator(net.model, dev.model, bw_grid, strategy).evaluate(rav)
    body = config_to_dict(cfg, net.model.layers)
    write_text(_out_dir(out) / "estimate.json", dump_json({"provenance": prov, "config": body}))
    if not cfg.feasible:
        click.echo(f"infeasible: {cfg.reason}", err=True)
        return EXIT_INFEASIBLE
    for line in _summary(body):
        click.echo(line)
    return EXIT_OK


# --------------------------------------------------------------------------
# explore


@cli.command("explore")
@click.option("--network", required=True, help="Network JSON file or bundled name.")
@click.option("--fpga", required=True, help="FPGA JSON file or bundled name.")
@click.option("--grid", type=int, default=16, show_default=True, help="Resource split lattice (1/grid steps).")
@click.option("--bw-grid", type=int, default=16, show_default=True,
              help="Generic buffer/bandwidth lattice (1/grid steps).")
@click.option("--batch-max", type=int, default=16, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--restarts", type=int, default=8, show_default=True)
@click.option("--strategy", type=click.Choice(["1", "2is", "2ws", "auto"]), default="auto", show_default=True)
@click.option("--threads", type=int, default=None, help="Worker processes (default: ACCELX_THREADS or 1).")
@click.option("--out", default="out", show_default=True)
def explore_cmd(network, fpga, grid, bw_grid, batch_max, seed, restarts, strategy, threads, out):
    """Search split point, batch and resource shares for the best accelerator."""
    net, dev = _read_input(network, "networks"), _read_input(fpga, "fpgas")
    try:
        opts = ExploreOptions(grid=grid, bw_grid=bw_grid, batch_max=batch_max, seed=seed,
                              restarts=restarts, strategy=strategy, threads=threads)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None
    # thread count changes speed only, so it stays out of the provenance
    run = RunConfig("explore", network, fpga, out, {
        "grid": grid, "bw_grid": bw_grid, "batch_min": 1, "batch_max": batch_max, "seed": seed,
        "restarts": restarts, "strategy": strategy})
    prov = provenance(run, {"network": net.digest, "fpga": dev.digest})
    out_dir = _out_dir(out)
    try:
        result = explore_full(net.model, dev.model, opts)
    except InfeasibleError as exc:
        write_text(out_dir / "best.json", dump_json({
            "provenance": prov, "feasible": False, "reason": str(exc), "per_sp": exc.details.get("per_sp", {})}))
        click.echo(f"infeasible: {exc}", err=True)
        for sp, reason in sorted(exc.details.get("per_sp", {}).items()):
            click.echo(f"  sp={sp}: {reason}", err=True)
        return EXIT_INFEASIBLE

    n = len(net.model.layers)
    body = config_to_dict(result.best, net.model.layers)
    best_gops = result.best.perf.throughput_gops
    pure = {}
    for label, sp in (("pure_generic", 0), ("pure_pipeline", n)):
        key = result.per_sp_best.get(sp)
        pure[label] = None if key is None else {"gops": key[0], "dsp_efficiency": key[1]}
    dominance = {
        label: (entry is None or best_gops >= entry["gops"]) for label, entry in pure.items()
    }
    if pure["pure_pipeline"]:
        dominance["speedup_over_pure_pipeline"] = best_gops / pure["pure_pipeline"]["gops"]
    report = {"provenance": prov, "config": body, "baselines": pure, "dominance": dominance,
              "evaluations": result.evaluations}
    write_text(out_dir / "best.json", dump_json(report))
    rows = [[getattr(row, f) for f in TRACE_FIELDS] for row in result.trace]
    write_text(out_dir / "trace.csv", csv_text(TRACE_FIELDS, rows, _provenance_lines(prov)))
    lines = [f"{net.model.name} on {dev.model.name}: {result.evaluations} points evaluated"]
    lines += _summary(body)
    for label, entry in pure.items():
        lines.append(f"{label}: " + ("infeasible" if entry is None else f"{entry['gops']:.2f} GOP/s"))
    write_text(out_dir / "summary.txt", "\n".join(lines) + "\n")
    for line in lines:
        click.echo(line)
    return EXIT_OK


# --------------------------------------------------------------------------
# validate


@cli.command()
@click.option("--instances", type=int, default=1000, show_default=True,
              help="Random layer/plan pairs checked against the simulator.")
@click.option("--fixtures", type=int, default=40, show_default=True,
              help="Toy networks checked against brute-force search.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", default="out", show_default=True)
def validate(instances, fixtures, seed, out):
    """Compare the analytic model and the search against the oracles."""
    from .validation import check_search, check_simulator

    if instances < 0 or fixtures < 0:
        raise click.UsageError("--instances and --fixtures must be >= 0")
    run = RunConfig("validate", None, None, out, {"instances": instances, "fixtures": fixtures, "seed": seed})
    prov = provenance(run, {})
    sim = check_simulator(instances, seed)
    search = check_search(fixtures, seed)
    report = {
        "provenance": prov,
        "simulator": {"instances": instances, "violations": sim.violations,
                      "max_deviation_group_periods": float(sim.max_deviation), "passed": sim.passed},
        "search": {"fixtures": fixtures, "mismatches": _listify(search.mismatches),
                   "infeasible_both": search.infeasible_both, "passed": search.passed},
    }
    write_text(_out_dir(out) / "validate.json", dump_json(report))
    click.echo(f"simulator: {instances - len(sim.violations)}/{instances} within 2 group periods "
               f"(max deviation {float(sim.max_deviation):.3f})")
    click.echo(f"search: {fixtures - len(search.mismatches)}/{fixtures} toy fixtures match brute force")
    if sim.passed and search.passed:
        return EXIT_OK
    for v in sim.violations:
        click.echo(f"  simulator instance {v['instance']}: analytic={v['analytic']:.6g} sim={v['sim']:.6g}", err=True)
    for m in search.mismatches:
        click.echo(f"  fixture {m['fixture']}: explore={m['explore']} brute force={m['brute_force']}", err=True)
    return EXIT_VALIDATION


def _listify(items):
    return [{k: (list(v) if isinstance(v, tuple) else v) for k, v in item.items()} for item in items]


# --------------------------------------------------------------------------


def main(argv=None) -> int:
    try:
        code = cli.main(args=argv, prog_name="accelx", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USER
    except click.ClickException as exc:
        exc.show()
        return EXIT_USER
    except InfeasibleError as exc:
        click.echo(f"infeasible: {exc}", err=True)
        return EXIT_INFEASIBLE
    except (AccelxError, ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USER
    return code if isinstance(code, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
