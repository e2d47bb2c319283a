"""JSON/CSV serialization of plans, estimates and run provenance."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Sequence

from . import __version__
from .allocation import PipelinePlanSet
from .analytic import GenericPlan, PerfEstimate
from .dse import ArchitectureConfig


@dataclass
class RunConfig:
    command: str
    network: str | None = None
    fpga: str | None = None
    out: str | None = None
    options: dict = field(default_factory=dict)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _plain(value):
    if isinstance(value, Fraction):
        return float(value)
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if hasattr(value, "value") and not isinstance(value, (int, float, str)):
        return value.value
    return value


def perf_to_dict(perf: PerfEstimate) -> dict:
    return {
        "throughput_gops": perf.throughput_gops,
        "throughput_inf_s": perf.throughput_inf_s,
        "dsp_efficiency": perf.dsp_efficiency,
        "total_latency_s": perf.total_latency,
        "batch": perf.batch,
        "dsp_used": perf.dsp_used,
        "bram_used_bits": perf.bram_used,
        "bw_used_bits_per_s": perf.bw_used,
        "per_layer": [_plain(asdict(p)) for p in perf.per_layer],
    }


def pipeline_to_dict(plan: PipelinePlanSet, layers: Sequence) -> dict:
    return {
        "dsp_used": plan.dsp_used,
        "bram_used_bits": plan.bram_used,
        "bw_used_bits_per_s": plan.bw_used,
        "max_stage_cycles": float(plan.max_cycles),
        "continuous_bound_cycles": float(plan.continuous_bound),
        "equal_split_bound_cycles": float(plan.equal_split_bound),
        "stages": [
            {
                "layer": layers[st.layer_index].name,
                "cpf": st.cpf,
                "kpf": st.kpf,
                "resident_weights": plan.resident[i] if plan.resident and layers[i].has_weights else None,
                "stream_bits": plan.stream_bits[i] if plan.stream_bits else 0,
                "stream_bw": plan.stage_bw[i] if plan.stage_bw else 0.0,
            }
            for i, st in enumerate(plan.stages)
        ],
    }


def generic_to_dict(plan: GenericPlan) -> dict:
    out = _plain(asdict(plan))
    out["label"] = plan.label
    return out


def config_to_dict(cfg: ArchitectureConfig, layers: Sequence) -> dict:
    sp = cfg.rav.sp
    return {
        "rav": cfg.rav.to_dict(),
        "feasible": cfg.feasible,
        "reason": cfg.reason,
        "pipeline": pipeline_to_dict(cfg.pipeline, layers[:sp]) if cfg.pipeline else None,
        "generic": generic_to_dict(cfg.generic) if cfg.generic else None,
        "perf": perf_to_dict(cfg.perf) if cfg.perf else None,
    }


def provenance(run: RunConfig, digests: dict[str, str]) -> dict:
    return {"tool": "accelx", "version": __version__, "inputs": digests, "run_config": asdict(run)}


def dump_json(data: Any) -> str:
    return json.dumps(_plain(data), indent=2, sort_keys=True) + "\n"


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def csv_text(header: Sequence[str], rows: Iterable[Sequence], comments: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_plain(v) for v in row])
    return buf.getvalue()
