"""Network and platform data model, JSON ingestion and workload statistics.

Layers carry their *output* feature-map height/width explicitly; input
dimensions are resolved from the previous layer when a :class:`NetworkModel`
is built, so pooling, padding and stride never have to be inferred.
"""

from __future__ import annotations

import enum
import json
import statistics
from dataclasses import dataclass, field, replace
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import DegenerateSplitError, ModelError

VALID_WIDTHS = (8, 16, 32)


class LayerKind(str, enum.Enum):
    CONV = "conv"
    POOL = "pool"
    FC = "fc"


class CtcModel(str, enum.Enum):
    """Which off-chip traffic the CTC denominator counts.

    OFFCHIP: input fmap + output fmap + weights, nothing reused on chip.
    WEIGHTS: weights only; feature maps never leave the chip, as in a
        layer-pipelined design.  Undefined for weight-free layers.
    """

    OFFCHIP = "offchip"
    WEIGHTS = "weights"


@dataclass(frozen=True)
class LayerSpec:
    """One CONV / POOL / FC layer.

    h, w: output feature-map height and width.
    c, k: input and output channels (POOL: k == c).
    r, s: kernel height and width.
    dw, ww: activation and weight width in bits.
    in_h, in_w: input feature-map size; filled in by :class:`NetworkModel`,
        defaults to the output size for stand-alone layers.
    """

    name: str
    kind: LayerKind
    h: int
    w: int
    c: int
    k: int
    r: int = 1
    s: int = 1
    dw: int = 16
    ww: int = 16
    in_h: int | None = None
    in_w: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        for attr in ("h", "w", "c", "k", "r", "s"):
            value = getattr(self, attr)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ModelError(f"{attr} must be an integer >= 1, got {value!r}", attr)
        for attr in ("in_h", "in_w"):
            value = getattr(self, attr)
            if value is not None and (not isinstance(value, int) or value < 1):
                raise ModelError(f"{attr} must be an integer >= 1, got {value!r}", attr)
        for attr in ("dw", "ww"):
            if getattr(self, attr) not in VALID_WIDTHS:
                raise ModelError(
                    f"{attr} must be one of {VALID_WIDTHS}, got {getattr(self, attr)!r}", attr
                )
        if self.kind is LayerKind.POOL and self.k != self.c:
            raise ModelError(f"pool layer must have k == c ({self.k} != {self.c})", "k")
        if self.kind is LayerKind.FC and (self.h, self.w, self.r, self.s) != (1, 1, 1, 1):
            raise ModelError("fc layer must have h = w = r = s = 1", "h")

    @property
    def input_h(self) -> int:
        return self.h if self.in_h is None else self.in_h

    @property
    def input_w(self) -> int:
        return self.w if self.in_w is None else self.in_w

    @property
    def has_weights(self) -> bool:
        return self.kind is not LayerKind.POOL

    @property
    def macs(self) -> int:
        return layer_macs(self)

    @property
    def input_bits(self) -> int:
        return self.input_h * self.input_w * self.c * self.dw

    @property
    def output_bits(self) -> int:
        return self.h * self.w * self.k * self.dw

    @property
    def weight_bits(self) -> int:
        if not self.has_weights:
            return 0
        return self.r * self.s * self.c * self.k * self.ww

    @property
    def ops(self) -> int:
        """Arithmetic operations executed on DSPs (2 per MAC, POOL: 0)."""
        return 2 * self.macs if self.has_weights else 0


@dataclass(frozen=True)
class NetworkModel:
    name: str
    input_shape: tuple[int, int, int]  # (channels, height, width)
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        if len(self.input_shape) != 3 or any(
            not isinstance(v, int) or v < 1 for v in self.input_shape
        ):
            raise ModelError(f"input shape must be 3 positive integers, got {self.input_shape!r}", "input")
        if not self.layers:
            raise ModelError("network has no layers", "layers")
        object.__setattr__(self, "layers", _resolve_inputs(self.input_shape, self.layers))

    def __len__(self):
        return len(self.layers)

    @property
    def total_macs(self) -> int:
        return sum(layer.macs for layer in self.layers)

    @property
    def total_ops(self) -> int:
        return sum(layer.ops for layer in self.layers)

    @property
    def max_width(self) -> int:
        return max(max(layer.dw, layer.ww) for layer in self.layers)


def _resolve_inputs(input_shape, layers) -> tuple[LayerSpec, ...]:
    c, h, w = input_shape
    producer = "network input"
    resolved = []
    for i, layer in enumerate(layers):
        where = f"layers[{i}]"
        if layer.kind is LayerKind.FC:
            if layer.c != c * h * w:
                raise ModelError(
                    f"layer '{layer.name}' expects C={layer.c} but {producer} "
                    f"produces {c}x{h}x{w} = {c * h * w} values",
                    f"{where}.c",
                )
            in_h = in_w = 1
        else:
            if layer.c != c:
                raise ModelError(
                    f"layer '{layer.name}' expects C={layer.c} but {producer} produces K={c}",
                    f"{where}.c",
                )
            in_h, in_w = h, w
        if (layer.in_h, layer.in_w) not in ((None, None), (in_h, in_w)):
            raise ModelError(
                f"layer '{layer.name}' declares input {layer.in_h}x{layer.in_w} "
                f"but {producer} produces {in_h}x{in_w}",
                f"{where}.in_h",
            )
        resolved.append(replace(layer, in_h=in_h, in_w=in_w))
        c, h, w = layer.k, layer.h, layer.w
        producer = f"layer '{layer.name}'"
    return tuple(resolved)


@dataclass(frozen=True)
class FpgaSpec:
    """Platform budget: DSP count, BRAM bits, off-chip bits/s, clock Hz.

    ``alpha`` maps a data width to the per-DSP, per-cycle throughput factor of
    the DSP-efficiency metric (2 for 16-bit, 4 for 8-bit).
    """

    name: str
    dsp: int
    bram_bits: int
    bw: float
    freq: float
    alpha: Mapping[int, int] = field(default_factory=lambda: {8: 4, 16: 2})

    def __post_init__(self):
        for attr in ("dsp", "bram_bits", "bw", "freq"):
            value = getattr(self, attr)
            if not isinstance(value, (int, float, Fraction)) or value <= 0:
                raise ModelError(f"{attr} must be strictly positive, got {value!r}", attr)
        alpha = {int(k): v for k, v in dict(self.alpha).items()}
        for width in (8, 16):
            if width not in alpha:
                raise ModelError(f"alpha table must define width {width}", "alpha")
        for width, value in alpha.items():
            if not isinstance(value, int) or value < 1:
                raise ModelError(f"alpha[{width}] must be a positive integer", "alpha")
        object.__setattr__(self, "alpha", alpha)

    def alpha_for(self, width: int) -> int:
        try:
            return self.alpha[width]
        except KeyError:
            raise ModelError(f"no alpha entry for {width}-bit data on {self.name}", "alpha") from None


@dataclass(frozen=True)
class LayerProfile:
    name: str
    kind: LayerKind
    macs: int
    input_bits: int
    output_bits: int
    weight_bits: int
    ctc: float  # MACs per byte of off-chip traffic
    weight_ctc: float | None  # MACs per byte of weights; None for POOL

    def ctc_for(self, model: CtcModel) -> float | None:
        return self.ctc if CtcModel(model) is CtcModel.OFFCHIP else self.weight_ctc


@dataclass(frozen=True)
class HalfSplitReport:
    split_index: int
    v1: float
    v2: float
    ratio: float | None  # None when v2 == 0


# --------------------------------------------------------------------------
# ingestion

_LAYER_FIELDS = ("name", "kind", "h", "w", "c", "k", "r", "s", "dw", "ww")


def _require(mapping, key, where, kind=None):
    if not isinstance(mapping, dict):
        raise ModelError("expected an object", where)
    if key not in mapping:
        raise ModelError(f"missing field '{key}'", where)
    value = mapping[key]
    if kind is int and (not isinstance(value, int) or isinstance(value, bool)):
        raise ModelError(f"'{key}' must be an integer, got {value!r}", f"{where}.{key}")
    if kind is str and not isinstance(value, str):
        raise ModelError(f"'{key}' must be a string, got {value!r}", f"{where}.{key}")
    if kind is float and (not isinstance(value, (int, float)) or isinstance(value, bool)):
        raise ModelError(f"'{key}' must be a number, got {value!r}", f"{where}.{key}")
    return value


def _parse_json(document: str | bytes | Mapping[str, Any]):
    if isinstance(document, Mapping):
        return dict(document)
    try:
        return json.loads(document)
    except json.JSONDecodeError as exc:
        raise ModelError(exc.msg, f"line {exc.lineno}:{exc.colno}") from None


def network_from_dict(doc: Mapping[str, Any]) -> NetworkModel:
    name = _require(doc, "name", "$", str)
    shape = _require(doc, "input", "$")
    input_shape = tuple(_require(shape, key, "$.input", int) for key in ("c", "h", "w"))
    raw_layers = _require(doc, "layers", "$")
    if not isinstance(raw_layers, list):
        raise ModelError("'layers' must be a list", "$.layers")
    if not raw_layers:
        raise ModelError("network has no layers", "$.layers")
    layers = []
    for i, raw in enumerate(raw_layers):
        where = f"layers[{i}]"
        values = {}
        for key in _LAYER_FIELDS:
            if key in ("name", "kind"):
                values[key] = _require(raw, key, where, str)
            else:
                values[key] = _require(raw, key, where, int)
        try:
            values["kind"] = LayerKind(values["kind"].lower())
        except ValueError:
            raise ModelError(f"unknown layer kind {values['kind']!r}", f"{where}.kind") from None
        try:
            layers.append(LayerSpec(**values))
        except ModelError as exc:
            raise ModelError(str(exc).split(": ", 1)[-1], f"{where}.{exc.location}") from None
    return NetworkModel(name=name, input_shape=input_shape, layers=tuple(layers))


def load_network(document: str | bytes | Mapping[str, Any]) -> NetworkModel:
    """Parse and validate a network JSON document."""
    return network_from_dict(_parse_json(document))


def network_to_dict(network: NetworkModel) -> dict[str, Any]:
    c, h, w = network.input_shape
    return {
        "name": network.name,
        "input": {"c": c, "h": h, "w": w},
        "layers": [
            {key: (getattr(layer, key).value if key == "kind" else getattr(layer, key))
             for key in _LAYER_FIELDS}
            for layer in network.layers
        ],
    }


def load_fpga(document: str | bytes | Mapping[str, Any]) -> FpgaSpec:
    """Parse and validate an FPGA JSON document."""
    doc = _parse_json(document)
    alpha = _require(doc, "alpha", "$")
    if not isinstance(alpha, dict):
        raise ModelError("'alpha' must be an object", "$.alpha")
    try:
        alpha = {int(width): value for width, value in alpha.items()}
    except ValueError:
        raise ModelError("alpha keys must be bit widths", "$.alpha") from None
    return FpgaSpec(
        name=_require(doc, "name", "$", str),
        dsp=_require(doc, "dsp", "$", int),
        bram_bits=_require(doc, "bram_bits", "$", int),
        bw=_require(doc, "bw_bits_per_s", "$", float),
        freq=_require(doc, "freq_hz", "$", float),
        alpha=alpha,
    )


def fpga_to_dict(fpga: FpgaSpec) -> dict[str, Any]:
    return {
        "name": fpga.name,
        "dsp": fpga.dsp,
        "bram_bits": fpga.bram_bits,
        "bw_bits_per_s": fpga.bw,
        "freq_hz": fpga.freq,
        "alpha": {str(k): v for k, v in sorted(fpga.alpha.items())},
    }


def _data_dir(kind: str):
    return resources.files("accelx") / "data" / kind


def bundled_networks() -> list[str]:
    return sorted(p.name[:-5] for p in _data_dir("networks").iterdir() if p.name.endswith(".json"))


def bundled_fpgas() -> list[str]:
    return sorted(p.name[:-5] for p in _data_dir("fpgas").iterdir() if p.name.endswith(".json"))


def bundled_network(name: str) -> NetworkModel:
    path = _data_dir("networks") / f"{name}.json"
    if not path.is_file():
        raise ModelError(f"no bundled network named {name!r}; have {bundled_networks()}")
    return load_network(path.read_text())


def bundled_fpga(name: str) -> FpgaSpec:
    path = _data_dir("fpgas") / f"{name}.json"
    if not path.is_file():
        raise ModelError(f"no bundled FPGA named {name!r}; have {bundled_fpgas()}")
    return load_fpga(path.read_text())


def read_network(ref: str | Path) -> NetworkModel:
    """Load from a file path, falling back to a bundled model name."""
    path = Path(ref)
    if path.is_file():
        return load_network(path.read_text())
    return bundled_network(str(ref))


def read_fpga(ref: str | Path) -> FpgaSpec:
    path = Path(ref)
    if path.is_file():
        return load_fpga(path.read_text())
    return bundled_fpga(str(ref))


# --------------------------------------------------------------------------
# workload statistics


def layer_macs(layer: LayerSpec) -> int:
    """Exact multiply-accumulate count (POOL: one compare per window element)."""
    if layer.kind is LayerKind.POOL:
        return layer.h * layer.w * layer.r * layer.s * layer.c
    return layer.h * layer.w * layer.r * layer.s * layer.c * layer.k


def layer_ctc(macs: int, traffic_bits: int) -> Fraction:
    if traffic_bits <= 0:
        raise ModelError("layer moves no data; CTC undefined")
    return Fraction(8 * macs, traffic_bits)


def layer_profile(layer: LayerSpec, upstream_h: int, upstream_w: int, upstream_c: int) -> LayerProfile:
    """Bit volumes and CTC of one layer.

    Off-chip traffic counts input fmap + output fmap + weights once each, i.e.
    no on-chip reuse across layers.
    """
    input_bits = upstream_h * upstream_w * upstream_c * layer.dw
    macs = layer_macs(layer)
    ctc = layer_ctc(macs, input_bits + layer.output_bits + layer.weight_bits)
    return LayerProfile(
        name=layer.name,
        kind=layer.kind,
        macs=macs,
        input_bits=input_bits,
        output_bits=layer.output_bits,
        weight_bits=layer.weight_bits,
        ctc=float(ctc),
        weight_ctc=float(layer_ctc(macs, layer.weight_bits)) if layer.weight_bits else None,
    )


def network_profile(network: NetworkModel) -> list[LayerProfile]:
    profiles = []
    for layer in network.layers:
        if layer.kind is LayerKind.FC:
            upstream = (1, 1, layer.c)
        else:
            upstream = (layer.input_h, layer.input_w, layer.c)
        profiles.append(layer_profile(layer, *upstream))
    return profiles


def half_split_index(macs: Sequence[int]) -> int:
    """Smallest s with sum(macs[:s]) >= half of the total."""
    total = sum(macs)
    if total <= 0:
        raise DegenerateSplitError("network has no MACs")
    running = 0
    for i, m in enumerate(macs):
        running += m
        if 2 * running >= total:
            return i + 1
    raise AssertionError("unreachable")


def _pvariance(values: Sequence[float]) -> float:
    return statistics.pvariance(values) if len(values) > 1 else 0.0


def _selected(network, include_pool, ctc_model):
    return [
        (i, p)
        for i, p in enumerate(network_profile(network))
        if p.macs > 0
        and (include_pool or p.kind is not LayerKind.POOL)
        and p.ctc_for(ctc_model) is not None
    ]


def half_split(
    network: NetworkModel,
    include_pool: bool = True,
    ctc_model: CtcModel = CtcModel.OFFCHIP,
) -> HalfSplitReport:
    """Split at 50% cumulative MACs and compare per-half CTC variances.

    ``split_index`` indexes ``network.layers``.  With ``include_pool=False``
    POOL layers are left out of both the MAC split and the variances; under
    ``CtcModel.WEIGHTS`` they are always left out.
    """
    chosen = _selected(network, include_pool, ctc_model)
    if len(chosen) < 2:
        raise DegenerateSplitError("half split needs at least two layers with MACs")
    s = half_split_index([p.macs for _, p in chosen])
    if s >= len(chosen):
        crossing = chosen[s - 1][1].name
        raise DegenerateSplitError(
            f"layer '{crossing}' holds the 50% MAC boundary; second half is empty"
        )
    first = [p.ctc_for(ctc_model) for _, p in chosen[:s]]
    second = [p.ctc_for(ctc_model) for _, p in chosen[s:]]
    v1, v2 = _pvariance(first), _pvariance(second)
    return HalfSplitReport(
        split_index=chosen[s][0],
        v1=v1,
        v2=v2,
        ratio=v1 / v2 if v2 > 0 else None,
    )


def scale_network(network: NetworkModel, height: int, width: int | None = None) -> NetworkModel:
    """Rescale every feature map for a new input resolution."""
    width = height if width is None else width
    _, base_h, base_w = network.input_shape

    def scaled(value, new, base, where):
        if (value * new) % base:
            raise ModelError(
                f"input {height}x{width} does not divide through the layer chain "
                f"({value}*{new}/{base} is not an integer)",
                where,
            )
        return value * new // base

    layers = []
    for i, layer in enumerate(network.layers):
        if layer.kind is LayerKind.FC:
            raise ModelError(
                f"layer '{layer.name}' is fully connected; only convolutional networks rescale",
                f"layers[{i}]",
            )
        layers.append(
            replace(
                layer,
                h=scaled(layer.h, height, base_h, f"layers[{i}].h"),
                w=scaled(layer.w, width, base_w, f"layers[{i}].w"),
                in_h=None,
                in_w=None,
            )
        )
    c = network.input_shape[0]
    return NetworkModel(
        name=f"{network.name}@{height}x{width}",
        input_shape=(c, height, width),
        layers=tuple(layers),
    )


@dataclass(frozen=True)
class SweepRow:
    size: int
    median_ctc: float
    min_ctc: float
    max_ctc: float


def resolution_sweep(
    base: NetworkModel,
    sizes: Iterable[int],
    include_pool: bool = True,
    ctc_model: CtcModel = CtcModel.WEIGHTS,
) -> list[SweepRow]:
    """Per-resolution CTC median/min/max of a fully convolutional network."""
    rows = []
    for size in sizes:
        net = scale_network(base, size)
        ctcs = [p.ctc_for(ctc_model) for _, p in _selected(net, include_pool, ctc_model)]
        rows.append(SweepRow(size, statistics.median(ctcs), min(ctcs), max(ctcs)))
    return rows


DEFAULT_SWEEP = (32, 64, 96, 128, 160, 192, 224, 256, 320, 384, 448, 512)
