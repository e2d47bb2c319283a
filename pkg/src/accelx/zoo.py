"""Builders for the networks shipped under ``accelx/data/networks``.

The JSON files are generated from these functions (``python -m accelx.zoo``)
and the test-suite checks they stay in sync.
"""

from __future__ import annotations

import json
from pathlib import Path

from .model_ir import LayerKind, LayerSpec, NetworkModel, network_to_dict

VGG_CHANNELS = (64, 128, 256, 512, 512)

# convolutions per block; pooling closes every block
VGG_BLOCKS = {
    "vgg16": (2, 2, 3, 3, 3),
    "vgg19": (2, 2, 4, 4, 4),
    "vgglike_13": (2, 2, 3, 3, 3),
    "vgglike_19": (2, 2, 5, 5, 5),
    "vgglike_25": (2, 2, 7, 7, 7),
    "vgglike_31": (2, 2, 9, 9, 9),
    "vgglike_38": (2, 2, 11, 11, 12),
}


def vgg(name: str, blocks, size: int = 224, width: int = 16) -> NetworkModel:
    layers = []
    c, h = 3, size
    for b, (convs, k) in enumerate(zip(blocks, VGG_CHANNELS), start=1):
        for i in range(1, convs + 1):
            layers.append(LayerSpec(f"conv{b}_{i}", LayerKind.CONV, h, h, c, k, 3, 3, width, width))
            c = k
        h //= 2
        layers.append(LayerSpec(f"pool{b}", LayerKind.POOL, h, h, c, c, 2, 2, width, width))
    return NetworkModel(name, (3, size, size), tuple(layers))


def alexnet(width: int = 16) -> NetworkModel:
    conv, pool, fc = LayerKind.CONV, LayerKind.POOL, LayerKind.FC
    layers = (
        LayerSpec("conv1", conv, 55, 55, 3, 96, 11, 11, width, width),
        LayerSpec("pool1", pool, 27, 27, 96, 96, 3, 3, width, width),
        LayerSpec("conv2", conv, 27, 27, 96, 256, 5, 5, width, width),
        LayerSpec("pool2", pool, 13, 13, 256, 256, 3, 3, width, width),
        LayerSpec("conv3", conv, 13, 13, 256, 384, 3, 3, width, width),
        LayerSpec("conv4", conv, 13, 13, 384, 384, 3, 3, width, width),
        LayerSpec("conv5", conv, 13, 13, 384, 256, 3, 3, width, width),
        LayerSpec("pool5", pool, 6, 6, 256, 256, 3, 3, width, width),
        LayerSpec("fc6", fc, 1, 1, 9216, 4096, 1, 1, width, width),
        LayerSpec("fc7", fc, 1, 1, 4096, 4096, 1, 1, width, width),
        LayerSpec("fc8", fc, 1, 1, 4096, 1000, 1, 1, width, width),
    )
    return NetworkModel("alexnet", (3, 227, 227), layers)


def all_networks() -> dict[str, NetworkModel]:
    nets = {name: vgg(name, blocks) for name, blocks in VGG_BLOCKS.items()}
    nets["alexnet"] = alexnet()
    return nets


def write_bundled(directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for name, net in all_networks().items():
        text = json.dumps(network_to_dict(net), indent=1)
        (directory / f"{name}.json").write_text(text + "\n")


if __name__ == "__main__":
    write_bundled(Path(__file__).parent / "data" / "networks")
