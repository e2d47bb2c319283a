import os

import pytest
from hypothesis import HealthCheck, settings

from accelx.model_ir import FpgaSpec, LayerKind, LayerSpec, NetworkModel, bundled_fpga

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def ku115():
    return bundled_fpga("ku115")


@pytest.fixture
def small_fpga():
    return FpgaSpec("small", dsp=64, bram_bits=36 * 1024 * 64, bw=4e9, freq=100e6, alpha={8: 4, 16: 2})


@pytest.fixture
def two_layer_net():
    layers = (
        LayerSpec("conv1", LayerKind.CONV, 8, 8, 4, 8, 3, 3),
        LayerSpec("conv2", LayerKind.CONV, 8, 8, 8, 8, 3, 3),
    )
    return NetworkModel("two", (4, 8, 8), layers)
