"""Analytic design-space exploration for hybrid pipeline/generic FPGA DNN accelerators."""

__version__ = "0.1.0"
