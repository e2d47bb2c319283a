"""Compiled inner loop of the generic buffer/bandwidth search.

Mirrors the scalar formulas in :mod:`accelx.analytic` operation for operation
so both paths produce bit-identical floats.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

STRATEGY_CODES = {"1": 0, "2is": 1, "2ws": 2}


@njit(cache=True)
def _div(num, den):
    if num == 0:
        return 0.0
    if den == 0.0:
        return math.inf
    return num / den


@njit(cache=True)
def _ceil_div(a, b):
    return -(-a // b)


@njit(cache=True)
def _config_totals(lc_b, in_bits, out_bits, w_bits, row_bits, slice_bits, dw,
                   batch, ws, cap_a, cap_w, bw, grid, best):
    n = lc_b.shape[0]
    g = np.empty(n, dtype=np.int64)
    res = np.empty(n, dtype=np.bool_)
    for k in range(n):
        if ws:
            if 2 * slice_bits[k] > cap_w or cap_a < 2 * dw[k]:
                return False
            if w_bits[k] == 0:
                g[k] = 1
            else:
                g[k] = max(1, _ceil_div(2 * w_bits[k], cap_w))
            res[k] = False
        else:
            if 2 * row_bits[k] > cap_a:
                return False
            g[k] = max(1, _ceil_div(2 * out_bits[k], cap_a))
            res[k] = 2 * max(in_bits[k], out_bits[k]) <= cap_a
    improved = False
    for i in range(grid + 1):
        bw_w = bw * i / grid
        for j in range(grid + 1 - i):
            bw_ifm = bw * j / grid
            bw_ofm = bw * (grid - i - j) / grid
            total = 0.0
            mem = 0.0
            ok = True
            for k in range(n):
                l_w = _div(w_bits[k], bw_w)
                if ws:
                    a = (batch * _div(in_bits[k], bw_ifm)) * g[k]
                    b = (batch * _div(out_bits[k], bw_ofm)) * g[k]
                    m = max(l_w, a, b)
                elif res[k]:
                    m = l_w * g[k]
                else:
                    m = max(l_w * g[k], batch * _div(in_bits[k], bw_ifm),
                            batch * _div(out_bits[k], bw_ofm))
                if m == math.inf:
                    ok = False
                    break
                total += max(lc_b[k], m)
                mem += m
            if not ok:
                continue
            if total < best[0] or (total == best[0] and mem < best[1]):
                best[0] = total
                best[1] = mem
                best[2] = i
                best[3] = j
                improved = True
    return improved


@njit(cache=True)
def search_generic(lc_b, in_bits, out_bits, w_bits, row_bits, slice_bits, dw,
                   batch, bram, bw, grid, s1, s2is, s2ws):
    """Returns (code, cap_abuff, i, j, total, memory); code -1 if infeasible."""
    best = np.array([math.inf, math.inf, 0.0, 0.0])
    code = -1
    cap_best = 0
    if s1:
        if _config_totals(lc_b, in_bits, out_bits, w_bits, row_bits, slice_bits, dw,
                          batch, False, bram, 0, bw, grid, best):
            code = 0
            cap_best = bram
    for c, flag in ((1, s2is), (2, s2ws)):
        if not flag:
            continue
        for a in range(1, grid):
            cap_a = bram * a // grid
            if _config_totals(lc_b, in_bits, out_bits, w_bits, row_bits, slice_bits, dw,
                              batch, c == 2, cap_a, bram - cap_a, bw, grid, best):
                code = c
                cap_best = cap_a
    return code, cap_best, int(best[2]), int(best[3]), best[0], best[1]
