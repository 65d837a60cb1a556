"""Compiled inner loops: counter-based noise and bulk failure evaluation.

Every cell owns a 64-bit counter built from its physical coordinate; the
counter is hashed with splitmix64 under a key derived from (seed, parameter),
so the noise of a cell never depends on evaluation order.
"""

import math

import numpy as np
from numba import njit, uint64

MASK64 = (1 << 64) - 1
# |z| can never exceed this: the smallest uniform we produce is 2**-54.
Z_BOUND = 8.5

_SCALE = 1.0 / 9007199254740992.0  # 2**-53


@njit(cache=True, inline="always")
def splitmix64(x):
    x = x + uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> uint64(30))) * uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> uint64(27))) * uint64(0x94D049BB133111EB)
    return x ^ (x >> uint64(31))


@njit(cache=True)
def ndtri(p):
    """Inverse standard normal CDF (Wichura's AS241, ~1e-16 relative)."""
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2509.0809287301226727 * r + 33430.575583588128105) * r
                    + 67265.770927008700853) * r + 45921.953931549871457) * r
                  + 13731.693765509461125) * r + 1971.5909503065514427) * r
                + 133.14166789178437745) * r + 3.387132872796366608)
        den = (((((((5226.495278852545925 * r + 28729.085735721942674) * r
                    + 39307.89580009271061) * r + 21213.794301586595867) * r
                  + 5394.1960214247511077) * r + 687.1870074920579083) * r
                + 42.313330701600911252) * r + 1.0)
        return q * num / den
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        num = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r
                    + 0.24178072517745061177) * r + 1.27045825245236838258) * r
                  + 3.64784832476320460504) * r + 5.7694972214606914055) * r
                + 4.6303378461565452959) * r + 1.42343711074968357734)
        den = (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r
                    + 0.0151986665636164571966) * r + 0.14810397642748007459) * r
                  + 0.68976733498510000455) * r + 1.6763848301838038494) * r
                + 2.05319162663775882187) * r + 1.0)
    else:
        r -= 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 0.0012426609473880784386) * r + 0.026532189526576123093) * r
                  + 0.29656057182850489123) * r + 1.7848265399172913358) * r
                + 5.4637849111641143699) * r + 6.6579046435011037772)
        den = (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r
                    + 1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r
                  + 0.0148753612908506148525) * r + 0.13692988092273580531) * r
                + 0.59983220655588793769) * r + 1.0)
    val = num / den
    return -val if q < 0.0 else val


@njit(cache=True, inline="always")
def cell_z(counter, key):
    h = splitmix64(uint64(counter) ^ key)
    u = (float(h >> uint64(11)) + 0.5) * _SCALE
    return ndtri(u)


@njit(cache=True, inline="always")
def cell_value(ext_row, dq, pattern_bits, inverted, stripe):
    v = pattern_bits[dq & 3] ^ inverted
    if stripe and (ext_row & 1) == 0:
        v ^= 1
    return v


@njit(cache=True, inline="always")
def ndtr(x):
    return 0.5 * math.erfc(-x * 0.7071067811865476)


@njit(cache=True)
def fail_bits(int_rows, ext_rows, cols, mat_tab, lc_tab, det, row_max, margin, sigma,
              chips, bank, banks, subarrays, mats, key, pattern_bits, inverted, stripe,
              needs_charge):
    """Failure bitmasks, ``out[i, j, chip, beat]`` bit ``d`` set when data-out
    bit ``d`` of that beat fails.

    A cell fails when ``det + sigma * z > margin``.  Rather than inverting
    the normal CDF per cell, its uniform draw ``u`` is compared with
    ``Phi((margin - det) / sigma)``, which is the same event and lets the
    eight chips share one threshold.  With ``needs_charge`` the failure only
    shows on cells holding a 1; otherwise the preceding access held the
    opposite value and every cell can show it.  ``row_max[lr]`` is the
    largest ``det`` in local row ``lr``; rows that cannot fail are skipped.
    """
    n_rows = int_rows.shape[0]
    n_cols = cols.shape[0]
    beats = mat_tab.shape[1]
    bits = mat_tab.shape[2]
    out = np.zeros((n_rows, n_cols, chips, beats), np.uint8)
    slack = sigma * Z_BOUND
    for i in range(n_rows):
        ir = int_rows[i]
        sub = ir // 512
        lr = ir % 512
        if row_max[lr] + slack <= margin:
            continue
        er = ext_rows[i]
        for j in range(n_cols):
            c = cols[j]
            for b in range(beats):
                for d in range(bits):
                    if needs_charge and cell_value(er, d, pattern_bits, inverted, stripe) == 0:
                        continue
                    m = mat_tab[c, b, d]
                    lc = lc_tab[c, b, d]
                    base = det[m, lr, lc]
                    if sigma == 0.0:
                        if base > margin:
                            for chip in range(chips):
                                out[i, j, chip, b] |= np.uint8(1 << d)
                        continue
                    t = ndtr((margin - base) / sigma)
                    if t >= 1.0:
                        continue
                    for chip in range(chips):
                        ctr = ((((chip * banks + bank) * subarrays + sub) * mats + m) * 512 + lr) * 512 + lc
                        h = splitmix64(uint64(ctr) ^ key)
                        if (float(h >> uint64(11)) + 0.5) * _SCALE > t:
                            out[i, j, chip, b] |= np.uint8(1 << d)
    return out


@njit(cache=True)
def critical_latency(int_rows, ext_rows, cols, mat_tab, lc_tab, det, chips, bank,
                     banks, subarrays, mats, floor, sigma, key, pattern_bits,
                     inverted, stripe, needs_charge):
    """Largest requirement over the manifesting cells of each request.

    Requests whose cells all lie below ``floor`` report ``-inf``.  A request
    fails at applied value ``v`` under environment shift ``e`` iff
    ``crit + e > v``, so one pass answers every (v, e) above ``floor``.
    """
    n_rows = int_rows.shape[0]
    n_cols = cols.shape[0]
    beats = mat_tab.shape[1]
    bits = mat_tab.shape[2]
    out = np.full((n_rows, n_cols), -np.inf)
    slack = sigma * Z_BOUND
    for i in range(n_rows):
        ir = int_rows[i]
        sub = ir // 512
        lr = ir % 512
        er = ext_rows[i]
        for j in range(n_cols):
            c = cols[j]
            best = -np.inf
            for b in range(beats):
                for d in range(bits):
                    if needs_charge and cell_value(er, d, pattern_bits, inverted, stripe) == 0:
                        continue
                    m = mat_tab[c, b, d]
                    lc = lc_tab[c, b, d]
                    base = det[m, lr, lc]
                    if base + slack <= floor or base + slack <= best:
                        continue
                    if sigma == 0.0:
                        if base > best:
                            best = base
                        continue
                    for chip in range(chips):
                        ctr = ((((chip * banks + bank) * subarrays + sub) * mats + m) * 512 + lr) * 512 + lc
                        r = base + sigma * cell_z(ctr, key)
                        if r > best:
                            best = r
            out[i, j] = best
    return out


def param_key(seed: int, param_index: int) -> np.uint64:
    """Stream key for one timing parameter of one device seed."""
    s = np.uint64(seed & MASK64)
    return np.uint64(splitmix64(s ^ np.uint64(splitmix64(np.uint64(param_index + 1)))))
