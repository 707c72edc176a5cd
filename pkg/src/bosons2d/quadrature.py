"""Composite quadrature with halving-based error estimates.

Radial integrals against the 2D area element show up in every module,
so the conventions live here: integrate(f) means int_a^b f(r) dr and
radial weighting (the 2*pi*r factor) is applied by the caller.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


def composite_simpson(f: Callable[[np.ndarray], np.ndarray], a: float, b: float,
                      n: int = 128) -> float:
    """Composite Simpson rule with n subintervals (n is forced even)."""
    if b <= a:
        return 0.0
    n = int(n)
    if n % 2:
        n += 1
    r = np.linspace(a, b, n + 1)
    y = np.asarray(f(r), dtype=float)
    h = (b - a) / n
    return float(h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum()))


def simpson_with_halving(f: Callable[[np.ndarray], np.ndarray], a: float, b: float,
                         n0: int = 64, rtol: float = 1e-11, atol: float = 1e-300,
                         max_doublings: int = 14) -> tuple[float, float]:
    """Simpson value with an error estimate from successive grid halving.

    Returns (value, estimated_error). The estimate is the difference between
    the two finest levels; iteration stops once it drops below tolerance.
    """
    n = n0
    prev = composite_simpson(f, a, b, n)
    err = np.inf
    for _ in range(max_doublings):
        n *= 2
        cur = composite_simpson(f, a, b, n)
        err = abs(cur - prev)
        prev = cur
        if err <= rtol * max(abs(cur), atol) + atol:
            break
    return prev, err


def piecewise_simpson(f: Callable[[np.ndarray], np.ndarray],
                      breakpoints: Sequence[float],
                      n0: int = 64, rtol: float = 1e-11) -> tuple[float, float]:
    """Simpson-with-halving on each piece; breakpoints isolate kinks or jumps."""
    pts = sorted(float(p) for p in breakpoints)
    total = 0.0
    err = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        if hi <= lo:
            continue
        v, e = simpson_with_halving(f, lo, hi, n0=n0, rtol=rtol)
        total += v
        err += e
    return total, err


def radial_area_integral(f: Callable[[np.ndarray], np.ndarray],
                         breakpoints: Sequence[float],
                         n0: int = 64, rtol: float = 1e-11) -> tuple[float, float]:
    """Integral of f over the plane for radial f: 2*pi*int r f(r) dr."""
    value, err = piecewise_simpson(lambda r: r * np.asarray(f(r), dtype=float),
                                   breakpoints, n0=n0, rtol=rtol)
    return 2.0 * np.pi * value, 2.0 * np.pi * err
