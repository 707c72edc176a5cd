"""Power-law exponent fits for scaling studies.

The scaling laws under test have the form y = C * N^e * (ln N)^p with the
log power p known in advance. Fitting happens in log space after dividing
out the declared log factor, so the reported exponent is the pure power.
"""
from __future__ import annotations

import dataclasses

import numpy as np


@dataclasses.dataclass(frozen=True)
class FitResult:
    """Least-squares fit of ln(y / (ln x)^log_power) = ln C + e * ln x."""
    exponent: float
    stderr: float
    amplitude: float
    log_power: float
    residual_rms: float
    n_points: int

    @property
    def ci95(self) -> tuple[float, float]:
        half = 1.96 * self.stderr
        return (self.exponent - half, self.exponent + half)


def power_law_fit(x: np.ndarray, y: np.ndarray, log_power: float = 0.0) -> FitResult:
    """Fit y ~ C * x^e * (ln x)^log_power and return the exponent e.

    Requires positive data and at least three points so the standard error
    of the slope is defined.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size or x.size < 3:
        raise ValueError("need at least 3 matching data points")
    if np.any(x <= 1.0):
        raise ValueError("abscissae must exceed 1 so ln x is positive")
    if np.any(y <= 0.0):
        raise ValueError("log fit needs positive values")
    lx = np.log(x)
    ly = np.log(y) - log_power * np.log(lx)
    n = x.size
    design = np.column_stack([np.ones(n), lx])
    coef, *_ = np.linalg.lstsq(design, ly, rcond=None)
    resid = ly - design @ coef
    dof = max(n - 2, 1)
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(design.T @ design)
    return FitResult(exponent=float(coef[1]),
                     stderr=float(np.sqrt(cov[1, 1])),
                     amplitude=float(np.exp(coef[0])),
                     log_power=float(log_power),
                     residual_rms=float(np.sqrt(np.mean(resid ** 2))),
                     n_points=int(n))
