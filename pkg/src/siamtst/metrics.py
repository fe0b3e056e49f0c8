"""Forecast error metrics and the paired significance test."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .tensor import ShapeError


def metrics(y_hat, y) -> tuple[float, float]:
    """Mean absolute error and mean squared error over all entries.

    Operates on whatever scale the caller passes in; experiment code
    reports on the train-normalized scale. The Jensen bound
    ``mae <= sqrt(mse)`` is asserted on every call as a cheap sanity
    check.
    """
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise ShapeError(f"metrics: shapes {y_hat.shape} and {y.shape} differ")
    err = y_hat - y
    mae = float(np.mean(np.abs(err)))
    mse = float(np.mean(err * err))
    assert mae <= np.sqrt(mse) + 1e-12, f"mae {mae} exceeds sqrt(mse) {np.sqrt(mse)}"
    return mae, mse


@dataclass
class TTestResult:
    statistic: float
    p_value: float
    degenerate: bool = False


def paired_t_test(a, b) -> TTestResult:
    """Two-sided paired Student's t-test on per-sector metric lists.

    Zero-variance differences cannot produce a t statistic; by convention
    the p-value is then 1.0 for identical samples and 0.0 for a constant
    nonzero shift, and the result is flagged degenerate.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"paired test needs equal-length vectors, got {a.shape}, {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError(f"paired test needs at least 2 pairs, got {n}")
    diff = a - b
    sd = diff.std(ddof=1)
    if sd == 0.0:
        if np.all(diff == 0.0):
            return TTestResult(statistic=0.0, p_value=1.0, degenerate=True)
        return TTestResult(statistic=np.inf if diff[0] > 0 else -np.inf,
                           p_value=0.0, degenerate=True)
    t_stat = float(diff.mean() / (sd / np.sqrt(n)))
    p = float(2.0 * stats.t.sf(abs(t_stat), df=n - 1))
    return TTestResult(statistic=t_stat, p_value=p)
