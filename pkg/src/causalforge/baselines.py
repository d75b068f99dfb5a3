"""Hand-designed pairwise causal scores: correlation, mutual information,
and pairwise linear Granger causality.  Higher score = more causal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class BaselineScore:
    value: float
    method: str
    direction_sensitive: bool
    degenerate: bool = False


def corr_score(x: np.ndarray, y: np.ndarray) -> BaselineScore:
    """Absolute Pearson correlation; symmetric; 0 (degenerate) for constants."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValidationError("sequences must be 1-D, equal length >= 2")
    sx, sy = x.std(), y.std()
    if sx == 0.0 or sy == 0.0:
        return BaselineScore(0.0, "corr", False, degenerate=True)
    r = float(np.mean((x - x.mean()) * (y - y.mean())) / (sx * sy))
    return BaselineScore(abs(r), "corr", False)


def mi_score(x: np.ndarray, y: np.ndarray, bins: int = 16) -> BaselineScore:
    """Plug-in mutual information (nats) of the joint histogram; symmetric.

    Binary inputs reduce to exact 2x2 counts; continuous inputs use an
    equal-width 2-D histogram with `bins` bins per axis.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValidationError("sequences must be 1-D, equal length >= 2")

    def _bins(v: np.ndarray) -> int:
        return 2 if set(np.unique(v)) <= {0.0, 1.0} else bins

    joint, _, _ = np.histogram2d(x, y, bins=[_bins(x), _bins(y)])
    p = joint / joint.sum()
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    nz = p > 0
    mi = float(np.sum(p[nz] * np.log(p[nz] / (px @ py)[nz])))
    return BaselineScore(max(mi, 0.0), "mi", False)


def granger_score(x_cause: np.ndarray, x_effect: np.ndarray,
                  lag: int = 5) -> BaselineScore:
    """Variance ratio of restricted (auto) vs full (bi-variate) regression.

    Fits x_effect[t] on its own `lag` past values, then on own + cause past
    values, both with an intercept; returns var(resid_restricted) /
    var(resid_full).  Direction-sensitive; >= 1 up to solver round-off.
    """
    x_cause = np.asarray(x_cause, dtype=np.float64)
    x_effect = np.asarray(x_effect, dtype=np.float64)
    if x_cause.shape != x_effect.shape or x_cause.ndim != 1:
        raise ValidationError("sequences must be 1-D and equal length")
    T = x_effect.size
    if T <= 2 * lag + 1:
        raise ValidationError(f"sequence too short for lag {lag}")

    y = x_effect[lag:]
    n = y.size
    own = np.column_stack([x_effect[lag - d - 1:T - d - 1] for d in range(lag)])
    cause = np.column_stack([x_cause[lag - d - 1:T - d - 1] for d in range(lag)])
    ones = np.ones((n, 1))

    degenerate = x_cause.std() == 0.0 or x_effect.std() == 0.0

    def resid_var(design: np.ndarray) -> float:
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        r = y - design @ coef
        return float(np.mean(r * r))

    v_restricted = resid_var(np.hstack([ones, own]))
    v_full = resid_var(np.hstack([ones, own, cause]))
    if v_full == 0.0:
        if v_restricted == 0.0:
            return BaselineScore(1.0, "granger", True, degenerate=True)
        return BaselineScore(np.inf, "granger", True, degenerate=degenerate)
    return BaselineScore(v_restricted / v_full, "granger", True,
                         degenerate=degenerate)
