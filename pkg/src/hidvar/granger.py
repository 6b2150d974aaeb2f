"""Practical Granger baseline: regression of present on past over X only."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConditioningError, InsufficientDataError
from .var_core import AutocovSequence, TimeSeriesSample, sample_autocov

MAX_COND = 1e12


@dataclass(frozen=True)
class GrangerEstimate:
    B_pG: np.ndarray
    source: str
    cond: float

    def to_dict(self) -> dict:
        return {"B_pG": self.B_pG.tolist(), "source": self.source, "cond": self.cond}


def _right_divide(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    # num @ inv(den) without forming the inverse
    return np.linalg.solve(den.T, num.T).T


def practical_granger(gammas: AutocovSequence) -> GrangerEstimate:
    """``Gamma_1 Gamma_0^{-1}`` from (analytic or sample) autocovariances of X."""
    if gammas.m < 1:
        raise InsufficientDataError("need Gamma_0 and Gamma_1")
    g0, g1 = gammas[0], gammas[1]
    cond = float(np.linalg.cond(g0))
    if not np.isfinite(cond) or cond > MAX_COND:
        raise ConditioningError(f"Gamma_0 is ill-conditioned (cond {cond:.3g})", cond)
    return GrangerEstimate(_right_divide(g1, g0), gammas.source, cond)


def practical_granger_sample(x: TimeSeriesSample, method: str = "yule-walker") -> GrangerEstimate:
    """Data-driven baseline.

    ``yule-walker`` plugs sample autocovariances into ``Gamma_1 Gamma_0^{-1}``;
    ``ls`` is conditional least squares of ``x_t`` on ``x_{t-1}`` (t = 2..L)
    after mean-centring, without intercept.
    """
    if method == "yule-walker":
        return practical_granger(sample_autocov(x, 1))
    if method != "ls":
        raise ValueError(f"unknown method {method!r}")
    v = x.values - x.values.mean(axis=0)
    if v.shape[0] < 3:
        raise InsufficientDataError("need at least 3 observations")
    past, present = v[:-1], v[1:]
    gram = past.T @ past
    cond = float(np.linalg.cond(gram))
    if not np.isfinite(cond) or cond > MAX_COND:
        raise ConditioningError(f"regressor Gram matrix is ill-conditioned (cond {cond:.3g})", cond)
    return GrangerEstimate(_right_divide(present.T @ past, gram), "sample-ls", cond)
