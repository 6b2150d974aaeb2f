"""Model checks for the hidden-confounder VAR.

Two ingredients:

* non-Gaussianity of each observed channel (Kolmogorov-Smirnov against the
  normal after standardisation), because identifiability of B needs it;
* no linear dependence between the generalised residual
  ``r_t = x_t - U1 x_{t-1} - U2 x_{t-2}`` and the lagged observations
  ``x_{t-2-j}``, j = 0..J.

The independence statistic is a Wald test on the sample means of
``r_t (x) y_t``. Under the model the residual is a moving average of order
one, so the moment series has one lag of serial correlation; a plain
``L * sum(corr^2)`` portmanteau ignores that correlation and is mis-sized.
Both factors are whitened by their lag-0 covariance and directions whose
long-run variance falls below ``kappa / sqrt(T)`` are dropped, with the
degrees of freedom reduced to match.

When the ansatz was itself estimated from the same sample, the lags
j = 0, 1 are zero by construction; ``estimated=True`` projects out the
estimation effect and tests the remaining lags with ``K_X^2 (J - 1)``
degrees of freedom.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, signal, stats

from .cov_estimator import ResidualAnsatz, compute_residual, solve_ansatz
from .errors import ConditioningError, DimensionError, InsufficientDataError, ValidationError
from .report import _jsonable
from .var_core import TimeSeriesSample, sample_autocov

KS_CAVEAT = (
    "mean and variance are estimated, so asymptotic Kolmogorov p-values are "
    "conservative and ignore serial dependence; use strict mode for a "
    "parametric-bootstrap p-value"
)


MAX_COND = 1e12
TRUNCATION_KAPPA = 1.0


class DegenerateDataError(ValidationError):
    pass


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    method: str
    caveat: str = KS_CAVEAT

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "p_value": self.p_value, "method": self.method, "caveat": self.caveat}


@dataclass(frozen=True)
class IndependenceResult:
    statistic: float
    dof: int
    p_value: float
    J: int
    estimated: bool

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "dof": self.dof,
            "p_value": self.p_value,
            "J": self.J,
            "estimated_ansatz": self.estimated,
        }


@dataclass
class CheckReport:
    ks: list
    independence: IndependenceResult | None
    J: int
    alpha: float
    notes: list = field(default_factory=list)

    @property
    def independence_rejected(self) -> bool:
        return self.independence is None or self.independence.p_value < self.alpha

    @property
    def non_gaussian(self) -> list[bool]:
        return [k.p_value < self.alpha for k in self.ks]

    @property
    def passed(self) -> bool:
        return (not self.independence_rejected) and all(self.non_gaussian)

    def to_dict(self) -> dict:
        return _jsonable(
            {
                "ks": self.ks,
                "independence": self.independence,
                "J": self.J,
                "alpha": self.alpha,
                "independence_rejected": self.independence_rejected,
                "non_gaussian": self.non_gaussian,
                "passed": self.passed,
                "notes": self.notes,
            }
        )

    def table(self) -> str:
        lines = [f"{'test':<22}{'statistic':>12}{'p-value':>10}  verdict"]
        for i, k in enumerate(self.ks):
            verdict = "non-Gaussian" if k.p_value < self.alpha else "Gaussian not rejected"
            lines.append(f"{'KS channel ' + str(i + 1):<22}{k.statistic:>12.4f}{k.p_value:>10.4f}  {verdict}")
        ind = self.independence
        if ind is None:
            lines.append(f"{'independence':<22}{'-':>12}{'-':>10}  failed (no ansatz)")
        else:
            verdict = "dependence detected" if ind.p_value < self.alpha else "not rejected"
            label = f"independence (dof {ind.dof})"
            lines.append(f"{label:<22}{ind.statistic:>12.4f}{ind.p_value:>10.4f}  {verdict}")
        lines.append(f"overall at alpha={self.alpha}: {'PASS' if self.passed else 'FAIL'}")
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Gaussianity
# ---------------------------------------------------------------------------


def _standardise(series) -> np.ndarray:
    s = np.asarray(series, dtype=float).ravel()
    if s.size < 30:
        raise InsufficientDataError(f"need at least 30 observations, got {s.size}")
    sd = s.std(ddof=1)
    if not sd > 1e-12 * max(1.0, float(np.abs(s).max())):
        raise DegenerateDataError("series has zero variance")
    return (s - s.mean()) / sd


def _ks_distance(z: np.ndarray) -> float:
    return float(stats.kstest(z, "norm", method="asymp").statistic)


def fit_gaussian_ar(series, order: int):
    """Yule-Walker AR(order) fit: coefficients and innovation variance."""
    s = np.asarray(series, dtype=float) - np.mean(series)
    n = s.size
    acov = np.array([s[: n - k] @ s[k:] / n for k in range(order + 1)])
    if order == 0:
        return np.zeros(0), float(acov[0])
    phi = linalg.solve_toeplitz(acov[:order], acov[1 : order + 1])
    return phi, float(acov[0] - phi @ acov[1 : order + 1])


def ks_gaussianity(series, strict: bool = False, n_boot: int = 199, ar_order: int = 5, seed=None) -> KsResult:
    """KS distance of the standardised series from N(0, 1).

    Default p-value: asymptotic Kolmogorov distribution. ``strict=True``
    instead compares against 199 series simulated from a Gaussian AR fit
    to the data, pushed through the same standardisation, which accounts for
    both the estimated moments and serial dependence (``ar_order=0`` is the
    Lilliefors test).
    """
    z = _standardise(series)
    d = _ks_distance(z)
    if not strict:
        p = float(stats.kstwobign.sf(np.sqrt(z.size) * d))
        return KsResult(d, min(max(p, 0.0), 1.0), "asymptotic")
    phi, sigma2 = fit_gaussian_ar(z, ar_order)
    rng = np.random.default_rng(seed)
    burn = 200
    a = np.concatenate([[1.0], -phi])
    exceed = 0
    for _ in range(n_boot):
        e = rng.standard_normal(z.size + burn) * np.sqrt(max(sigma2, 1e-300))
        sim = signal.lfilter([1.0], a, e)[burn:]
        exceed += _ks_distance(_standardise(sim)) >= d
    return KsResult(d, (1 + exceed) / (n_boot + 1), f"bootstrap-ar{ar_order}-{n_boot}")


# ---------------------------------------------------------------------------
# residual independence
# ---------------------------------------------------------------------------


def _lag_cov(a: np.ndarray, b: np.ndarray, s: int) -> np.ndarray:
    """sum_t a_t b_{t-s}^T / T for s >= 0 (series already centred)."""
    T = a.shape[0]
    return a[s:].T @ b[: T - s] / T


def _inv_sqrt(C: np.ndarray, what: str) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (C + C.T))
    if not w.min() > 0 or w.max() / w.min() > MAX_COND:
        cond = float(w.max() / w.min()) if w.min() > 0 else float("inf")
        raise ConditioningError(f"{what} covariance is singular (cond {cond:.3g})", cond)
    return (V / np.sqrt(w)) @ V.T


def _wald(r: np.ndarray, y: np.ndarray, kappa: float = TRUNCATION_KAPPA) -> tuple[float, int]:
    """Truncated Wald statistic for E[r_t y_t^T] = 0.

    Under the model, r_t is driven by the noise at t and t-1 only while y_t
    is measurable with respect to the noise up to t-2. Fourth cumulants of
    the moment series therefore vanish and its long-run covariance is
    sum_{|s| <= 1} Gamma_r(s) (x) Gamma_y(s), estimated from second moments.
    Both factors are whitened by their lag-zero covariance (so the statistic
    is invariant to invertible transformations of the channels), and
    directions whose long-run variance is below the sampling noise level
    ``kappa / sqrt(T)`` are dropped; they arise when the lag-one term nearly
    cancels the lag-zero term and cannot be estimated reliably.
    Returns the statistic and the number of retained directions.
    """
    T, k = r.shape
    rc = r - r.mean(axis=0)
    yc = y - y.mean(axis=0)
    Wr = _inv_sqrt(_lag_cov(rc, rc, 0), "residual")
    Wy = _inv_sqrt(_lag_cov(yc, yc, 0), "instrument")
    rt, yt, ytc = r @ Wr, y @ Wy, yc @ Wy
    rtc = rc @ Wr
    mean = (rt.T @ yt / T).reshape(-1)
    lag = np.kron(_lag_cov(rtc, rtc, 1), _lag_cov(ytc, ytc, 1))
    S = np.eye(mean.size) + lag + lag.T
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    keep = w > kappa / np.sqrt(T)
    if not np.any(keep):
        raise ConditioningError("moment covariance is numerically zero", float("inf"))
    proj = V[:, keep].T @ mean
    return float(T * np.sum(proj**2 / w[keep])), int(keep.sum())


def _lag_stack(x: np.ndarray, J: int, start: int) -> np.ndarray:
    """Rows t = start..L-1 (0-based) of (x_{t-2}, ..., x_{t-2-J})."""
    L = x.shape[0]
    return np.hstack([x[start - 2 - j : L - 2 - j] for j in range(J + 1)])


def independence_test(resid: np.ndarray, x, J: int = 2, instruments: np.ndarray | None = None) -> IndependenceResult:
    """Wald test that ``resid`` is uncorrelated with x_{t-2-j}, j = 0..J.

    ``resid[i]`` belongs to time ``i + 2`` (0-based), i.e. it is aligned
    with the output of ``compute_residual``. ``instruments`` may replace the
    lagged regressors (same row alignment as the common window).
    """
    v = _as_array(x)
    v = v - v.mean(axis=0)
    L, k = v.shape
    resid = np.asarray(resid, dtype=float)
    if resid.ndim == 1:
        resid = resid[:, None]
    if resid.shape[0] != L - 2:
        raise DimensionError(f"expected {L - 2} residual rows, got {resid.shape[0]}")
    start = J + 2
    if L - start <= 2 * (J + 1) * k * resid.shape[1]:
        raise InsufficientDataError("too few observations for the requested lag budget")
    r = resid[start - 2 :]
    y = _lag_stack(v, J, start) if instruments is None else instruments
    stat, dof = _wald(r, y)
    return IndependenceResult(stat, dof, float(stats.chi2.sf(stat, dof)), J, instruments is not None)


def residual_independence(x, ansatz: ResidualAnsatz, J: int = 2, estimated: bool = False) -> IndependenceResult:
    """Independence of the generalised residual from lagged observations.

    With ``estimated=True`` the ansatz is taken to come from the sample
    autocovariances of ``x`` up to lag 3, and the first two lags (which are
    zero by construction) are projected out; this requires J >= 2.
    """
    v = _as_array(x)
    if v.shape[0] < 50:
        raise InsufficientDataError(f"need L >= 50, got {v.shape[0]}")
    if not (np.all(np.isfinite(ansatz.U1)) and np.all(np.isfinite(ansatz.U2))):
        raise ValidationError("ansatz has non-finite entries")
    if J < 0:
        raise ValidationError("J must be nonnegative")
    v = v - v.mean(axis=0)
    resid = compute_residual(v, ansatz)
    if not estimated:
        return independence_test(resid, v, J)
    if J < 2:
        raise ValidationError("an estimated ansatz leaves nothing to test unless J >= 2")
    k = v.shape[1]
    gam = sample_autocov(v, J + 2)
    G01 = np.block([[gam[1], gam[2]], [gam[0], gam[1]]])
    Gj = np.hstack([np.vstack([gam[1 + j], gam[j]]) for j in range(2, J + 1)])
    if ansatz.rank is None or ansatz.rank == 2 * k:
        cond = float(np.linalg.cond(G01))
        if not np.isfinite(cond) or cond > 1e12:
            raise ConditioningError(f"lag-0/1 autocovariance block is singular (cond {cond:.3g})", cond)
        H = np.linalg.solve(G01, Gj)
    else:
        H = np.linalg.pinv(G01, rcond=1e-10) @ Gj
    y = _lag_stack(v, J, J + 2)
    adj = y[:, 2 * k :] - y[:, : 2 * k] @ H
    res = independence_test(resid, v, J, instruments=adj)
    return IndependenceResult(res.statistic, res.dof, res.p_value, J, True)


def _as_array(x) -> np.ndarray:
    v = x.values if isinstance(x, TimeSeriesSample) else np.asarray(x, dtype=float)
    return v[:, None] if v.ndim == 1 else v


def check_model(
    x,
    k_z: int | None = None,
    J: int = 2,
    alpha: float = 0.05,
    strict: bool = False,
    seed=None,
) -> CheckReport:
    """Full check on a sample of X: estimate the ansatz, test the residual
    against the past, and test every channel for non-Gaussianity.

    The model passes when independence is not rejected and every channel is
    significantly non-Gaussian (identifiability needs non-Gaussian noise).
    If the ansatz cannot be solved the independence part counts as failed.
    """
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    v = _as_array(x)
    notes = []
    ind = None
    try:
        ansatz = solve_ansatz(sample_autocov(v, 3), rank=None if k_z is None else v.shape[1] + k_z)
        ind = residual_independence(v, ansatz, J, estimated=True)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        notes.append(f"ansatz could not be solved, independence counted as rejected: {exc}")
    if ind is not None and ansatz.rank is not None and ansatz.rank < 2 * v.shape[1]:
        notes.append("rank-deficient ansatz: estimation correction is approximate")
    children = np.random.SeedSequence(seed).spawn(v.shape[1]) if strict else [None] * v.shape[1]
    ks = [ks_gaussianity(v[:, i], strict=strict, seed=children[i]) for i in range(v.shape[1])]
    notes.append(KS_CAVEAT if not strict else "KS p-values from parametric bootstrap")
    return CheckReport(ks, ind, J, alpha, notes)
