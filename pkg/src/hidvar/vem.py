"""Variational EM for the partially observed VAR(1) with Gaussian-mixture noise.

The approximate posterior factorises into mixture indicators (one
categorical per time step and channel) and the hidden states ``z_{1:L}``.
Given the indicators, the expected complete-data log-likelihood is that of a
time-varying linear dynamical system, so ``q(z)`` comes out of a Kalman
filter and RTS smoother. The M-step is closed form, row by row.

Conventions: channels are ordered ``W = (X, Z)`` everywhere (observed first),
``w_0 = 0`` so the first time step is driven by the noise alone, and the
data are mean-centred before fitting.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .errors import (
    ConfigError,
    EstimationError,
    InsufficientDataError,
    NumericError,
    ValidationError,
)
from .granger import practical_granger_sample
from .report import EstimationReport, _jsonable
from .var_core import GmmNoiseModel, TimeSeriesSample, VarParams, spectral_radius

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
MAX_COND = 1e12
VAR_FLOOR = 1e-10


class InitializationError(ValidationError):
    pass


@dataclass(frozen=True)
class VemParams:
    A: np.ndarray
    noise: GmmNoiseModel
    k_x: int

    @property
    def K(self) -> int:
        return self.A.shape[0]

    @property
    def k_z(self) -> int:
        return self.K - self.k_x

    @property
    def B(self) -> np.ndarray:
        return self.A[: self.k_x, : self.k_x]

    @property
    def C(self) -> np.ndarray:
        return self.A[: self.k_x, self.k_x :]

    @property
    def D(self) -> np.ndarray:
        return self.A[self.k_x :, : self.k_x]

    @property
    def E(self) -> np.ndarray:
        return self.A[self.k_x :, self.k_x :]

    def var_params(self) -> VarParams:
        return VarParams(self.A, self.noise.covariance(), self.k_x)

    def to_dict(self) -> dict:
        return {
            "K_X": self.k_x,
            "K_Z": self.k_z,
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "D": self.D.tolist(),
            "E": self.E.tolist(),
            "noise": self.noise.to_dict(),
            "channel_order": "X first, then Z",
        }


@dataclass
class VemPosterior:
    """Indicator marginals ``resp[i]`` of shape (L, p_i) and smoothed moments of
    the hidden states: ``z_mean`` (L, K_Z), ``z_cov`` (L, K_Z, K_Z) and
    ``z_cross[l] = Cov(z_l, z_{l-1})`` (entry 0 unused)."""

    resp: list
    z_mean: np.ndarray
    z_cov: np.ndarray
    z_cross: np.ndarray

    @property
    def L(self) -> int:
        return self.resp[0].shape[0]


@dataclass
class ElboTrace:
    values: list = field(default_factory=list)
    converged: bool = False

    @property
    def n_iter(self) -> int:
        return len(self.values)

    def deltas(self) -> np.ndarray:
        return np.diff(np.asarray(self.values, dtype=float))

    def to_dict(self) -> dict:
        return {"values": list(map(float, self.values)), "converged": self.converged, "n_iter": self.n_iter}


@dataclass(frozen=True)
class VemConfig:
    k_z: int = 1
    n_components: int | tuple = 2
    max_iters: int = 500
    tol: float = 1e-6
    restarts: int = 5
    seed: int = 0
    fit_means: bool = False
    d_zero: bool = False

    def __post_init__(self):
        if self.k_z < 0:
            raise ConfigError("k_z must be nonnegative")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be at least 1")
        if self.restarts < 1:
            raise ConfigError("restarts must be at least 1")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        comps = (self.n_components,) if np.isscalar(self.n_components) else tuple(self.n_components)
        if any(int(p) < 1 for p in comps):
            raise ConfigError("every channel needs at least one mixture component")

    def components(self, K: int) -> tuple[int, ...]:
        if np.isscalar(self.n_components):
            return (int(self.n_components),) * K
        comps = tuple(int(p) for p in self.n_components)
        if len(comps) != K:
            raise ConfigError(f"n_components has {len(comps)} entries for {K} channels")
        return comps


@dataclass
class VemFit:
    report: EstimationReport
    trace: ElboTrace
    params: VemParams
    posterior: VemPosterior
    restarts: list


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------


def _full_moments(x: np.ndarray, k_z: int, post: VemPosterior | None):
    """Moments of w_{0:L} (row 0 is the fixed w_0 = 0).

    Returns means (L+1, K), covariances (L+1, K, K) and lag-one cross
    covariances Cov(w_l, w_{l-1}) (L+1, K, K); only the Z block is random.
    """
    L, k_x = x.shape
    K = k_x + k_z
    m = np.zeros((L + 1, K))
    m[1:, :k_x] = x
    V = np.zeros((L + 1, K, K))
    X = np.zeros((L + 1, K, K))
    if k_z and post is not None:
        m[1:, k_x:] = post.z_mean
        V[1:, k_x:, k_x:] = post.z_cov
        X[2:, k_x:, k_x:] = post.z_cross[1:]
    return m, V, X


def _residual_moments(A: np.ndarray, m, V, X):
    """Mean and variance of r_{l,i} = w_{l,i} - A_i w_{l-1}, l = 1..L."""
    Er = m[1:] - m[:-1] @ A.T
    Vdiag = np.diagonal(V[1:], axis1=1, axis2=2)
    cross = np.einsum("lij,ij->li", X[1:], A)
    quad = np.einsum("ij,ljk,ik->li", A, V[:-1], A)
    Vr = Vdiag - 2.0 * cross + quad
    return Er, np.maximum(Vr, 0.0)


def _component_logits(Er_i, Vr_i, w, mu, var):
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    sq = (Er_i[:, None] - mu[None, :]) ** 2 + Vr_i[:, None]
    return logw[None, :] - 0.5 * (LOG_2PI + np.log(var))[None, :] - 0.5 * sq / var[None, :]


# ---------------------------------------------------------------------------
# E-step
# ---------------------------------------------------------------------------


def e_step_indicators(x: np.ndarray, theta: VemParams, post: VemPosterior | None) -> list:
    """Update q(v_{l,i} = c) given the state moments (log-sum-exp normalised)."""
    m, V, X = _full_moments(x, theta.k_z, post)
    Er, Vr = _residual_moments(theta.A, m, V, X)
    nz = theta.noise
    resp = []
    for i in range(theta.K):
        logits = _component_logits(Er[:, i], Vr[:, i], nz.weights[i], nz.means[i], nz.variances[i])
        resp.append(np.exp(logits - logsumexp(logits, axis=1, keepdims=True)))
    return resp


def prior_indicators(theta: VemParams, L: int) -> list:
    return [np.broadcast_to(w, (L, w.size)).copy() for w in theta.noise.weights]


def effective_noise(theta: VemParams, resp: list):
    """Per (l, i) precision sum_c q/var_c and precision-weighted mean."""
    L = resp[0].shape[0]
    prec = np.empty((L, theta.K))
    mean = np.empty((L, theta.K))
    nz = theta.noise
    for i, q in enumerate(resp):
        prec[:, i] = q @ (1.0 / nz.variances[i])
        mean[:, i] = (q @ (nz.means[i] / nz.variances[i])) / prec[:, i]
    return prec, mean


def e_step_states(x: np.ndarray, theta: VemParams, resp: list) -> VemPosterior:
    """Exact posterior of the hidden states under the surrogate LDS implied by
    the indicator marginals."""
    L, k_x = x.shape
    k_z = theta.k_z
    if k_z == 0:
        return VemPosterior(resp, np.zeros((L, 0)), np.zeros((L, 0, 0)), np.zeros((L, 0, 0)))
    prec, mean = effective_noise(theta, resp)
    if not np.all(prec > 0) or not np.all(np.isfinite(prec)):
        raise NumericError("non-positive effective noise precision")
    B, C, D, E = theta.B, theta.C, theta.D, theta.E
    pz, mz = prec[:, k_x:], mean[:, k_x:]
    drift = mz.copy()
    drift[1:] += x[:-1] @ D.T
    obs = np.zeros((L, k_x))
    obs[:-1] = x[1:] - x[:-1] @ B.T - mean[1:, :k_x]
    r_prec = np.zeros((L, k_x))
    r_prec[:-1] = prec[1:, :k_x]
    ms, Ps, cross, fail = _kernels.kalman_smoother(
        np.ascontiguousarray(E),
        np.ascontiguousarray(C),
        mz[0].copy(),
        np.diag(1.0 / pz[0]),
        drift,
        1.0 / pz,
        obs,
        r_prec,
    )
    if fail >= 0 or not (np.all(np.isfinite(ms)) and np.all(np.isfinite(Ps))):
        raise NumericError(f"Kalman filter diverged at time index {max(fail, 0)}")
    return VemPosterior(resp, ms, Ps, cross)


# ---------------------------------------------------------------------------
# bound
# ---------------------------------------------------------------------------


def _gauss_entropy(cov: np.ndarray) -> np.ndarray:
    d = cov.shape[-1]
    sign, logdet = np.linalg.slogdet(cov)
    if np.any(sign <= 0):
        raise NumericError("non-positive-definite covariance in state entropy")
    return 0.5 * (d * (1.0 + LOG_2PI) + logdet)


def state_entropy(post: VemPosterior) -> float:
    """Entropy of the Gauss-Markov posterior over z_{1:L}:
    H(z_1) + sum_l H(z_l | z_{l-1})."""
    P = post.z_cov
    if P.shape[-1] == 0:
        return 0.0
    Xc = post.z_cross[1:]
    # conditional covariance P_l - X_l P_{l-1}^{-1} X_l^T
    sol = np.linalg.solve(P[:-1], np.swapaxes(Xc, 1, 2))
    cond_cov = P[1:] - Xc @ sol
    cond_cov = 0.5 * (cond_cov + np.swapaxes(cond_cov, 1, 2))
    return float(_gauss_entropy(P[:1]).sum() + _gauss_entropy(cond_cov).sum())


def elbo(x: np.ndarray, theta: VemParams, post: VemPosterior, terms: bool = False):
    """Variational lower bound on log p(x_{1:L})."""
    m, V, X = _full_moments(x, theta.k_z, post)
    Er, Vr = _residual_moments(theta.A, m, V, X)
    nz = theta.noise
    expected = 0.0
    ent_v = 0.0
    for i, q in enumerate(post.resp):
        logits = _component_logits(Er[:, i], Vr[:, i], nz.weights[i], nz.means[i], nz.variances[i])
        pos = q > 0
        expected += float(np.sum(q[pos] * logits[pos]))
        ent_v -= float(np.sum(q[pos] * np.log(q[pos])))
    ent_z = state_entropy(post)
    parts = {"expected_loglik": expected, "entropy_indicators": ent_v, "entropy_states": ent_z}
    for name, val in parts.items():
        if not np.isfinite(val):
            raise NumericError(f"non-finite ELBO term: {name}")
    total = expected + ent_v + ent_z
    return (total, parts) if terms else total


# ---------------------------------------------------------------------------
# M-step
# ---------------------------------------------------------------------------


def m_step(
    x: np.ndarray,
    theta: VemParams,
    post: VemPosterior,
    fit_means: bool = False,
    d_zero: bool = False,
    flags: list | None = None,
) -> VemParams:
    """Closed-form updates: weights, then each row of A jointly with the
    component means (weighted least squares at the current variances), then
    the variances. Hidden-channel means stay at zero."""
    L, k_x = x.shape
    K = theta.K
    m, V, X = _full_moments(x, theta.k_z, post)
    S_prev = m[:-1, :, None] * m[:-1, None, :] + V[:-1]
    A = theta.A.copy()
    nz = theta.noise
    weights, means, variances = [], [], []
    scale = max(float(np.mean(np.var(x, axis=0))), 1e-300)
    for i, q in enumerate(post.resp):
        var = nz.variances[i]
        mu = nz.means[i].copy()
        nk = q.sum(axis=0)
        weights.append(nk / L)
        beta = q / var[None, :]
        lam = beta.sum(axis=1)

        free = np.ones(K, dtype=bool)
        if d_zero and i >= k_x:
            free[:k_x] = False
        est_mu = fit_means and i < k_x
        live = nk > 1e-10 * L if est_mu else np.zeros_like(nk, dtype=bool)
        fa = np.flatnonzero(free)
        cross_i = m[:-1] * m[1:, i][:, None] + X[1:, i, :]
        G_aa = np.einsum("l,ljk->jk", lam, S_prev)[np.ix_(fa, fa)]
        h_a = (lam @ cross_i)[fa]
        if est_mu:
            G_am = (m[:-1].T @ beta)[fa][:, live]
            G_mm = np.diag(nk[live] / var[live])
            h_m = (beta.T @ m[1:, i])[live]
            G = np.block([[G_aa, G_am], [G_am.T, G_mm]])
            h = np.concatenate([h_a, h_m])
        else:
            G = G_aa
            h = h_a - (m[:-1].T @ (beta @ mu))[fa]
        cond = np.linalg.cond(G) if G.size else 1.0
        if np.isfinite(cond) and cond < MAX_COND:
            sol = np.linalg.solve(G, h)
            row = np.zeros(K)
            row[fa] = sol[: fa.size]
            A[i] = row
            if est_mu:
                mu[live] = sol[fa.size :]
        elif flags is not None:
            flags.append(f"channel {i}: singular normal equations (cond {cond:.3g}); row kept")

        # variances at the new row and means
        a = A[i]
        Er = m[1:, i] - m[:-1] @ a
        Vr = V[1:, i, i] - 2.0 * (X[1:, i, :] @ a) + np.einsum("j,ljk,k->l", a, V[:-1], a)
        sq = (Er[:, None] - mu[None, :]) ** 2 + np.maximum(Vr, 0.0)[:, None]
        new_var = var.copy()
        ok = nk > 1e-10 * L
        new_var[ok] = np.maximum((q[:, ok] * sq[:, ok]).sum(axis=0) / nk[ok], VAR_FLOOR * scale)
        means.append(mu)
        variances.append(new_var)

    weights = [w / w.sum() for w in weights]
    return VemParams(A, GmmNoiseModel(tuple(weights), tuple(means), tuple(variances)), k_x)


def rescale_hidden(theta: VemParams, s, post: VemPosterior | None = None):
    """Reparametrise z -> z / s (per hidden channel). The likelihood and, with
    the posterior transformed alongside, the bound are unchanged."""
    k_x, K = theta.k_x, theta.K
    s = np.broadcast_to(np.asarray(s, dtype=float), (theta.k_z,))
    scale = np.concatenate([np.ones(k_x), s])
    A = theta.A / scale[:, None] * scale[None, :]
    nz = theta.noise
    means = list(nz.means)
    variances = list(nz.variances)
    for j in range(theta.k_z):
        means[k_x + j] = nz.means[k_x + j] / s[j]
        variances[k_x + j] = nz.variances[k_x + j] / s[j] ** 2
    new_theta = VemParams(A, GmmNoiseModel(nz.weights, tuple(means), tuple(variances)), k_x)
    if post is None:
        return new_theta
    inv = 1.0 / s
    new_post = VemPosterior(
        post.resp,
        post.z_mean * inv,
        post.z_cov * inv[None, :, None] * inv[None, None, :],
        post.z_cross * inv[None, :, None] * inv[None, None, :],
    )
    return new_theta, new_post


def fix_hidden_scale(theta: VemParams) -> VemParams:
    """Gauge fixing: give each hidden channel's noise unit total variance."""
    if theta.k_z == 0:
        return theta
    total = theta.noise.channel_variance()[theta.k_x :] + theta.noise.channel_mean()[theta.k_x :] ** 2
    return rescale_hidden(theta, np.sqrt(total))


# ---------------------------------------------------------------------------
# initialisation and driver
# ---------------------------------------------------------------------------


def _center(x) -> np.ndarray:
    v = x.values if isinstance(x, TimeSeriesSample) else np.asarray(x, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    return v - v.mean(axis=0)


def _mixture(rng, p: int, total_var: float, mean_sd: float):
    w = np.full(p, 1.0 / p)
    mu = mean_sd * rng.standard_normal(p) if mean_sd > 0 else np.zeros(p)
    if p == 1:
        f = np.ones(1)
    else:
        f = np.exp(rng.uniform(-1.0, 1.0, p))
    spread = total_var - np.dot(w, mu**2)
    if spread <= 0:
        mu[:] = 0.0
        spread = total_var
    v = f * spread / np.dot(w, f)
    return w, mu, v


def init_params(
    x,
    k_z: int,
    n_components: int | tuple = 2,
    seed=None,
    fit_means: bool = False,
    d_zero: bool = False,
) -> VemParams:
    """Starting point: B from least-squares Granger, small random C, D, E,
    mixtures moment-matched to the Granger residual variance (X) or unit
    variance (Z)."""
    v = _center(x)
    L, k_x = v.shape
    if L < 10:
        raise InsufficientDataError("need L >= 10")
    if k_z > k_x:
        raise ConfigError(f"K_Z = {k_z} exceeds K_X = {k_x}")
    sd = v.std(axis=0)
    if np.any(sd <= 1e-12 * max(1.0, float(np.abs(v).max()))):
        raise InitializationError("zero-variance channel")
    rng = np.random.default_rng(seed)
    K = k_x + k_z
    comps = VemConfig(k_z=k_z, n_components=n_components).components(K)
    B = practical_granger_sample(TimeSeriesSample(v), "ls").B_pG
    A = np.zeros((K, K))
    A[:k_x, :k_x] = B
    if k_z:
        A[:k_x, k_x:] = 0.1 * rng.standard_normal((k_x, k_z))
        A[k_x:, :k_x] = 0.0 if d_zero else 0.1 * rng.standard_normal((k_z, k_x))
        A[k_x:, k_x:] = 0.1 * rng.standard_normal((k_z, k_z))
    rho = spectral_radius(A)
    if rho >= 1.0:
        A *= 0.95 / rho
    resid = v[1:] - v[:-1] @ A[:k_x, :k_x].T
    rvar = resid.var(axis=0)
    ws, mus, vs = [], [], []
    for i in range(K):
        tv = rvar[i] if i < k_x else 1.0
        mean_sd = 0.1 * np.sqrt(tv) if (fit_means and i < k_x) else 0.0
        w, mu, var = _mixture(rng, comps[i], tv, mean_sd)
        ws.append(w)
        mus.append(mu)
        vs.append(var)
    return VemParams(A, GmmNoiseModel(tuple(ws), tuple(mus), tuple(vs)), k_x)


def run_em(
    x: np.ndarray,
    theta: VemParams,
    max_iters: int = 500,
    tol: float = 1e-6,
    fit_means: bool = False,
    d_zero: bool = False,
    progress: bool = False,
):
    """EM loop from a given starting point. Returns (theta, posterior, trace, flags).

    Each iteration: q(z) given q(v), q(v) given q(z), record the bound, then
    M-step and hidden-scale gauge fixing. The recorded bound is
    non-decreasing up to rounding.
    """
    resp = prior_indicators(theta, x.shape[0])
    trace = ElboTrace()
    flags: list = []
    post = None
    for it in range(max_iters):
        post = e_step_states(x, theta, resp)
        resp = e_step_indicators(x, theta, post)
        post.resp = resp
        value = elbo(x, theta, post)
        prev = trace.values[-1] if trace.values else None
        trace.values.append(value)
        if progress:
            delta = float("nan") if prev is None else value - prev
            log.info("iter %d  elbo %.10g  delta %.3g", it, value, delta)
        change = np.inf if prev is None else abs(value - prev) / max(abs(prev), 1e-300)
        if change < tol or np.isinf(tol):
            trace.converged = True
            break
        if it == max_iters - 1:
            break
        theta = fix_hidden_scale(m_step(x, theta, post, fit_means, d_zero, flags))
    return theta, post, trace, flags


def fit(x, config: VemConfig | None = None, progress: bool = False, **overrides) -> VemFit:
    """Fit the hidden-confounder VAR by variational EM with random restarts;
    the run with the largest final bound wins."""
    config = VemConfig(**overrides) if config is None else config
    t0 = time.perf_counter()
    v = _center(x)
    if v.shape[0] < 10:
        raise InsufficientDataError("need L >= 10")
    children = np.random.SeedSequence(config.seed).spawn(config.restarts)
    best = None
    summaries = []
    for r, child in enumerate(children):
        try:
            theta0 = init_params(v, config.k_z, config.n_components, child, config.fit_means, config.d_zero)
            theta, post, trace, flags = run_em(
                v, theta0, config.max_iters, config.tol, config.fit_means, config.d_zero, progress
            )
        except (ArithmeticError, np.linalg.LinAlgError) as exc:
            summaries.append({"restart": r, "error": f"{type(exc).__name__}: {exc}"})
            continue
        summaries.append(
            {
                "restart": r,
                "elbo": trace.values[-1],
                "n_iter": trace.n_iter,
                "converged": trace.converged,
                "flags": flags,
            }
        )
        if best is None or trace.values[-1] > best[2].values[-1]:
            best = (theta, post, trace, r)
    if best is None:
        raise EstimationError("all restarts failed", summaries)
    theta, post, trace, r_best = best
    report = EstimationReport(
        method="vem",
        B=theta.B.copy(),
        C=theta.C.copy(),
        diagnostics=_jsonable(
            {
                "theta": theta,
                "trace": trace,
                "best_restart": r_best,
                "restarts": summaries,
                "rho": spectral_radius(theta.A),
            }
        ),
        seed=config.seed,
        wall_ms=1e3 * (time.perf_counter() - t0),
    )
    return VemFit(report, trace, theta, post, summaries)


def heldout_elbo(x, theta: VemParams, max_iters: int = 100, tol: float = 1e-8) -> float:
    """Bound on log p(x) for new data with the parameters held fixed
    (E-steps only). ``x`` should be centred with the training mean."""
    v = np.asarray(x, dtype=float)
    v = v[:, None] if v.ndim == 1 else v
    resp = prior_indicators(theta, v.shape[0])
    prev = None
    for _ in range(max_iters):
        post = e_step_states(v, theta, resp)
        resp = e_step_indicators(v, theta, post)
        post.resp = resp
        value = elbo(v, theta, post)
        if prev is not None and abs(value - prev) <= tol * abs(prev):
            break
        prev = value
    return value
