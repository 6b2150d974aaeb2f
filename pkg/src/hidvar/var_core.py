"""VAR(1) model with a hidden block: parameters, simulation, autocovariances.

The full process is ``W_t = A W_{t-1} + N_t`` with ``W = (X, Z)``; the first
``k_x`` channels are observed. ``A`` is partitioned as::

    A = [[B, C],
         [D, E]]

with ``B`` of shape ``(k_x, k_x)``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import (
    ConditioningError,
    DimensionError,
    InsufficientDataError,
    ModelError,
    NumericError,
    ParseError,
    SamplingError,
)

BURN_IN = 1000
STABILITY_MARGIN = 0.95
RHO_RANGE = (0.2, 0.95)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def spectral_radius(M) -> float:
    """Largest eigenvalue modulus of a square matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {M.shape}")
    if M.size == 0:
        return 0.0
    if not np.all(np.isfinite(M)):
        raise NumericError("matrix has non-finite entries")
    try:
        ev = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigenvalue computation failed: {exc}") from exc
    return float(np.max(np.abs(ev)))


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VarParams:
    A: np.ndarray
    sigma: np.ndarray
    k_x: int

    def __post_init__(self):
        A = _frozen(self.A)
        sigma = _frozen(self.sigma)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got {A.shape}")
        K = A.shape[0]
        if sigma.shape != (K, K):
            raise DimensionError(f"sigma must be {K}x{K}, got {sigma.shape}")
        k_x = int(self.k_x)
        if not 1 <= k_x <= K or K - k_x > k_x:
            raise DimensionError(f"need 0 <= K_Z <= K_X, got K={K}, K_X={k_x}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(sigma))):
            raise ModelError("non-finite parameter entries")
        if np.max(np.abs(sigma - sigma.T), initial=0.0) > 1e-10 * max(1.0, np.abs(sigma).max()):
            raise ModelError("sigma is not symmetric")
        if np.linalg.eigvalsh(sigma).min() < -1e-10 * max(1.0, np.abs(sigma).max()):
            raise ModelError("sigma is not positive semidefinite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "k_x", k_x)

    @classmethod
    def from_blocks(cls, B, C=None, D=None, E=None, sigma=None) -> "VarParams":
        B = np.atleast_2d(np.asarray(B, dtype=float))
        k_x = B.shape[0]
        if C is None or np.size(C) == 0:
            A = B
        else:
            C = np.asarray(C, dtype=float).reshape(k_x, -1)
            k_z = C.shape[1]
            D = np.zeros((k_z, k_x)) if D is None else np.asarray(D, dtype=float).reshape(k_z, k_x)
            E = np.asarray(E, dtype=float).reshape(k_z, k_z)
            A = np.block([[B, C], [D, E]])
        if sigma is None:
            sigma = np.eye(A.shape[0])
        return cls(A=A, sigma=sigma, k_x=k_x)

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

    @property
    def rho(self) -> float:
        return spectral_radius(self.A)

    def is_stable(self) -> bool:
        return self.rho < 1.0

    def require_stable(self) -> None:
        rho = self.rho
        if not rho < 1.0:
            raise ModelError(f"transition matrix is not stable (spectral radius {rho:.6g})")

    def is_diagonal_structural(self, atol: float = 0.0) -> bool:
        off = self.sigma - np.diag(np.diag(self.sigma))
        return bool(np.all(np.abs(off) <= atol))

    def to_dict(self) -> dict:
        return {
            "K_X": self.k_x,
            "K_Z": self.k_z,
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "D": self.D.tolist(),
            "E": self.E.tolist(),
            "sigma": self.sigma.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VarParams":
        B = np.asarray(d["B"], dtype=float)
        k_x = B.shape[0]
        k_z = len(d["E"]) if d.get("E") else 0
        if k_z == 0:
            A = B
        else:
            C = np.asarray(d["C"], dtype=float).reshape(k_x, k_z)
            D = np.asarray(d.get("D") or np.zeros((k_z, k_x)), dtype=float).reshape(k_z, k_x)
            E = np.asarray(d["E"], dtype=float).reshape(k_z, k_z)
            A = np.block([[B, C], [D, E]])
        sigma = d.get("sigma")
        sigma = np.eye(A.shape[0]) if sigma is None else np.asarray(sigma, dtype=float)
        return cls(A=A, sigma=sigma, k_x=k_x)


@dataclass(frozen=True)
class GmmNoiseModel:
    """Independent per-channel Gaussian mixtures.

    ``weights[i]``, ``means[i]``, ``variances[i]`` are 1-D arrays of length
    ``p_i`` for channel ``i``. Channels follow the ``W = (X, Z)`` ordering.
    """

    weights: tuple
    means: tuple
    variances: tuple

    def __post_init__(self):
        if not (len(self.weights) == len(self.means) == len(self.variances)):
            raise DimensionError("weights, means and variances need one entry per channel")
        ws, ms, vs = [], [], []
        for i, (w, m, v) in enumerate(zip(self.weights, self.means, self.variances)):
            w, m, v = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (w, m, v))
            if not (w.shape == m.shape == v.shape) or w.ndim != 1 or w.size == 0:
                raise DimensionError(f"channel {i}: component arrays must be 1-D and equally long")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ModelError(f"channel {i}: weights must be nonnegative and sum to 1")
            if np.any(~(v > 0)):
                raise ModelError(f"channel {i}: variances must be strictly positive")
            if not np.all(np.isfinite(m)):
                raise ModelError(f"channel {i}: non-finite means")
            ws.append(_frozen(w))
            ms.append(_frozen(m))
            vs.append(_frozen(v))
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "means", tuple(ms))
        object.__setattr__(self, "variances", tuple(vs))

    @classmethod
    def gaussian(cls, variances: Sequence[float], means: Sequence[float] | None = None) -> "GmmNoiseModel":
        variances = np.asarray(variances, dtype=float)
        means = np.zeros_like(variances) if means is None else np.asarray(means, dtype=float)
        return cls(
            weights=tuple(np.ones(1) for _ in variances),
            means=tuple(np.array([m]) for m in means),
            variances=tuple(np.array([v]) for v in variances),
        )

    @classmethod
    def super_gaussian(cls, K: int) -> "GmmNoiseModel":
        """Two zero-mean components per channel, weights (0.8, 0.2), sd (0.5, 2.0),
        scaled to unit variance."""
        w = np.array([0.8, 0.2])
        v = np.array([0.5, 2.0]) ** 2
        v = v / np.dot(w, v)
        return cls(
            weights=tuple(w for _ in range(K)),
            means=tuple(np.zeros(2) for _ in range(K)),
            variances=tuple(v for _ in range(K)),
        )

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def n_components(self) -> tuple[int, ...]:
        return tuple(w.size for w in self.weights)

    def channel_mean(self) -> np.ndarray:
        return np.array([np.dot(w, m) for w, m in zip(self.weights, self.means)])

    def channel_variance(self) -> np.ndarray:
        mean = self.channel_mean()
        return np.array(
            [np.dot(w, v + m**2) for w, m, v in zip(self.weights, self.means, self.variances)]
        ) - mean**2

    def excess_kurtosis(self) -> np.ndarray:
        out = []
        for w, m, v in zip(self.weights, self.means, self.variances):
            mu = np.dot(w, m)
            d = m - mu
            m2 = np.dot(w, v + d**2)
            m4 = np.dot(w, d**4 + 6 * d**2 * v + 3 * v**2)
            out.append(m4 / m2**2 - 3.0)
        return np.array(out)

    def covariance(self) -> np.ndarray:
        return np.diag(self.channel_variance())

    def sample(self, rng: np.random.Generator, L: int) -> np.ndarray:
        out = np.empty((L, self.K))
        for i, (w, m, v) in enumerate(zip(self.weights, self.means, self.variances)):
            if w.size == 1:
                out[:, i] = m[0] + np.sqrt(v[0]) * rng.standard_normal(L)
            else:
                comp = rng.choice(w.size, size=L, p=w)
                out[:, i] = m[comp] + np.sqrt(v[comp]) * rng.standard_normal(L)
        return out

    def to_dict(self) -> dict:
        return {
            "weights": [w.tolist() for w in self.weights],
            "means": [m.tolist() for m in self.means],
            "variances": [v.tolist() for v in self.variances],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GmmNoiseModel":
        return cls(
            weights=tuple(np.asarray(w, dtype=float) for w in d["weights"]),
            means=tuple(np.asarray(m, dtype=float) for m in d["means"]),
            variances=tuple(np.asarray(v, dtype=float) for v in d["variances"]),
        )


def params_to_json(params: VarParams, noise: GmmNoiseModel | None = None) -> str:
    doc = params.to_dict()
    if noise is not None:
        doc["noise"] = noise.to_dict()
    return json.dumps(doc, indent=2)


def params_from_json(text: str) -> tuple[VarParams, GmmNoiseModel | None]:
    doc = json.loads(text)
    params = VarParams.from_dict(doc)
    noise = GmmNoiseModel.from_dict(doc["noise"]) if doc.get("noise") else None
    return params, noise


# ---------------------------------------------------------------------------
# data containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeSeriesSample:
    values: np.ndarray
    labels: tuple = ()
    seed: int | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise DimensionError(f"values must be a non-empty L x d matrix, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DimensionError("values contain non-finite entries")
        v.setflags(write=False)
        labels = tuple(self.labels) if self.labels else tuple(f"x{i + 1}" for i in range(v.shape[1]))
        if len(labels) != v.shape[1]:
            raise DimensionError(f"{len(labels)} labels for {v.shape[1]} channels")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "labels", labels)

    @property
    def L(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def observed(self, k_x: int) -> "TimeSeriesSample":
        """The first ``k_x`` channels (the observed part X of a full sample W)."""
        return TimeSeriesSample(self.values[:, :k_x], self.labels[:k_x], self.seed)

    def centered(self) -> "TimeSeriesSample":
        return TimeSeriesSample(self.values - self.values.mean(axis=0), self.labels, self.seed)

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.labels)
        for row in self.values:
            writer.writerow([repr(float(x)) for x in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8", newline="")
        return text

    @classmethod
    def from_csv(cls, source: str | Path, center: bool = False) -> "TimeSeriesSample":
        text = Path(source).read_text(encoding="utf-8")
        return cls.parse_csv(text, center=center)

    @classmethod
    def parse_csv(cls, text: str, center: bool = False) -> "TimeSeriesSample":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            raise ParseError("empty file", line=1)
        labels = [s.strip() for s in rows[0]]
        if not labels or any(not s for s in labels):
            raise ParseError("header must name every channel", line=1)
        data = []
        for lineno, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != len(labels):
                raise ParseError(f"expected {len(labels)} fields, got {len(row)}", line=lineno)
            try:
                vals = [float(s) for s in row]
            except ValueError as exc:
                raise ParseError(f"non-numeric cell ({exc})", line=lineno) from None
            if not all(np.isfinite(vals)):
                raise ParseError("non-finite cell", line=lineno)
            data.append(vals)
        if not data:
            raise ParseError("no data rows after header", line=2)
        sample = cls(np.array(data), tuple(labels))
        return sample.centered() if center else sample


@dataclass(frozen=True)
class AutocovSequence:
    """Autocovariances Gamma_i = Cov(W_t, W_{t-i}), i = 0..m, stacked as (m+1, d, d)."""

    gammas: np.ndarray
    source: str = "analytic"

    def __post_init__(self):
        g = _frozen(self.gammas)
        if g.ndim != 3 or g.shape[1] != g.shape[2]:
            raise DimensionError(f"gammas must have shape (m+1, d, d), got {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("autocovariances contain non-finite entries")
        object.__setattr__(self, "gammas", g)

    @property
    def m(self) -> int:
        return self.gammas.shape[0] - 1

    @property
    def d(self) -> int:
        return self.gammas.shape[1]

    def __getitem__(self, i: int) -> np.ndarray:
        return self.gammas[i]

    def restrict(self, k: int) -> "AutocovSequence":
        return AutocovSequence(self.gammas[:, :k, :k], self.source)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def sample_stable_var(
    k_x: int,
    k_z: int,
    *,
    d_zero: bool = False,
    diagonal_sigma: bool = True,
    seed: int | np.random.SeedSequence | None = None,
    rho_range: tuple[float, float] = RHO_RANGE,
    max_attempts: int = 100,
) -> VarParams:
    """Random stable transition matrix.

    Entries are iid uniform on [-1, 1] (with the lower-left block zeroed when
    ``d_zero``), then the whole matrix is rescaled so its spectral radius
    equals a target drawn uniformly from ``rho_range``.
    """
    if k_x < 1 or k_z < 0 or k_z > k_x:
        raise DimensionError(f"need 0 <= K_Z <= K_X and K_X >= 1, got K_X={k_x}, K_Z={k_z}")
    lo, hi = rho_range
    if not 0 < lo <= hi <= STABILITY_MARGIN:
        raise ValueError(f"rho_range must lie in (0, {STABILITY_MARGIN}]")
    rng = np.random.default_rng(seed)
    K = k_x + k_z
    for attempt in range(1, max_attempts + 1):
        A = rng.uniform(-1.0, 1.0, size=(K, K))
        if d_zero:
            A[k_x:, :k_x] = 0.0
        target = rng.uniform(lo, hi)
        rho = spectral_radius(A)
        if rho < 1e-8:
            continue
        A *= target / rho
        if diagonal_sigma:
            sigma = np.eye(K)
        else:
            M = rng.standard_normal((K, K))
            sigma = M @ M.T / K + 0.1 * np.eye(K)
        return VarParams(A=A, sigma=sigma, k_x=k_x)
    raise SamplingError("could not draw a non-degenerate transition matrix", max_attempts)


def simulate(
    params: VarParams,
    L: int,
    noise: GmmNoiseModel | None = None,
    seed: int | np.random.SeedSequence | None = None,
    burn_in: int = BURN_IN,
) -> TimeSeriesSample:
    """Draw ``w_{1:L}`` of the full process after ``burn_in`` discarded steps.

    Without ``noise`` the innovations are Gaussian with covariance
    ``params.sigma``; use ``.observed(params.k_x)`` for the X part.
    """
    if L < 1:
        raise InsufficientDataError("L must be at least 1")
    params.require_stable()
    rng = np.random.default_rng(seed)
    n = L + burn_in
    if noise is None:
        vals, vecs = np.linalg.eigh(params.sigma)
        root = vecs * np.sqrt(np.clip(vals, 0.0, None))
        innov = rng.standard_normal((n, params.K)) @ root.T
    else:
        if noise.K != params.K:
            raise DimensionError(f"noise model has {noise.K} channels, process has {params.K}")
        innov = noise.sample(rng, n)
    w = _kernels.var_recursion(np.ascontiguousarray(params.A), innov)
    labels = tuple(f"x{i + 1}" for i in range(params.k_x)) + tuple(
        f"z{i + 1}" for i in range(params.k_z)
    )
    s = seed if isinstance(seed, (int, np.integer)) else None
    return TimeSeriesSample(w[burn_in:], labels, s)


def analytic_autocov(params: VarParams, max_lag: int, sigma=None) -> AutocovSequence:
    """Autocovariances of the full process from the transition matrix.

    vec(Gamma_0) = (I - A kron A)^{-1} vec(Sigma), Gamma_i = A Gamma_{i-1}.
    Use ``.restrict(params.k_x)`` for the observed block.
    """
    params.require_stable()
    A = params.A
    S = params.sigma if sigma is None else np.asarray(sigma, dtype=float)
    K = params.K
    M = np.eye(K * K) - np.kron(A, A)
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > 1e12:
        raise ConditioningError(f"I - A kron A is ill-conditioned (cond {cond:.3g})", cond)
    g0 = np.linalg.solve(M, S.reshape(-1)).reshape(K, K)
    g0 = 0.5 * (g0 + g0.T)
    gammas = [g0]
    for _ in range(max_lag):
        gammas.append(A @ gammas[-1])
    return AutocovSequence(np.array(gammas), "analytic")


def sample_autocov(x: TimeSeriesSample | np.ndarray, max_lag: int) -> AutocovSequence:
    """Mean-centred sample autocovariances with 1/L normalisation."""
    v = x.values if isinstance(x, TimeSeriesSample) else np.atleast_2d(np.asarray(x, dtype=float))
    if v.ndim == 2 and v.shape[0] == 1 and v.shape[1] > 1 and not isinstance(x, TimeSeriesSample):
        v = v.T
    L = v.shape[0]
    if L <= max_lag + 1:
        raise InsufficientDataError(f"need L > max_lag + 1 = {max_lag + 1}, got L = {L}")
    xc = v - v.mean(axis=0)
    gammas = [xc[i:].T @ xc[: L - i] / L for i in range(max_lag + 1)]
    gammas[0] = 0.5 * (gammas[0] + gammas[0].T)
    return AutocovSequence(np.array(gammas), "sample")
