"""Experiment runner and evaluation metrics.

Per-run seeds come from ``np.random.SeedSequence([master, L, run])``, which
is spawned into three streams (system draw, noise, estimator). The split does
not depend on the estimator, so every method in a run sees the same system
and the same sample.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import vem
from .cov_estimator import estimate_cov
from .errors import ConfigError, DimensionError, ValidationError
from .granger import practical_granger_sample
from .report import _jsonable
from .var_core import GmmNoiseModel, TimeSeriesSample, sample_stable_var, simulate

METHODS = ("granger", "cov", "vem")
CSV_FIELDS = ("scenario", "L", "run", "method", "rmse_contrib", "error_code", "diagnostics")

SCENARIOS = {
    "fig1": dict(k_x=1, k_z=1, d_zero=True, noise="gaussian", lengths=(100, 1000, 10_000, 100_000), runs=20,
                 estimators=("granger", "cov")),
    "fig2": dict(k_x=2, k_z=1, d_zero=False, noise="super-gaussian", lengths=(100, 500, 1000, 5000), runs=20,
                 estimators=("granger", "vem")),
}
FULL_FIG1_LENGTHS = (1_000_000, 10_000_000)


class EmptyCandidatesError(ValidationError):
    pass


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def rmse(estimates, truths) -> float:
    """sqrt of the mean over runs of the squared Frobenius deviation."""
    estimates = [np.atleast_2d(np.asarray(e, dtype=float)) for e in estimates]
    truths = [np.atleast_2d(np.asarray(t, dtype=float)) for t in truths]
    if len(estimates) != len(truths):
        raise DimensionError(f"{len(estimates)} estimates for {len(truths)} truths")
    if not estimates:
        raise DimensionError("no runs to score")
    sq = []
    for e, t in zip(estimates, truths):
        if e.shape != t.shape:
            raise DimensionError(f"estimate shape {e.shape} does not match truth {t.shape}")
        sq.append(float(np.sum((e - t) ** 2)))
    return float(np.sqrt(np.mean(sq)))


def best_candidate(candidates, truth) -> tuple[int, np.ndarray]:
    """Candidate closest to the truth in squared error; ties go to the lowest
    index. Only meaningful for evaluation, since it needs the truth."""
    if candidates is None or len(candidates) == 0:
        raise EmptyCandidatesError("candidate list is empty")
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    errs = []
    for c in candidates:
        c = np.atleast_2d(np.asarray(c, dtype=float))
        if c.shape != truth.shape:
            raise DimensionError(f"candidate shape {c.shape} does not match truth {truth.shape}")
        errs.append(float(np.sum((c - truth) ** 2)))
    i = int(np.argmin(errs))
    return i, np.atleast_2d(np.asarray(candidates[i], dtype=float))


def match_c_columns(C_est, C_true) -> float:
    """Distance between C matrices modulo column scaling and permutation:
    the minimum over permutations of sum(1 - |cos|) over paired columns.
    A zero column pairs at no cost only with another zero column."""
    A = np.atleast_2d(np.asarray(C_est, dtype=float))
    T = np.atleast_2d(np.asarray(C_true, dtype=float))
    if A.shape != T.shape:
        raise DimensionError(f"shape mismatch {A.shape} vs {T.shape}")
    k = A.shape[1]
    na = np.linalg.norm(A, axis=0)
    nt = np.linalg.norm(T, axis=0)
    cost = np.ones((k, k))
    for i in range(k):
        for j in range(k):
            if na[i] == 0 and nt[j] == 0:
                cost[i, j] = 0.0
            elif na[i] > 0 and nt[j] > 0:
                cos = abs(A[:, i] @ T[:, j]) / (na[i] * nt[j])
                cost[i, j] = 1.0 - min(cos, 1.0)
    if k == 0:
        return 0.0
    return float(min(sum(cost[i, p[i]] for i in range(k)) for p in itertools.permutations(range(k))))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "fig1"
    k_x: int = 1
    k_z: int = 1
    lengths: tuple = (100, 1000, 10_000, 100_000)
    runs: int = 20
    noise: str = "gaussian"
    d_zero: bool = True
    estimators: tuple = ("granger", "cov")
    settings: dict = field(default_factory=dict)
    seed: int | None = 0
    output: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "lengths", tuple(int(n) for n in self.lengths))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if self.scenario not in ("fig1", "fig2", "custom"):
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.runs < 1:
            raise ConfigError("runs must be at least 1")
        if not self.lengths or any(n <= 0 for n in self.lengths):
            raise ConfigError("lengths must be positive")
        if list(self.lengths) != sorted(self.lengths):
            raise ConfigError("lengths must be sorted")
        if self.seed is None:
            raise ConfigError("a master seed is required")
        if self.noise not in ("gaussian", "super-gaussian"):
            raise ConfigError(f"unknown noise {self.noise!r}")
        bad = [m for m in self.estimators if m not in METHODS]
        if bad or not self.estimators:
            raise ConfigError(f"unknown estimators {bad}")
        if self.k_x < 1 or not 0 <= self.k_z <= self.k_x:
            raise ConfigError("need K_X >= 1 and 0 <= K_Z <= K_X")
        if self.scenario == "fig1" and (self.k_x, self.k_z, self.d_zero, self.noise) != (1, 1, True, "gaussian"):
            raise ConfigError("fig1 is the scalar D = 0 Gaussian scenario")
        if self.scenario == "fig2" and (self.k_x, self.k_z, self.noise) != (2, 1, "super-gaussian"):
            raise ConfigError("fig2 has K_X = 2, K_Z = 1 and super-Gaussian noise")

    @classmethod
    def for_scenario(cls, scenario: str, full: bool = False, **overrides) -> "ExperimentConfig":
        base = dict(SCENARIOS.get(scenario, {}))
        base["scenario"] = scenario
        if full and scenario == "fig1":
            base["lengths"] = tuple(base["lengths"]) + FULL_FIG1_LENGTHS
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known - {"full"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        full = bool(d.pop("full", False))
        return cls.for_scenario(d.pop("scenario", "custom"), full=full, **d)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def run_seeds(master: int, L: int, run: int):
    """(system, noise, estimator) seed sequences for one run."""
    return np.random.SeedSequence([int(master), int(L), int(run)]).spawn(3)


# ---------------------------------------------------------------------------
# runner
# ---------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list
    summary: dict

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow({k: _fmt(row[k]) for k in CSV_FIELDS})
        return buf.getvalue()

    def summary_json(self) -> str:
        return json.dumps(_jsonable(self.summary), indent=2, sort_keys=True)

    def write(self, path: str | Path) -> tuple[Path, Path]:
        path = Path(path)
        path.write_text(self.csv_text())
        spath = path.with_suffix(".summary.json")
        spath.write_text(self.summary_json())
        return path, spath


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if np.isnan(v) else format(v, ".17g")
    return str(v)


def _diag_text(d: dict) -> str:
    return json.dumps(_jsonable(d), sort_keys=True, separators=(",", ":"))


def _run_method(method: str, x: TimeSeriesSample, params, config: ExperimentConfig, est_seed: int):
    """Returns (estimate of B, diagnostics, timing ms)."""
    settings = dict(config.settings.get(method, {}))
    t0 = time.perf_counter()
    if method == "granger":
        est = practical_granger_sample(x, settings.get("method", "yule-walker"))
        return est.B_pG, {"cond": est.cond}, 1e3 * (time.perf_counter() - t0)
    if method == "cov":
        k_z = None if config.k_z == config.k_x else config.k_z
        rep = estimate_cov(x, k_z=k_z, solvent_tol=settings.get("solvent_tol"), seed=est_seed)
        cands = rep.candidates
        diag = {"n_candidates": len(cands), "G2": rep.diagnostics["G2"]}
        if not cands and "complex_solvent_real_parts" in rep.diagnostics:
            cands = rep.diagnostics["complex_solvent_real_parts"]
            diag["fallback"] = "real parts of complex solvents"
        idx, B = best_candidate(cands, params.B)
        diag["best_index"] = idx
        return B, diag, 1e3 * (time.perf_counter() - t0)
    cfg = vem.VemConfig(
        k_z=config.k_z,
        n_components=settings.get("n_components", 2),
        max_iters=settings.get("max_iters", 500),
        tol=settings.get("tol", 1e-6),
        restarts=settings.get("restarts", 5),
        seed=est_seed,
        fit_means=settings.get("fit_means", False),
    )
    fit = vem.fit(x, cfg)
    deltas = fit.trace.deltas()
    diag = {
        "elbo": fit.trace.values[-1],
        "n_iter": fit.trace.n_iter,
        "converged": fit.trace.converged,
        "min_elbo_delta": float(deltas.min()) if deltas.size else 0.0,
    }
    if config.k_z:
        diag["c_match"] = match_c_columns(fit.report.C, params.C)
    return fit.report.B, diag, 1e3 * (time.perf_counter() - t0)


def run_experiment(config: ExperimentConfig, progress=None) -> ExperimentResult:
    """Simulate, estimate and score every (length, run, method) cell.

    Failures become rows with an error code and never stop the sweep.
    """
    rows, timings = [], {}
    noise = GmmNoiseModel.super_gaussian(config.k_x + config.k_z) if config.noise == "super-gaussian" else None
    for L in config.lengths:
        for run in range(config.runs):
            s_sys, s_noise, s_est = run_seeds(config.seed, L, run)
            est_seed = int(s_est.generate_state(1)[0])
            try:
                params = sample_stable_var(config.k_x, config.k_z, d_zero=config.d_zero, seed=s_sys)
                x = simulate(params, L, noise=noise, seed=s_noise).observed(config.k_x)
            except Exception as exc:  # a failed draw fails every method of the run
                for method in config.estimators:
                    rows.append(_error_row(config, L, run, method, exc))
                continue
            for method in config.estimators:
                try:
                    B, diag, ms = _run_method(method, x, params, config, est_seed)
                    err = float(np.sum((B - params.B) ** 2))
                    diag["B"] = B
                    rows.append(
                        {"scenario": config.scenario, "L": L, "run": run, "method": method,
                         "rmse_contrib": err, "error_code": "", "diagnostics": _diag_text(diag)}
                    )
                    timings.setdefault((L, method), []).append(ms)
                except Exception as exc:
                    rows.append(_error_row(config, L, run, method, exc))
                if progress:
                    progress(L, run, method)
    rows.sort(key=lambda r: (r["L"], r["run"], r["method"]))
    return ExperimentResult(config, rows, _summarise(config, rows, timings))


def _error_row(config, L, run, method, exc) -> dict:
    cause = getattr(exc, "cause", None)
    code = type(exc).__name__ + (f":{type(cause).__name__}" if cause is not None else "")
    return {
        "scenario": config.scenario, "L": L, "run": run, "method": method,
        "rmse_contrib": float("nan"), "error_code": code,
        "diagnostics": _diag_text({"message": str(exc)}),
    }


def _summarise(config, rows, timings) -> dict:
    per_L = {}
    for L in config.lengths:
        entry = {}
        for method in config.estimators:
            sel = [r for r in rows if r["L"] == L and r["method"] == method]
            ok = [r["rmse_contrib"] for r in sel if not r["error_code"]]
            entry[method] = {
                "rmse": float(np.sqrt(np.mean(ok))) if ok else None,
                "median_error": float(np.median(np.sqrt(ok))) if ok else None,
                "n_ok": len(ok),
                "n_failed": len(sel) - len(ok),
                "wall_ms_total": float(np.sum(timings.get((L, method), [0.0]))),
            }
        per_L[str(L)] = entry
    return {
        "rmse_definition": "sqrt(mean over runs of ||B_est - B_true||_F^2), failed runs excluded",
        "config": config.to_dict(),
        "per_length": per_L,
    }


def ingest_csv(path: str | Path, center: bool = False) -> TimeSeriesSample:
    """Read a series in the package CSV format (header row of labels, one
    numeric row per time step)."""
    return TimeSeriesSample.from_csv(path, center=center)


def select_k_z(x, candidates=(0, 1), holdout: float = 0.2, **fit_kwargs) -> dict:
    """Pick K_Z by held-out bound per observation: fit on the leading part
    of the sample, score the tail with the parameters held fixed."""
    v = x.values if isinstance(x, TimeSeriesSample) else np.asarray(x, dtype=float)
    if not 0 < holdout < 1:
        raise ConfigError("holdout must lie in (0, 1)")
    n_train = int(round(v.shape[0] * (1 - holdout)))
    train, test = v[:n_train], v[n_train:]
    mean = train.mean(axis=0)
    scores = {}
    for k_z in candidates:
        fit = vem.fit(train - mean, k_z=k_z, **fit_kwargs)
        scores[int(k_z)] = vem.heldout_elbo(test - mean, fit.params) / test.shape[0]
    best = max(scores, key=scores.get)
    return {"k_z": best, "scores": scores}
