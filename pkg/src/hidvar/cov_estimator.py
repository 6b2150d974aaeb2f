"""Covariance-based estimation of B up to finitely many candidates.

Pipeline: sample autocovariances -> residual ansatz (U1, U2) chosen so the
generalised residual ``x_t - U1 x_{t-1} - U2 x_{t-2}`` is uncorrelated with
``x_{t-2}`` and ``x_{t-3}`` -> right solvents of ``Q^2 - U1 Q - U2 = 0``.
The true B is among the solvents when D = 0 (plus genericity); this module
never picks one of them.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .errors import (
    AssumptionError,
    ConditioningError,
    DimensionError,
    InsufficientDataError,
    NumericError,
    StageError,
)
from .report import EstimationReport, _jsonable
from .var_core import AutocovSequence, TimeSeriesSample, sample_autocov

MAX_COND = 1e12
MAX_EIGVEC_COND = 1e10
ROOT_SEP_TOL = 1e-8
SOLVENT_TOL = 1e-6


@dataclass(frozen=True)
class ResidualAnsatz:
    U1: np.ndarray
    U2: np.ndarray
    residual_norm: float = 0.0
    cond: float = float("nan")
    rank: int | None = None

    def to_dict(self) -> dict:
        return {
            "U1": self.U1.tolist(),
            "U2": self.U2.tolist(),
            "residual_norm": self.residual_norm,
            "cond": self.cond,
            "rank": self.rank,
        }


@dataclass(frozen=True)
class SolventSet:
    roots: np.ndarray
    solvents: list
    residuals: list
    distinct_roots: bool
    skipped_subsets: int = 0
    complex_solvents: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.solvents)

    def to_dict(self) -> dict:
        return _jsonable(
            {
                "roots": [{"re": float(r.real), "im": float(r.imag)} for r in self.roots],
                "solvents": self.solvents,
                "residuals": self.residuals,
                "distinct_roots": self.distinct_roots,
                "skipped_subsets": self.skipped_subsets,
            }
        )


def _ansatz_system(gammas: AutocovSequence):
    g0, g1, g2, g3 = (gammas[i] for i in range(4))
    G = np.block([[g1, g2], [g0, g1]])
    rhs = np.hstack([g2, g3])
    return G, rhs


def solve_ansatz(gammas: AutocovSequence, rank: int | None = None) -> ResidualAnsatz:
    """Solve ``(U1, U2) [[G1, G2], [G0, G1]] = (G2, G3)``.

    With ``rank=None`` the block matrix must be well conditioned. With fewer
    hidden than observed channels the system is rank deficient (rank
    ``K_X + K_Z``) and the solutions form an affine family; passing ``rank``
    returns its minimum-norm member from a truncated SVD.
    """
    if gammas.m < 3:
        raise InsufficientDataError("need autocovariances up to lag 3")
    n = gammas.d
    G, rhs = _ansatz_system(gammas)
    sv = np.linalg.svd(G, compute_uv=False)
    if rank is None:
        cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
        if not np.isfinite(cond) or cond > MAX_COND:
            raise ConditioningError(f"ansatz system is ill-conditioned (cond {cond:.3g})", cond)
        U = np.linalg.solve(G.T, rhs.T).T
    else:
        if not n <= rank <= 2 * n:
            raise DimensionError(f"rank must lie in [{n}, {2 * n}]")
        cond = float(sv[0] / sv[rank - 1]) if sv[rank - 1] > 0 else float("inf")
        if not np.isfinite(cond) or cond > MAX_COND:
            raise ConditioningError(f"rank-{rank} ansatz system is ill-conditioned (cond {cond:.3g})", cond)
        u, s, vt = np.linalg.svd(G)
        G_pinv = (vt[:rank].T / s[:rank]) @ u[:, :rank].T
        U = rhs @ G_pinv
    res = float(np.linalg.norm(U @ G - rhs))
    return ResidualAnsatz(U[:, :n].copy(), U[:, n:].copy(), res, cond, rank)


def compute_residual(x: TimeSeriesSample | np.ndarray, ansatz: ResidualAnsatz) -> np.ndarray:
    """Generalised residual r_t = x_t - U1 x_{t-1} - U2 x_{t-2} for t = 3..L."""
    v = x.values if isinstance(x, TimeSeriesSample) else np.asarray(x, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape[1] != ansatz.U1.shape[0]:
        raise DimensionError(f"data has {v.shape[1]} channels, ansatz expects {ansatz.U1.shape[0]}")
    if v.shape[0] < 3:
        raise InsufficientDataError("need L >= 3")
    return v[2:] - v[1:-1] @ ansatz.U1.T - v[:-2] @ ansatz.U2.T


def companion(ansatz: ResidualAnsatz) -> np.ndarray:
    n = ansatz.U1.shape[0]
    return np.block([[ansatz.U1, ansatz.U2], [np.eye(n), np.zeros((n, n))]])


def latent_roots(ansatz: ResidualAnsatz) -> np.ndarray:
    """Roots of det(a^2 I - a U1 - U2): eigenvalues of the block companion matrix."""
    M = companion(ansatz)
    if not np.all(np.isfinite(M)):
        raise NumericError("ansatz has non-finite entries")
    try:
        return np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"companion eigensolver failed: {exc}") from exc


def roots_distinct(roots: np.ndarray, tol: float = ROOT_SEP_TOL) -> bool:
    scale = max(1.0, float(np.max(np.abs(roots)))) if roots.size else 1.0
    diff = np.abs(roots[:, None] - roots[None, :])
    np.fill_diagonal(diff, np.inf)
    return bool(np.all(diff > tol * scale))


def certify(S: np.ndarray, ansatz: ResidualAnsatz) -> float:
    T = S @ S - ansatz.U1 @ S - ansatz.U2
    return float(np.linalg.norm(T) / (1.0 + np.linalg.norm(S) ** 2))


def enumerate_solvents(
    ansatz: ResidualAnsatz,
    solvent_tol: float = SOLVENT_TOL,
    root_sep_tol: float = ROOT_SEP_TOL,
) -> SolventSet:
    """All real right solvents S of S^2 - U1 S - U2 = 0 built from eigenpairs of
    the block companion matrix.

    Each solvent is ``W diag(lam) W^{-1}`` for a choice of ``n`` eigenpairs
    whose lower eigenvector halves ``W`` are independent. Real solvents need
    choices closed under conjugation; complex pairs are handled through
    their real 2x2 rotation blocks.
    """
    n = ansatz.U1.shape[0]
    M = companion(ansatz)
    lam, V = np.linalg.eig(M)
    if not roots_distinct(lam, root_sep_tol):
        raise AssumptionError(f"latent roots are not distinct: {np.sort_complex(lam)}")
    scale = max(1.0, float(np.max(np.abs(lam))))
    is_real = np.abs(lam.imag) <= 1e-12 * scale
    partner = np.full(lam.size, -1)
    for j in np.flatnonzero(~is_real):
        partner[j] = int(np.argmin(np.abs(lam - np.conj(lam[j]))))
    lower = V[n:, :]

    solvents, residuals, complex_solvents = [], [], []
    skipped = 0
    for subset in itertools.combinations(range(lam.size), n):
        chosen = set(subset)
        closed = all(is_real[j] or partner[j] in chosen for j in subset)
        if closed:
            cols, blocks = [], []
            for j in subset:
                if is_real[j]:
                    cols.append(lower[:, j].real)
                    blocks.append(np.array([[lam[j].real]]))
                elif lam[j].imag > 0:
                    w = lower[:, j]
                    a, b = lam[j].real, lam[j].imag
                    cols.extend([w.real, w.imag])
                    blocks.append(np.array([[a, b], [-b, a]]))
            W = np.column_stack(cols)
            Lam = _block_diag(blocks)
        else:
            W = lower[:, list(subset)]
            Lam = np.diag(lam[list(subset)])
        if np.linalg.cond(W) > MAX_EIGVEC_COND:
            skipped += 1
            continue
        S = np.linalg.solve(W.T, (W @ Lam).T).T
        if not closed:
            complex_solvents.append(S)
            continue
        r = certify(S, ansatz)
        if r <= solvent_tol:
            solvents.append(S)
            residuals.append(r)
    assert len(solvents) <= comb(2 * n, n)
    return SolventSet(lam, solvents, residuals, True, skipped, complex_solvents)


def _block_diag(blocks: list[np.ndarray]) -> np.ndarray:
    size = sum(b.shape[0] for b in blocks)
    out = np.zeros((size, size))
    i = 0
    for b in blocks:
        k = b.shape[0]
        out[i : i + k, i : i + k] = b
        i += k
    return out


def default_solvent_tol(L: int | None) -> float:
    """1e-6 for analytic or very long samples, up to 1e-2 for short ones."""
    if L is None:
        return SOLVENT_TOL
    return float(min(1e-2, max(SOLVENT_TOL, 1.0 / np.sqrt(L))))


def estimate_cov(
    x: TimeSeriesSample,
    k_z: int | None = None,
    solvent_tol: float | None = None,
    seed: int | None = None,
) -> EstimationReport:
    """Run the full covariance pipeline on a sample of X.

    ``k_z`` (assumed number of hidden channels) is only used to pick the
    rank of the ansatz system; ``None`` requires it to be nonsingular.
    """
    t0 = time.perf_counter()
    if x.L < 5:
        raise InsufficientDataError(f"need L >= 5, got {x.L}")
    try:
        gammas = sample_autocov(x, 3)
    except Exception as exc:
        raise StageError("autocov", exc) from exc
    rank = None if k_z is None else x.d + k_z
    try:
        ansatz = solve_ansatz(gammas, rank=rank)
    except Exception as exc:
        raise StageError("ansatz", exc) from exc
    tol = default_solvent_tol(x.L) if solvent_tol is None else solvent_tol
    try:
        sset = enumerate_solvents(ansatz, solvent_tol=tol)
    except Exception as exc:
        raise StageError("solvents", exc) from exc
    diagnostics = {
        "ansatz": ansatz.to_dict(),
        "solvents": sset.to_dict(),
        "G2": sset.distinct_roots,
        "solvent_tol": tol,
        "assumptions_verified": False,
        "note": "D = 0 is assumed, not checked; run the model check",
    }
    if not sset.solvents:
        diagnostics["empty"] = (
            "no conjugate-closed eigenpair choice with independent eigenvectors"
        )
    if sset.complex_solvents:
        diagnostics["complex_solvent_real_parts"] = [S.real for S in sset.complex_solvents]
    return EstimationReport(
        method="cov",
        candidates=list(sset.solvents),
        diagnostics=diagnostics,
        seed=seed,
        wall_ms=1e3 * (time.perf_counter() - t0),
    )
