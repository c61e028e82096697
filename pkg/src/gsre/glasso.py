"""Sparse precision-matrix estimation and conversion into a predictor graph.

The estimator maximizes the penalized Gaussian log-likelihood

    log det(Omega) - tr(S Omega) - penalty * sum_{i != j} |Omega_ij|

by block coordinate descent on the covariance estimate ``W``: each pass
updates one column of ``W`` by solving an l1-penalized quadratic in its
off-diagonal entries (inner coordinate descent with a cached residual),
while the diagonal of ``W`` stays fixed at the diagonal of ``S``.  The
precision matrix is recovered from the column coefficients via the Schur
complement of each diagonal entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MaxIterationsExceeded, NotPSD, NumericalBreakdown
from .graph import PredictorGraph, from_precision

__all__ = [
    "PrecisionEstimate",
    "empirical_covariance",
    "graphical_lasso",
    "estimate_graph",
]


@dataclass(eq=False)
class PrecisionEstimate:
    """Penalized precision estimate together with its covariance iterate.

    Attributes
    ----------
    omega : ndarray, shape (p, p)
        Estimated precision matrix (symmetric, positive diagonal).
    sigma_hat : ndarray, shape (p, p)
        Final covariance iterate ``W``; its diagonal equals the diagonal
        of the input matrix.
    penalty : float
        Off-diagonal l1 penalty level used for the fit.
    converged : bool
        Whether the column updates reached the tolerance within budget.
    objective_history : list of float
        Penalized log-likelihood after each full cycle over the columns.
    """

    omega: np.ndarray
    sigma_hat: np.ndarray
    penalty: float
    converged: bool
    objective_history: list[float] = field(default_factory=list)


def empirical_covariance(X: np.ndarray) -> np.ndarray:
    """Covariance ``Z'Z / n`` of the column-centered sample matrix."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("sample matrix must be 2-d")
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least two samples")
    if not np.all(np.isfinite(X)):
        raise ValueError("sample matrix contains non-finite values")
    Z = X - X.mean(axis=0)
    return Z.T @ Z / n


def _penalized_objective(S: np.ndarray, omega: np.ndarray, penalty: float) -> float:
    sign, logdet = np.linalg.slogdet(omega)
    if sign <= 0:
        return -np.inf
    off = np.abs(omega).sum() - np.abs(np.diag(omega)).sum()
    return float(logdet - np.sum(S * omega) - penalty * off)


def _recover_precision(W: np.ndarray, B: np.ndarray, s_diag: np.ndarray) -> np.ndarray:
    """Assemble the precision matrix from the per-column coefficients.

    For column ``j`` with coefficients ``beta`` the Schur complement gives
    ``omega_jj = 1 / (w_jj - beta' W11 beta)`` and ``omega_12 = -beta *
    omega_jj``; the result is symmetrized by averaging.
    """
    p = W.shape[0]
    omega = np.empty((p, p))
    for j in range(p):
        b = B[:, j]
        denom = s_diag[j] - float(b @ (W @ b))
        if denom <= 0 or not np.isfinite(denom):
            raise NumericalBreakdown(
                "covariance iterate lost positive definiteness"
            )
        omega[:, j] = -b / denom
        omega[j, j] = 1.0 / denom
    return (omega + omega.T) / 2.0


def _update_column(
    W: np.ndarray,
    S: np.ndarray,
    b: np.ndarray,
    j: int,
    others: np.ndarray,
    penalty: float,
    inner_tol: float,
    max_sweeps: int,
) -> np.ndarray:
    """Coordinate descent on one penalized column subproblem.

    Minimizes ``beta' W11 beta / 2 - s12' beta + penalty * ||beta||_1``
    over the off-diagonal coefficients ``b`` of column ``j`` (``b[j]``
    stays zero).  ``q = W @ b`` is kept in sync so each coordinate step
    costs one soft-threshold plus one vector update.  Sweeps alternate
    between the full coordinate range and the current support until a
    full sweep makes no progress.
    """
    q = W @ b
    full_pass = True
    for _ in range(max_sweeps):
        ks = others if full_pass else others[b[others] != 0.0]
        delta = 0.0
        for k in ks:
            old = b[k]
            r = S[k, j] - q[k] + W[k, k] * old
            new = np.sign(r) * max(abs(r) - penalty, 0.0) / W[k, k]
            if new != old:
                step = new - old
                q += W[:, k] * step
                b[k] = new
                delta = max(delta, abs(step))
        if delta <= inner_tol:
            if full_pass:
                break
            full_pass = True
        else:
            full_pass = False
    return q


def graphical_lasso(
    S: np.ndarray,
    penalty: float,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> PrecisionEstimate:
    """Estimate a sparse precision matrix from a covariance matrix.

    Parameters
    ----------
    S : ndarray, shape (p, p)
        Symmetric positive-semidefinite input covariance with strictly
        positive diagonal.
    penalty : float
        Nonnegative l1 penalty on the off-diagonal precision entries.
    tol : float
        Convergence threshold on the largest covariance-entry change over
        one full cycle of column updates.
    max_iter : int
        Budget of full cycles; exceeding it raises
        :class:`~gsre.errors.MaxIterationsExceeded` with the last
        :class:`PrecisionEstimate` attached as ``last_iterate``.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("covariance matrix must be square")
    if not np.all(np.isfinite(S)):
        raise ValueError("covariance matrix contains non-finite values")
    scale = max(1.0, float(np.abs(S).max()))
    if np.abs(S - S.T).max() > 1e-10 * scale:
        raise ValueError("covariance matrix must be symmetric")
    if not np.isfinite(penalty) or penalty < 0:
        raise ValueError("penalty must be nonnegative and finite")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    s_diag = np.diag(S).copy()
    if np.any(s_diag <= 0):
        raise NotPSD("covariance diagonal must be strictly positive")
    min_eig = float(np.linalg.eigvalsh(S).min())
    if min_eig < -1e-8 * scale:
        raise NotPSD(f"covariance matrix has negative eigenvalue {min_eig:.3e}")

    p = S.shape[0]
    if p == 1:
        omega = np.array([[1.0 / s_diag[0]]])
        history = [_penalized_objective(S, omega, penalty)]
        return PrecisionEstimate(omega, S.copy(), penalty, True, history)

    W = S.copy()
    B = np.zeros((p, p))
    all_others = [np.delete(np.arange(p), j) for j in range(p)]
    inner_tol = 0.1 * tol
    history: list[float] = []
    converged = False
    max_change = np.inf
    for _ in range(max_iter):
        max_change = 0.0
        for j in range(p):
            others = all_others[j]
            q = _update_column(
                W, S, B[:, j], j, others, penalty, inner_tol, max_sweeps=10_000
            )
            w_new = q
            w_new[j] = s_diag[j]
            max_change = max(max_change, float(np.abs(W[:, j] - w_new).max()))
            W[:, j] = w_new
            W[j, :] = w_new
        omega = _recover_precision(W, B, s_diag)
        history.append(_penalized_objective(S, omega, penalty))
        if max_change <= tol:
            converged = True
            break
    omega = _recover_precision(W, B, s_diag)
    estimate = PrecisionEstimate(omega, W, penalty, converged, history)
    if not converged:
        raise MaxIterationsExceeded(
            f"column updates did not reach tol={tol:g} within "
            f"{max_iter} cycles (last change {max_change:.3e})",
            last_iterate=estimate,
            residual=max_change,
        )
    return estimate


def estimate_graph(
    X_samples: np.ndarray,
    penalty: float = 0.1,
    edge_tol: float = 1e-8,
    return_precision: bool = False,
) -> PredictorGraph | tuple[PredictorGraph, PrecisionEstimate]:
    """Estimate the predictor graph from unlabeled samples of the design.

    Columns are standardized to unit variance (so the penalty acts on the
    correlation scale), a sparse precision matrix is fit at the given
    penalty, and its nonzero off-diagonal pattern becomes the edge set.
    With ``return_precision`` the correlation-scale precision estimate is
    returned alongside the graph.
    """
    S = empirical_covariance(X_samples)
    v = np.diag(S)
    # centering a constant column leaves rounding dust, so test the variance
    # relative to the largest column variance rather than against exact zero
    degenerate = v <= 1e-12 * max(float(v.max()), np.finfo(float).tiny)
    if np.any(degenerate):
        bad = np.flatnonzero(degenerate)
        raise ValueError(
            f"columns {bad.tolist()} have zero variance; drop them before "
            "estimating a graph"
        )
    d = np.sqrt(v)
    R = S / np.outer(d, d)
    np.fill_diagonal(R, 1.0)
    est = graphical_lasso(R, penalty=penalty)
    graph = from_precision(est.omega, edge_tol=edge_tol)
    if return_precision:
        return graph, est
    return graph
