"""Tuning-parameter machinery: the noise-free pilot value, the standard
descending grid, warm-started solution paths, and HBIC / validation
selection."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import solver
from .errors import HypothesisViolated, NumericalBreakdown
from .graph import NodeWeights, PredictorGraph


def _power_sq_opnorm(M: np.ndarray, max_iter: int = 1000, tol: float = 1e-10) -> float:
    """Largest eigenvalue of M'M (squared operator norm of M) by power
    iteration from the deterministic normalized all-ones vector."""
    d = M.shape[1]
    v = np.full(d, 1.0 / math.sqrt(d))
    prev = 0.0
    for _ in range(max_iter):
        w = M.T @ (M @ v)
        est = float(v @ w)
        norm_w = float(np.linalg.norm(w))
        if norm_w == 0.0:
            return 0.0
        v = w / norm_w
        if abs(est - prev) <= tol * max(1.0, abs(est)):
            return est
        prev = est
    return prev


def operator_norm(M: np.ndarray) -> float:
    """Spectral norm of ``M`` (deterministic power iteration)."""
    return math.sqrt(_power_sq_opnorm(np.asarray(M, dtype=float)))


def _max_neighborhood_sq_opnorm(X: np.ndarray, graph: PredictorGraph) -> float:
    best = 0.0
    seen = set()
    for nb in graph.neighborhoods:
        key = nb.tobytes()
        if key in seen:
            continue
        seen.add(key)
        best = max(best, _power_sq_opnorm(X[:, nb]))
    return best


def lambda_pilot(
    X: np.ndarray,
    graph: PredictorGraph,
    weights: NodeWeights,
    alpha: float,
    r: float,
    strict: bool = True,
) -> float:
    """Noise-scale-free pilot penalty level.

    Returns n * rbar * sqrt(2 zeta d_max) / (tau_min sqrt(n - d_max)) *
    (1 + sqrt(2 log(2p/alpha) / d_min)) with rbar = (r+1)/(r-1) and zeta
    the largest squared spectral norm among neighborhood submatrices.
    The concentration guarantee behind the formula assumes
    16 log(2p/alpha) <= n - d_max; outside that regime the call raises
    HypothesisViolated (the exception carries the still-computed value),
    or warns and returns the value when ``strict=False``.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly between 0 and 1")
    if not r > 1.0:
        raise ValueError("r must exceed 1")
    if graph.p != p:
        raise ValueError("graph does not match the number of predictors")
    d_max, d_min = graph.d_max, graph.d_min
    if d_max >= n:
        raise ValueError(
            f"largest neighborhood ({d_max}) must be smaller than the sample size ({n})"
        )
    zeta = _max_neighborhood_sq_opnorm(X, graph)
    rbar = (r + 1.0) / (r - 1.0)
    tau_min = weights.tau_min
    value = (
        n
        * rbar
        * math.sqrt(2.0 * zeta * d_max)
        / (tau_min * math.sqrt(n - d_max))
        * (1.0 + math.sqrt(2.0 * math.log(2.0 * p / alpha) / d_min))
    )
    if 16.0 * math.log(2.0 * p / alpha) > n - d_max:
        message = (
            f"sample-size hypothesis fails: 16 log(2p/alpha) = "
            f"{16.0 * math.log(2.0 * p / alpha):.1f} > n - d_max = {n - d_max}"
        )
        if strict:
            raise HypothesisViolated(message, value=value)
        warnings.warn(message, RuntimeWarning, stacklevel=2)
    return value


@dataclass(frozen=True)
class LambdaGrid:
    """Strictly descending positive penalty levels plus their provenance."""

    values: np.ndarray
    rule: str = "explicit"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("grid must be a nonempty 1-d sequence")
        if not np.all(values > 0) or not np.all(np.isfinite(values)):
            raise ValueError("grid values must be positive finite reals")
        if values.size > 1 and not np.all(np.diff(values) < 0):
            raise ValueError("grid values must be strictly descending")

    def __len__(self) -> int:
        return len(self.values)

    @classmethod
    def explicit(cls, values) -> "LambdaGrid":
        """Sort user-supplied values into descending order."""
        values = np.unique(np.asarray(values, dtype=float))[::-1]
        return cls(values, rule="explicit")


def lambda_grid_paper(
    X: np.ndarray,
    n: int | None = None,
    min_exp: float = -13.0,
    max_exp: float = -5.0,
    step: float = 0.2,
) -> LambdaGrid:
    """The standard descending grid lam_k = 2^(-5 - 0.2 k) n sqrt(n/2) ||X||,
    k = 0..40 (41 values with the default exponent range).

    The trailing factor n converts the grid from penalty-coefficient units
    (objectives written as loss + lam ||.||) to the units of Problem.lam
    (objectives written as loss + (lam / n) ||.||).  Without it the entire
    grid sits below the smallest penalty that moves any coefficient on
    standardized designs, so every fit on the path would interpolate.
    """
    X = np.asarray(X, dtype=float)
    if n is None:
        n = X.shape[0]
    if not (step > 0 and math.isfinite(step)):
        raise ValueError("step must be positive")
    if not min_exp < max_exp:
        raise ValueError("min_exp must be below max_exp")
    opnorm = operator_norm(X)
    if opnorm == 0.0:
        raise ValueError("design matrix must be nonzero")
    count = int(round((max_exp - min_exp) / step)) + 1
    exponents = max_exp - step * np.arange(count)
    scale = float(n) * math.sqrt(n / 2.0) * opnorm
    return LambdaGrid(2.0**exponents * scale, rule="paper_grid")


@dataclass(eq=False)
class PathResult:
    """Fits along a descending grid plus selection bookkeeping.

    ``fits[k]`` is None when that penalty level failed (also recorded in
    ``failures`` as (index, message)).  ``hbic`` always has grid length;
    ``validation_error`` is filled by select(..., method="validation").
    ``n`` is the training sample size; select() uses it to bound the
    model sizes admissible under the information criterion.
    """

    grid: LambdaGrid
    fits: list
    hbic: np.ndarray
    failures: list = field(default_factory=list)
    validation_error: np.ndarray | None = None
    selected: int | None = None
    n: int | None = None


def _hbic_value(rss: float, support_size: int, n: int, p: int) -> float:
    if n < 3:
        raise ValueError("hbic needs n >= 3")
    if rss == 0.0:
        return -math.inf
    return math.log(rss / n) + support_size * math.log(math.log(n)) * math.log(p) / n


def hbic(fit: solver.FitResult, n: int, p: int) -> float:
    """High-dimensional BIC: log(RSS/n) + |support| log(log n) log(p) / n.

    A zero-RSS (interpolating) fit returns -inf; select() orders such
    degenerate fits last rather than first.
    """
    return _hbic_value(fit.rss, fit.support.size, n, p)




def fit_path(
    X: np.ndarray,
    y: np.ndarray,
    graph: PredictorGraph,
    weights: NodeWeights,
    grid: LambdaGrid,
    settings: solver.AdmmSettings | None = None,
    loss: str = "sqrt",
) -> PathResult:
    """Fit every grid value in descending order, warm-starting each fit
    from the previous workspace.  Per-value failures are recorded and the
    path continues from the last successful iterate.

    The supplied tolerances apply to the top of the grid and are scaled
    down proportionally to lam / max(lam) for the rest (floored at 1e-12):
    the dual-feasibility margin of a fit shrinks with the penalty level,
    so constant tolerances would let optimality certificates degrade as
    the path descends.

    Once a converged fit interpolates (RSS at rounding level relative to
    ||y||^2), every smaller penalty level interpolates as well -- the loss
    at the optimum is monotone in the penalty level -- and such fits carry
    no optimality certificate and are never selected.  They therefore only
    need enough precision to confirm interpolation, and the remainder of
    the path runs at a relaxed tolerance.  A relaxed fit that nevertheless
    produces a defined certificate is re-solved at path precision.

    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if settings is None:
        settings = solver.AdmmSettings()
    n, p = X.shape
    fits: list = []
    failures: list = []
    workspace = None
    lam_top = float(grid.values[0])
    # an RSS at rounding level relative to ||y||^2 means the fit
    # interpolates; its log-RSS term would otherwise dominate the
    # criterion and hand the selection to a degenerate fit
    rss_floor = 1e-10 * float(y @ y)
    interpolating = False
    for k, lam in enumerate(grid.values):
        scale = float(lam) / lam_top
        tight = replace(
            settings,
            tol_primal=max(settings.tol_primal * scale, 1e-12),
            tol_dual=max(settings.tol_dual * scale, 1e-12),
        )
        if interpolating:
            local = replace(
                settings,
                tol_primal=max(settings.tol_primal, 1e-6),
                tol_dual=max(settings.tol_dual, 1e-6),
            )
        else:
            local = tight
        prob = solver.Problem(X, y, graph, weights, float(lam), loss=loss)
        try:
            result, workspace = solver.fit(
                prob, local, warm_start=workspace, return_workspace=True
            )
            if interpolating and result.kkt_certificate is not None:
                result, workspace = solver.fit(
                    prob, tight, warm_start=workspace, return_workspace=True
                )
        except NumericalBreakdown as err:
            failures.append((k, str(err)))
            fits.append(None)
            continue
        fits.append(result)
        if result.status == "converged" and result.rss <= rss_floor:
            interpolating = True
    if n >= 3:
        criterion = np.array(
            [
                -math.inf
                if f is not None and f.rss <= rss_floor
                else (hbic(f, n, p) if f is not None else math.inf)
                for f in fits
            ]
        )
    else:
        criterion = np.full(len(fits), math.nan)
    return PathResult(grid=grid, fits=fits, hbic=criterion, failures=failures, n=n)


def select(
    path: PathResult,
    method: str = "hbic",
    X_val: np.ndarray | None = None,
    y_val: np.ndarray | None = None,
) -> int:
    """Pick the grid index minimizing the requested criterion.

    Non-finite criterion values (failed fits, interpolating fits) are
    ordered last; ties resolve to the first index, i.e. the larger
    penalty and the sparser model.

    Information-criterion selection only considers fits whose support has
    between 1 and n/2 coordinates.  Above n/2 the log-RSS term stops
    being informative: as the model size approaches the sample size the
    residual collapses regardless of whether the extra coordinates are
    real, and the criterion chases that collapse.  The empty fit is
    excluded for the mirror-image reason: every nonzero fit's residual
    carries the shrinkage bias of the penalty, which the criterion does
    not account for, while the zero fit alone is bias-free -- scoring
    them on the same scale favors the null model on weak-signal samples
    even when the path contains the true support.  Each bound is waived
    when it would leave no candidate.
    """
    if method == "hbic":
        criterion = np.asarray(path.hbic, dtype=float).copy()
        if path.n is not None:
            cap = path.n // 2
            capped = np.array(
                [f is not None and f.support.size <= cap for f in path.fits]
            )
            nonzero = np.array(
                [f is not None and f.support.size > 0 for f in path.fits]
            )
            finite = np.isfinite(criterion)
            for admissible in (capped & nonzero, capped):
                if np.any(admissible & finite):
                    criterion[~admissible] = math.inf
                    break
    elif method == "validation":
        if X_val is None or y_val is None:
            raise ValueError("validation selection needs X_val and y_val")
        X_val = np.asarray(X_val, dtype=float)
        y_val = np.asarray(y_val, dtype=float)
        errors = np.array(
            [
                float(np.mean((y_val - X_val @ f.beta_hat) ** 2))
                if f is not None
                else math.inf
                for f in path.fits
            ]
        )
        path.validation_error = errors
        criterion = errors.copy()
    else:
        raise ValueError(f"unknown selection method {method!r}")
    criterion[~np.isfinite(criterion)] = math.inf
    if not np.any(np.isfinite(criterion)):
        raise ValueError("no successful fit to select from")
    index = int(np.argmin(criterion))
    path.selected = index
    return index
