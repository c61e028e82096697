"""ADMM solver for square-root-loss and least-squares graph-penalized
regression.

The two models share one splitting: minimize loss(X beta - y) scaled per
sample plus (lambda / n) times the latent graph norm of beta, with copies
u = X beta - y and v = beta.  Each iteration performs a ridge-type beta
solve (cached through the Sherman-Morrison-Woodbury identity when p > n),
a loss prox on u, the graph-norm prox on v, and scaled dual ascent.  Only
the u-update differs between the two losses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import prox
from .errors import MaxIterationsExceeded, NumericalBreakdown, ResidualZero
from .graph import NodeWeights, PredictorGraph

_GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0

LOSSES = ("sqrt", "least_squares")


@dataclass(eq=False)
class Problem:
    """One penalized regression instance.

    ``loss`` selects the data term: ``"sqrt"`` uses ||y - X beta||_2 /
    sqrt(n), ``"least_squares"`` uses ||y - X beta||_2^2 / (2 n).  The
    penalty is lam / n times the graph norm in both cases, so the two
    models differ only in the loss.
    """

    X: np.ndarray
    y: np.ndarray
    graph: PredictorGraph
    weights: NodeWeights
    lam: float
    loss: str = "sqrt"

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        n, p = self.X.shape
        if n < 2:
            raise ValueError("need at least two samples")
        if self.y.shape != (n,):
            raise ValueError(f"y has shape {self.y.shape}, expected ({n},)")
        if self.graph.p != p:
            raise ValueError(f"graph is over {self.graph.p} nodes, X has {p} columns")
        if self.weights.tau.shape != (p,):
            raise ValueError("weights do not match the number of predictors")
        if not (np.isfinite(self.X).all() and np.isfinite(self.y).all()):
            raise ValueError("X and y must be finite")
        self.lam = float(self.lam)
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError("lam must be a positive finite real")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class AdmmSettings:
    """Solver knobs.  ``gamma`` must stay below the golden ratio."""

    rho: float = 1.0
    gamma: float = 1.618
    tol_primal: float = 1e-7
    tol_dual: float = 1e-7
    max_iter: int = 20000
    projection_switch_ratio: float = 1.0
    support_tol: float = 1e-6

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not 0 < self.gamma < _GOLDEN:
            raise ValueError(f"gamma must lie in (0, {_GOLDEN:.6f})")
        if not (self.tol_primal > 0 and self.tol_dual > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0 < self.projection_switch_ratio <= 1:
            raise ValueError("projection_switch_ratio must lie in (0, 1]")
        if not self.support_tol >= 0:
            raise ValueError("support_tol must be nonnegative")


class SmwCache:
    """Cholesky factorization backing solves with I_p + X'X.

    For p > n the factorization is of the n-by-n matrix I_n + X X' and
    solves go through the Woodbury identity
    (I_p + X'X)^{-1} = I_p - X'(I_n + X X')^{-1} X; otherwise the p-by-p
    matrix is factored directly.  ``mode`` can force either path.
    """

    def __init__(self, X: np.ndarray, mode: str = "auto"):
        X = np.asarray(X, dtype=float)
        n, p = X.shape
        if mode == "auto":
            mode = "woodbury" if p > n else "direct"
        if mode == "woodbury":
            system = np.eye(n) + X @ X.T
        elif mode == "direct":
            system = np.eye(p) + X.T @ X
        else:
            raise ValueError(f"unknown mode {mode!r}")
        try:
            self.factor = linalg.cho_factor(system, lower=True)
        except linalg.LinAlgError as err:  # pragma: no cover - corrupt input only
            raise NumericalBreakdown(f"ridge system factorization failed: {err}")
        self.X = X
        self.mode = mode


def smw_solve(cache: SmwCache, rhs: np.ndarray) -> np.ndarray:
    """Solve (I_p + X'X) out = rhs with the cached factorization."""
    rhs = np.asarray(rhs, dtype=float)
    if cache.mode == "direct":
        return linalg.cho_solve(cache.factor, rhs, check_finite=False)
    inner = linalg.cho_solve(cache.factor, cache.X @ rhs, check_finite=False)
    return rhs - cache.X.T @ inner


@dataclass(eq=False)
class AdmmWorkspace:
    """Mutable iterate state threaded through admm_step calls."""

    beta: np.ndarray
    u: np.ndarray
    v: np.ndarray
    z: np.ndarray
    w: np.ndarray
    smw_cache: SmwCache
    iteration: int = 0
    residual_history: list = field(default_factory=list)
    prox_warm: dict = field(default_factory=dict)

    @classmethod
    def initial(cls, prob: Problem) -> "AdmmWorkspace":
        """Cold start: beta = v = 0 and u = -y, which satisfies the first
        constraint X beta - u = y exactly."""
        return cls(
            beta=np.zeros(prob.p),
            u=-prob.y.copy(),
            v=np.zeros(prob.p),
            z=np.zeros(prob.n),
            w=np.zeros(prob.p),
            smw_cache=SmwCache(prob.X),
        )


def admm_step(ws: AdmmWorkspace, prob: Problem, settings: AdmmSettings) -> AdmmWorkspace:
    """One full ADMM sweep: beta, u, v, then the two dual variables.

    Appends (primal residual on X beta - u = y, primal residual on
    beta = v, dual residual) to the workspace history.
    """
    X, y = prob.X, prob.y
    n, p = prob.n, prob.p
    rho, gamma = settings.rho, settings.gamma

    rhs = ws.v - ws.w / rho + X.T @ (ws.u + y - ws.z / rho)
    beta = smw_solve(ws.smw_cache, rhs)
    x_beta = X @ beta

    if prob.loss == "sqrt":
        u = prox.prox_l2(x_beta - y + ws.z / rho, 1.0 / (rho * math.sqrt(n)))
    else:
        u = (rho * (x_beta - y) + ws.z) / (1.0 / n + rho)

    v, _ = prox.prox_graph_norm(
        beta + ws.w / rho,
        prob.graph,
        prob.weights,
        t=prob.lam / (rho * n),
        switch_ratio=settings.projection_switch_ratio,
        warm=ws.prox_warm,
    )

    z = ws.z + gamma * rho * (x_beta - u - y)
    w = ws.w + gamma * rho * (beta - v)

    dual = rho * float(np.linalg.norm(X.T @ (u - ws.u) + (v - ws.v))) / math.sqrt(p)
    primal_fit = float(np.linalg.norm(x_beta - u - y)) / math.sqrt(n)
    primal_split = float(np.linalg.norm(beta - v)) / math.sqrt(p)

    ws.beta, ws.u, ws.v, ws.z, ws.w = beta, u, v, z, w
    ws.iteration += 1
    ws.residual_history.append((primal_fit, primal_split, dual))
    return ws


@dataclass(eq=False)
class FitResult:
    """Outcome of one fit.  ``beta_hat`` is the prox-block iterate, so its
    zeros are exact; ``support`` indexes entries above the support
    tolerance.  ``kkt_certificate`` is the maximum normalized dual
    infeasibility, or None when the fit interpolates (zero residual)."""

    beta_hat: np.ndarray
    support: np.ndarray
    objective: float
    iterations: int
    kkt_certificate: float | None
    status: str
    rss: float


def objective_value(prob: Problem, beta: np.ndarray) -> float:
    """Loss plus scaled graph-norm penalty at ``beta``."""
    beta = np.asarray(beta, dtype=float)
    r = prob.y - prob.X @ beta
    n = prob.n
    try:
        value, _ = prox.graph_norm(beta, prob.graph, prob.weights)
    except MaxIterationsExceeded as err:
        value = err.residual  # feasible decomposition value: an upper bound
    if prob.loss == "sqrt":
        data_term = float(np.linalg.norm(r)) / math.sqrt(n)
    else:
        data_term = float(r @ r) / (2.0 * n)
    return data_term + prob.lam / n * value


def kkt_certificate(prob: Problem, beta_hat: np.ndarray) -> tuple[float, np.ndarray]:
    """Normalized dual-feasibility check at ``beta_hat``.

    For the square-root loss the stationarity condition bounds each
    neighborhood correlation by ||X_N' r|| / ||r|| <= lam tau_i / sqrt(n);
    for least squares the bound is ||X_N' r|| <= lam tau_i.  Returns the
    largest positive normalized excess (0.0 when dual-feasible) together
    with the per-node signed slacks (q_i - bound_i) / bound_i, negative
    when satisfied.
    """
    beta_hat = np.asarray(beta_hat, dtype=float)
    r = prob.y - prob.X @ beta_hat
    r_norm = float(np.linalg.norm(r))
    # the certificate compares the *direction* of r against the dual bound;
    # once the fit interpolates up to rounding, that direction is noise, so
    # the check is undefined both at exact zero and at machine-level
    # residuals relative to the response scale
    if r_norm < 1e-14 or r_norm < 1e-5 * float(np.linalg.norm(prob.y)):
        raise ResidualZero(
            "residual is numerically zero; the optimality certificate is undefined"
        )
    corr = prob.X.T @ r
    q = np.sqrt(prob.graph.neighborhood_sq_norms(corr))
    if prob.loss == "sqrt":
        bound = prob.lam * prob.weights.tau / math.sqrt(prob.n)
        q = q / r_norm
    else:
        bound = prob.lam * prob.weights.tau
    slacks = (q - bound) / bound
    return max(float(slacks.max()), 0.0), slacks


def _start_workspace(prob: Problem, warm_start: AdmmWorkspace | None) -> AdmmWorkspace:
    if warm_start is None:
        return AdmmWorkspace.initial(prob)
    if warm_start.beta.shape != (prob.p,) or warm_start.u.shape != (prob.n,):
        raise ValueError("warm-start workspace does not match the problem dimensions")
    cache = warm_start.smw_cache
    if cache is None or cache.X is not prob.X:
        cache = SmwCache(prob.X)
    return AdmmWorkspace(
        beta=warm_start.beta.copy(),
        u=warm_start.u.copy(),
        v=warm_start.v.copy(),
        z=warm_start.z.copy(),
        w=warm_start.w.copy(),
        smw_cache=cache,
        prox_warm=dict(warm_start.prox_warm),
    )


def fit(
    prob: Problem,
    settings: AdmmSettings | None = None,
    warm_start: AdmmWorkspace | None = None,
    return_workspace: bool = False,
):
    """Run ADMM to convergence (or ``max_iter``) and package the result.

    Convergence requires both primal residuals below ``tol_primal`` and
    the dual residual below ``tol_dual``.  Non-convergence is reported
    through ``status`` rather than raised; non-finite iterates abort with
    NumericalBreakdown.  With ``return_workspace=True`` the final
    workspace is returned alongside the result for warm-starting.
    """
    if settings is None:
        settings = AdmmSettings()
    ws = _start_workspace(prob, warm_start)
    status = "max_iter"
    for _ in range(settings.max_iter):
        admm_step(ws, prob, settings)
        if not (np.isfinite(ws.beta).all() and np.isfinite(ws.u).all()):
            raise NumericalBreakdown(
                f"non-finite iterates at iteration {ws.iteration}"
            )
        primal_fit, primal_split, dual = ws.residual_history[-1]
        if (
            primal_fit <= settings.tol_primal
            and primal_split <= settings.tol_primal
            and dual <= settings.tol_dual
        ):
            status = "converged"
            break

    beta_hat = ws.v.copy()
    support = np.nonzero(np.abs(beta_hat) > settings.support_tol)[0]
    residual = prob.y - prob.X @ beta_hat
    rss = float(residual @ residual)
    try:
        certificate, _ = kkt_certificate(prob, beta_hat)
    except ResidualZero:
        certificate = None
    result = FitResult(
        beta_hat=beta_hat,
        support=support,
        objective=objective_value(prob, beta_hat),
        iterations=ws.iteration,
        kkt_certificate=certificate,
        status=status,
        rss=rss,
    )
    if return_workspace:
        return result, ws
    return result
