"""Proximal operators and cylinder projections for the latent group penalty.

The penalty's proximal map reduces to a Euclidean projection onto an
intersection of l2 cylinders ``{z : ||z_{N_i}|| <= c_i}`` over the graph
neighborhoods whose block norm exceeds its threshold.  Two projection
algorithms are provided: a parallel Dykstra scheme with equal-weight
averaging, and a projected Newton method on the dual multipliers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import MaxIterationsExceeded
from .graph import NodeWeights, PredictorGraph


class CylinderSet:
    """Intersection of l2 cylinders over coordinate blocks of R^p.

    Parameters
    ----------
    p : int
        Ambient dimension.
    blocks : list of (ndarray, float)
        Pairs of (coordinate indices, radius).  Radii must be nonnegative;
        indices must be unique within each block.
    """

    def __init__(self, p: int, blocks):
        self.p = int(p)
        cleaned = []
        for idx, c in blocks:
            idx = np.asarray(idx, dtype=np.intp)
            c = float(c)
            if idx.ndim != 1 or idx.size == 0:
                raise ValueError("each block needs at least one coordinate")
            if idx.min() < 0 or idx.max() >= self.p:
                raise ValueError("block indices out of range")
            if len(np.unique(idx)) != idx.size:
                raise ValueError("block indices must be unique")
            if not np.isfinite(c) or c < 0:
                raise ValueError("radii must be finite and nonnegative")
            cleaned.append((idx, c))
        self.blocks = cleaned

    def __len__(self) -> int:
        return len(self.blocks)


def project_cylinder(x: np.ndarray, indices: np.ndarray, c: float) -> np.ndarray:
    """Project ``x`` onto a single cylinder ``{z : ||z[indices]|| <= c}``."""
    out = np.array(x, dtype=float)
    norm = float(np.linalg.norm(out[indices]))
    if norm > c:
        out[indices] *= c / norm
    return out


def _hard_zero_and_dedupe(x, s: CylinderSet):
    """Apply zero-radius blocks exactly, then drop duplicate constraints.

    Zero-radius cylinders pin their coordinates to zero; both iterative
    schemes preserve zeros, so the coordinates are cleared up front and
    those blocks removed.  Among blocks with identical index sets only the
    smallest radius can bind.
    """
    y = np.array(x, dtype=float)
    keep = {}
    order = []
    for idx, c in s.blocks:
        if c == 0.0:
            y[idx] = 0.0
            continue
        key = idx.tobytes()
        if key not in keep or c < keep[key][1]:
            if key not in keep:
                order.append(key)
            keep[key] = (idx, c)
    return y, [keep[k] for k in order]


def _stack(blocks):
    idx = np.concatenate([b[0] for b in blocks])
    sizes = np.array([len(b[0]) for b in blocks])
    ptr = np.concatenate(([0], np.cumsum(sizes)))
    bid = np.repeat(np.arange(len(blocks)), sizes)
    radii = np.array([b[1] for b in blocks])
    return idx, ptr, bid, radii


def project_intersection_dykstra(
    x: np.ndarray, s: CylinderSet, tol: float = 1e-8, max_iter: int = 10000
) -> np.ndarray:
    """Project onto the cylinder intersection by parallel Dykstra iteration.

    Each sweep projects every per-block copy and averages the results with
    equal weights, carrying Dykstra correction terms so the limit is the
    exact projection rather than a mere feasible point.  Convergence
    requires both the worst block violation and the sup-norm iterate
    change to fall below ``tol``.
    """
    y, blocks = _hard_zero_and_dedupe(x, s)
    if not blocks:
        return y
    idx, ptr, bid, radii = _stack(blocks)
    m = len(blocks)
    x_cur = y
    corr = np.zeros(len(idx))
    residual = np.inf
    for _ in range(max_iter):
        v = x_cur[idx] + corr
        norms = np.sqrt(np.add.reduceat(v * v, ptr[:-1]))
        scale = np.where(norms > radii, np.divide(radii, norms, out=np.ones_like(norms), where=norms > 0), 1.0)
        w = v * scale[bid]
        corr = v - w
        x_next = x_cur + np.bincount(idx, weights=w - x_cur[idx], minlength=s.p) / m
        block_norms = np.sqrt(np.add.reduceat(x_next[idx] ** 2, ptr[:-1]))
        violation = float(np.max(block_norms - radii, initial=0.0))
        change = float(np.max(np.abs(x_next - x_cur)))
        x_cur = x_next
        residual = max(violation, change)
        if residual <= tol:
            return x_cur
    raise MaxIterationsExceeded(
        f"Dykstra projection did not reach tol={tol} in {max_iter} iterations",
        last_iterate=x_cur,
        residual=residual,
    )


def _dual_value(x2, c2, at_mu, mu):
    srow = at_mu
    return 0.5 * float(np.dot(x2, srow / (1.0 + srow))) - 0.5 * float(np.dot(mu, c2))


def _newton_multipliers(y, blocks, p, tol, max_iter, mu0=None):
    """Dual projected Newton core; returns (projection, multipliers)."""
    idx, ptr, bid, radii = _stack(blocks)
    m = len(blocks)
    if m * p <= 1_000_000:
        a_mat = np.zeros((m, p))
        a_mat[bid, idx] = 1.0
    else:
        a_mat = sp.csr_matrix((np.ones(len(idx)), idx, ptr), shape=(m, p))
    x2 = y * y
    c2 = radii * radii
    tol_eff = tol * max(1.0, float(c2.max()))
    if mu0 is None:
        # start from each block's single-cylinder multiplier ||x_N||/c - 1;
        # this lands on the right scale even for very deep violations and
        # Newton then corrects for the coupling between overlapping blocks
        bn0 = a_mat @ x2
        mu = np.maximum(np.sqrt(bn0 / c2) - 1.0, 0.0)
    else:
        mu = np.maximum(np.asarray(mu0, dtype=float), 0.0)
    residual = np.inf
    for _ in range(max_iter):
        srow = a_mat.T @ mu
        denom = 1.0 + srow
        z = y / denom
        bn = a_mat @ (z * z)
        grad = 0.5 * (bn - c2)
        violation = float(np.max(bn - c2, initial=0.0))
        complementarity = float(np.max(np.abs(mu * (bn - c2)), initial=0.0))
        residual = max(violation, complementarity)
        if violation <= tol_eff and complementarity <= tol_eff:
            return z, mu
        clamped = (mu <= 0.0) & (grad < 0.0)
        free = ~clamped
        direction = np.where(clamped, grad, 0.0)
        if free.any():
            weights = x2 / denom**3
            if isinstance(a_mat, np.ndarray):
                hess = ((a_mat * weights) @ a_mat.T)[np.ix_(free, free)]
            else:
                hess = (a_mat.multiply(weights) @ a_mat.T).toarray()[np.ix_(free, free)]
            try:
                jitter = 1e-12 * max(1.0, float(np.max(np.diag(hess))))
                cho = scipy.linalg.cho_factor(
                    hess + jitter * np.eye(hess.shape[0]), lower=True
                )
                direction[free] = scipy.linalg.cho_solve(cho, grad[free])
            except scipy.linalg.LinAlgError:
                direction[free] = grad[free]
        g0 = _dual_value(x2, c2, srow, mu)
        # absolute slack keeps the arc search from stalling once increments
        # drop below the resolution of the dual value itself
        slack = 1e-12 * max(1.0, abs(g0))
        alpha = 1.0
        for _ in range(60):
            mu_new = np.maximum(mu + alpha * direction, 0.0)
            g_new = _dual_value(x2, c2, a_mat.T @ mu_new, mu_new)
            if g_new >= g0 + 1e-4 * float(np.dot(grad, mu_new - mu)) - slack:
                break
            alpha *= 0.5
        mu = mu_new
    raise MaxIterationsExceeded(
        f"projected Newton did not reach tol={tol} in {max_iter} iterations",
        last_iterate=y / (1.0 + a_mat.T @ mu),
        residual=residual,
    )


def project_intersection_newton(
    x: np.ndarray, s: CylinderSet, tol: float = 1e-10, max_iter: int = 500
) -> np.ndarray:
    """Project onto the cylinder intersection via its dual multipliers.

    The KKT system gives ``z_j = x_j / (1 + sum of multipliers covering j)``;
    the concave dual in the multipliers ``mu >= 0`` is maximized by a
    projected Newton method with an Armijo line search along the projection
    arc.  A singular Hessian block falls back to a projected gradient step
    for that iteration.  Convergence is declared when primal feasibility
    and the complementarity products ``mu_i (||z_{N_i}||^2 - c_i^2)`` are
    within ``tol`` (scaled by the largest squared radius).
    """
    y, blocks = _hard_zero_and_dedupe(x, s)
    if not blocks:
        return y
    z, _ = _newton_multipliers(y, blocks, s.p, tol, max_iter)
    return z


def _neighborhood_norms(x: np.ndarray, graph: PredictorGraph) -> np.ndarray:
    """Block norms ||x_{N_i}||, with singleton blocks computed as |x_i| exactly."""
    norms = np.sqrt(graph.neighborhood_sq_norms(x))
    deg1 = graph.degrees == 1
    if deg1.any():
        first = graph.stacked_indices[graph.block_ptr[:-1]]
        norms[deg1] = np.abs(x[first[deg1]])
    return norms


def prox_graph_norm(
    x: np.ndarray,
    graph: PredictorGraph,
    weights: NodeWeights,
    t: float,
    *,
    switch_ratio: float = 0.1,
    proj_tol: float | None = None,
    proj_max_iter: int | None = None,
    warm: dict | None = None,
):
    """Proximal map of ``t * ||.||`` for the graph norm at ``x``.

    Returns ``(prox, active)`` where ``active`` lists the nodes whose block
    norm strictly exceeds ``t * tau_i``; ties sit on the boundary of the
    scaled dual ball and stay inactive.  The prox equals ``x`` minus the
    projection onto the cylinders of the active nodes only — inactive
    constraints never bind at the projection.

    When the active blocks are pairwise disjoint the projection splits per
    block and is evaluated in closed form (for an edgeless graph this *is*
    soft thresholding).  Otherwise the projected Newton route is used for
    small active sets (``|active| < switch_ratio * p``; ``switch_ratio >= 1``
    always picks Newton) and parallel Dykstra for large ones.  Passing a
    mutable ``warm`` dict lets repeated calls with a stable active set reuse
    the Newton dual multipliers.
    """
    if t < 0:
        raise ValueError("threshold t must be nonnegative")
    x = np.asarray(x, dtype=float)
    if t == 0.0:
        return x.copy(), np.array([], dtype=np.intp)
    radii = t * weights.tau
    norms = _neighborhood_norms(x, graph)
    active = np.nonzero(norms > radii)[0]
    out = np.zeros_like(x)
    if active.size == 0:
        return out, active
    _, blocks = _hard_zero_and_dedupe(
        x, CylinderSet(graph.p, [(graph.neighborhoods[i], radii[i]) for i in active])
    )
    total = sum(len(b[0]) for b in blocks)
    union = np.unique(np.concatenate([b[0] for b in blocks]))
    if total == union.size:
        # disjoint active blocks: independent per-block shrinkage, exact
        for idx, c in blocks:
            if idx.size == 1:
                i = idx[0]
                out[i] = x[i] - np.sign(x[i]) * c
            else:
                nrm = float(np.linalg.norm(x[idx]))
                out[idx] = x[idx] * (1.0 - c / nrm)
        return out, active
    if switch_ratio >= 1.0 or active.size < switch_ratio * graph.p:
        tol = 1e-10 if proj_tol is None else proj_tol
        iters = 500 if proj_max_iter is None else proj_max_iter
        mu0 = None
        key = active.tobytes()
        if warm is not None:
            mu0 = warm.get(key)
            if mu0 is not None and len(mu0) != len(blocks):
                mu0 = None
        try:
            projected, mu = _newton_multipliers(x.copy(), blocks, graph.p, tol, iters, mu0)
        except MaxIterationsExceeded:
            if mu0 is None:
                raise
            projected, mu = _newton_multipliers(x.copy(), blocks, graph.p, tol, iters)
        if warm is not None:
            warm[key] = mu
    else:
        cyl = CylinderSet(graph.p, blocks)
        kwargs = {}
        if proj_tol is not None:
            kwargs["tol"] = proj_tol
        if proj_max_iter is not None:
            kwargs["max_iter"] = proj_max_iter
        projected = project_intersection_dykstra(x, cyl, **kwargs)
    return x - projected, active


def prox_l2(r: np.ndarray, t: float) -> np.ndarray:
    """Proximal map of ``t * ||.||_2``: shrink ``r`` toward 0 by ``t``."""
    if t < 0:
        raise ValueError("threshold t must be nonnegative")
    r = np.asarray(r, dtype=float)
    norm = float(np.linalg.norm(r))
    if norm <= t:
        return np.zeros_like(r)
    if t == 0.0:
        return r.copy()
    return (1.0 - t / norm) * r


@dataclass
class Decomposition:
    """Witness decomposition ``beta = sum of parts`` for the graph norm.

    ``parts[k] = (node, values)`` holds the block attributed to ``node``,
    with ``values`` laid out over that node's closed neighborhood whose
    coordinates are recorded in ``supports[k]``.
    """

    parts: list = field(default_factory=list)
    supports: list = field(default_factory=list)

    def reconstruct(self, p: int) -> np.ndarray:
        beta = np.zeros(p)
        for (_, values), idx in zip(self.parts, self.supports):
            np.add.at(beta, idx, values)
        return beta


def graph_norm(
    beta: np.ndarray,
    graph: PredictorGraph,
    weights: NodeWeights,
    tol: float = 1e-9,
    max_iter: int = 100000,
    rho: float = 1.0,
):
    """Evaluate the graph norm and a minimizing decomposition.

    The norm is the smallest weighted sum of block l2 norms over all ways
    of writing ``beta`` as a sum of vectors supported on closed
    neighborhoods.  An exact reduction first restricts to the support of
    ``beta`` (mass outside the support only ever cancels, so optimal
    decompositions never use it) and merges blocks whose restricted index
    sets coincide, keeping the smallest weight.  The reduced problem is
    solved by consensus splitting: blockwise group shrinkage alternating
    with projection onto the sum constraint.
    """
    beta = np.asarray(beta, dtype=float)
    supp = np.nonzero(beta)[0]
    if supp.size == 0:
        return 0.0, Decomposition()
    pos = np.full(graph.p, -1, dtype=np.intp)
    pos[supp] = np.arange(supp.size)
    merged = {}
    order = []
    for i, nb in enumerate(graph.neighborhoods):
        reduced = nb[np.isin(nb, supp, assume_unique=True)]
        if reduced.size == 0:
            continue
        key = reduced.tobytes()
        if key not in merged:
            order.append(key)
            merged[key] = (i, reduced)
        elif weights.tau[i] < weights.tau[merged[key][0]]:
            merged[key] = (i, reduced)
    nodes = [merged[k][0] for k in order]
    supports = [merged[k][1] for k in order]
    taus = weights.tau[nodes]
    sizes = np.array([len(r) for r in supports])
    ptr = np.concatenate(([0], np.cumsum(sizes)))
    stacked = pos[np.concatenate(supports)]
    bid = np.repeat(np.arange(len(nodes)), sizes)
    mult = np.bincount(stacked, minlength=supp.size).astype(float)
    target = beta[supp]

    w_st = target[stacked] / mult[stacked]
    u_st = np.zeros_like(w_st)
    thresh = taus / rho
    tol_eff = tol * max(1.0, float(np.linalg.norm(target)))
    converged = False
    for _ in range(max_iter):
        b = w_st - u_st
        bn = np.sqrt(np.add.reduceat(b * b, ptr[:-1]))
        scale = np.zeros_like(bn)
        np.divide(thresh, bn, out=scale, where=bn > 0)
        v_st = b * np.maximum(1.0 - scale, 0.0)[bid]
        a = v_st + u_st
        overshoot = (np.bincount(stacked, weights=a, minlength=supp.size) - target) / mult
        w_new = a - overshoot[stacked]
        primal = float(np.linalg.norm(v_st - w_new))
        dual = rho * float(np.linalg.norm(w_new - w_st))
        u_st += v_st - w_new
        w_st = w_new
        if primal <= tol_eff and dual <= tol_eff:
            converged = True
            break
    block_norms = np.sqrt(np.add.reduceat(w_st * w_st, ptr[:-1]))
    value = float(np.dot(taus, block_norms))
    dec = Decomposition()
    for k, (node, reduced) in enumerate(zip(nodes, supports)):
        nb = graph.neighborhoods[node]
        values = np.zeros(len(nb))
        values[np.isin(nb, reduced, assume_unique=True)] = w_st[ptr[k] : ptr[k + 1]]
        dec.parts.append((node, values))
        dec.supports.append(nb)
    if not converged:
        raise MaxIterationsExceeded(
            f"graph norm evaluation did not reach tol={tol} in {max_iter} iterations",
            last_iterate=dec,
            residual=value,
        )
    return value, dec


def dual_graph_norm(u: np.ndarray, graph: PredictorGraph, weights: NodeWeights) -> float:
    """Dual norm: the largest neighborhood norm relative to its weight."""
    u = np.asarray(u, dtype=float)
    return float(np.max(_neighborhood_norms(u, graph) / weights.tau))
