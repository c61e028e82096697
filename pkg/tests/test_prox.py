import numpy as np
import pytest

import cvxpy as cp

from gsre import graph as gr
from gsre import prox
from gsre.errors import MaxIterationsExceeded


# ---------------------------------------------------------------------------
# independent reference solutions
# ---------------------------------------------------------------------------


TIGHT = {"tol_gap_abs": 1e-11, "tol_gap_rel": 1e-11, "tol_feas": 1e-11}


def project_oracle(x, blocks):
    """Projection onto an intersection of l2 cylinders via conic programming."""
    z = cp.Variable(len(x))
    cons = [cp.norm(z[list(map(int, idx))], 2) <= c for idx, c in blocks]
    problem = cp.Problem(cp.Minimize(cp.sum_squares(z - x)), cons)
    problem.solve(solver=cp.CLARABEL, **TIGHT)
    assert problem.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE)
    return np.asarray(z.value)


def graph_norm_oracle(beta, g, w):
    """Latent-group-norm value by direct conic minimization over all parts."""
    p = g.p
    parts = [cp.Variable(len(nb)) for nb in g.neighborhoods]
    total = 0
    for nb, v in zip(g.neighborhoods, parts):
        scatter = np.zeros((p, len(nb)))
        scatter[np.asarray(nb), np.arange(len(nb))] = 1.0
        total = total + scatter @ v
    objective = cp.sum([w.tau[i] * cp.norm(v, 2) for i, v in enumerate(parts)])
    problem = cp.Problem(cp.Minimize(objective), [total == beta])
    problem.solve(solver=cp.CLARABEL, **TIGHT)
    assert problem.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE)
    return problem.value


def single_block_projection_by_bisection(x, idx, c):
    """Solve the one-cylinder KKT system for its multiplier by bisection."""
    norm = np.linalg.norm(x[idx])
    if norm <= c:
        return x.copy()
    lo, hi = 0.0, norm / c  # f(hi) = c*(1 - hi/(1+hi)) - ... < 0 once hi > norm/c - 1
    f = lambda mu: norm / (1.0 + mu) - c
    assert f(lo) > 0 > f(hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    z = x.copy()
    z[idx] = x[idx] / (1.0 + 0.5 * (lo + hi))
    return z


def random_cylinders(rng, p_max=30, m_max=10):
    p = int(rng.integers(2, p_max + 1))
    m = int(rng.integers(1, m_max + 1))
    blocks = []
    for _ in range(m):
        d = int(rng.integers(1, min(5, p) + 1))
        idx = np.sort(rng.choice(p, size=d, replace=False))
        blocks.append((idx, float(rng.uniform(0.1, 1.5))))
    x = rng.normal(0.0, 2.0, size=p)
    return x, prox.CylinderSet(p, blocks)


# ---------------------------------------------------------------------------
# project_cylinder
# ---------------------------------------------------------------------------


def test_project_cylinder_overshooting_block_is_rescaled():
    x = np.array([3.0, 4.0, 7.0])
    got = prox.project_cylinder(x, np.array([0, 1]), 2.5)
    assert np.allclose(got, [1.5, 2.0, 7.0], atol=1e-12)
    # input untouched
    assert np.allclose(x, [3.0, 4.0, 7.0])


def test_project_cylinder_feasible_point_unchanged():
    x = np.array([0.3, -0.4, 9.0])
    got = prox.project_cylinder(x, np.array([0, 1]), 0.5)
    assert np.array_equal(got, x)


def test_project_cylinder_zero_radius_zeroes_block():
    x = np.array([1.0, -2.0, 3.0])
    got = prox.project_cylinder(x, np.array([1, 2]), 0.0)
    assert np.array_equal(got, [1.0, 0.0, 0.0])


def test_project_cylinder_matches_conic_oracle():
    rng = np.random.default_rng(3)
    for _ in range(8):
        p = int(rng.integers(2, 12))
        d = int(rng.integers(1, p + 1))
        idx = np.sort(rng.choice(p, size=d, replace=False))
        c = float(rng.uniform(0.2, 2.0))
        x = rng.normal(0.0, 2.0, size=p)
        got = prox.project_cylinder(x, idx, c)
        want = project_oracle(x, [(idx, c)])
        assert np.allclose(got, want, atol=1e-6)


def test_project_cylinder_is_nonexpansive():
    rng = np.random.default_rng(4)
    idx = np.array([0, 2, 3])
    for _ in range(20):
        x, y = rng.normal(size=5), rng.normal(size=5)
        px = prox.project_cylinder(x, idx, 0.7)
        py = prox.project_cylinder(y, idx, 0.7)
        assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-12


# ---------------------------------------------------------------------------
# intersections: parallel Dykstra and dual projected Newton
# ---------------------------------------------------------------------------


def test_dykstra_single_block_equals_cylinder_projection():
    x = np.array([3.0, 4.0, 7.0])
    s = prox.CylinderSet(3, [(np.array([0, 1]), 2.5)])
    got = prox.project_intersection_dykstra(x, s)
    assert np.allclose(got, prox.project_cylinder(x, np.array([0, 1]), 2.5), atol=1e-10)


def test_newton_single_block_matches_bisection_oracle():
    rng = np.random.default_rng(5)
    for _ in range(10):
        p = int(rng.integers(2, 10))
        d = int(rng.integers(1, p + 1))
        idx = np.sort(rng.choice(p, size=d, replace=False))
        c = float(rng.uniform(0.1, 1.0))
        x = rng.normal(0.0, 3.0, size=p)
        s = prox.CylinderSet(p, [(idx, c)])
        got = prox.project_intersection_newton(x, s)
        want = single_block_projection_by_bisection(x, idx, c)
        assert np.allclose(got, want, atol=1e-8)


def test_feasible_input_is_fixed_point_of_both_projectors():
    x = np.array([0.1, -0.2, 0.05, 0.0])
    s = prox.CylinderSet(4, [(np.array([0, 1]), 1.0), (np.array([1, 2, 3]), 0.5)])
    assert np.array_equal(prox.project_intersection_dykstra(x, s), x)
    assert np.array_equal(prox.project_intersection_newton(x, s), x)


def test_two_overlapping_blocks_match_conic_oracle():
    x = np.array([2.0, -3.0, 1.5])
    blocks = [(np.array([0, 1]), 1.0), (np.array([1, 2]), 0.8)]
    s = prox.CylinderSet(3, blocks)
    want = project_oracle(x, blocks)
    assert np.allclose(prox.project_intersection_dykstra(x, s), want, atol=1e-6)
    assert np.allclose(prox.project_intersection_newton(x, s), want, atol=1e-6)


def test_projector_cross_agreement_on_random_instances():
    rng = np.random.default_rng(6)
    for _ in range(50):
        x, s = random_cylinders(rng)
        a = prox.project_intersection_dykstra(x, s)
        b = prox.project_intersection_newton(x, s)
        assert np.allclose(a, b, atol=1e-6)
        # both outputs are feasible up to the advertised tolerances
        for idx, c in s.blocks:
            assert np.linalg.norm(a[idx]) <= c + 1e-6
            assert np.linalg.norm(b[idx]) <= c + 1e-6


def test_projectors_against_conic_oracle_small():
    rng = np.random.default_rng(7)
    for _ in range(6):
        x, s = random_cylinders(rng, p_max=8, m_max=4)
        want = project_oracle(x, s.blocks)
        assert np.allclose(prox.project_intersection_newton(x, s), want, atol=1e-5)


def test_duplicate_blocks_do_not_break_newton():
    # identical neighborhoods produce a singular dual Hessian unless handled
    x = np.array([3.0, 4.0])
    idx = np.array([0, 1])
    s = prox.CylinderSet(2, [(idx, 2.0), (idx, 2.0), (idx, 3.0)])
    got = prox.project_intersection_newton(x, s)
    assert np.allclose(got, prox.project_cylinder(x, idx, 2.0), atol=1e-8)


def test_zero_radius_blocks_are_hard_zeroed_first():
    x = np.array([1.0, 2.0, -3.0, 4.0])
    s = prox.CylinderSet(4, [(np.array([1]), 0.0), (np.array([2, 3]), 1.0)])
    for fn in (prox.project_intersection_dykstra, prox.project_intersection_newton):
        got = fn(x, s)
        assert got[1] == 0.0
        assert got[0] == 1.0
        assert np.linalg.norm(got[2:]) <= 1.0 + 1e-8


def test_dykstra_budget_exhaustion_raises_with_iterate():
    rng = np.random.default_rng(8)
    x, s = random_cylinders(rng)
    with pytest.raises(MaxIterationsExceeded) as ei:
        prox.project_intersection_dykstra(x, s, tol=1e-14, max_iter=2)
    assert ei.value.last_iterate is not None
    assert ei.value.residual is not None


# ---------------------------------------------------------------------------
# prox of the graph norm
# ---------------------------------------------------------------------------


def soft_threshold(x, c):
    return np.sign(x) * np.maximum(np.abs(x) - c, 0.0)


def test_prox_small_input_maps_to_zero():
    g = gr.banded(5, 1)
    w = gr.default_weights(g)
    x = 1e-3 * np.ones(5)
    out, active = prox.prox_graph_norm(x, g, w, t=1.0)
    assert np.array_equal(out, np.zeros(5))
    assert active.size == 0


def test_prox_edgeless_equals_soft_threshold_exactly():
    g = gr.edgeless(7)
    w = gr.NodeWeights(np.ones(7))
    rng = np.random.default_rng(9)
    for _ in range(25):
        x = rng.normal(0.0, 2.0, size=7)
        t = float(rng.uniform(0.05, 1.5))
        out, _ = prox.prox_graph_norm(x, g, w, t)
        want = soft_threshold(x, t)
        assert np.array_equal(out, want)


def test_prox_edgeless_respects_weights():
    g = gr.edgeless(3)
    w = gr.NodeWeights(np.array([1.0, 2.0, 4.0]))
    x = np.array([3.0, 3.0, 3.0])
    out, active = prox.prox_graph_norm(x, g, w, t=1.0)
    assert np.array_equal(out, [2.0, 1.0, 0.0])
    assert list(active) == [0, 1]


def test_prox_complete_graph_is_group_shrinkage():
    g = gr.complete(2)
    w = gr.NodeWeights(np.ones(2))
    out, active = prox.prox_graph_norm(np.array([3.0, 4.0]), g, w, t=1.0)
    assert np.allclose(out, [2.4, 3.2], atol=1e-8)
    assert set(active.tolist()) == {0, 1}


def test_prox_moreau_identity_against_full_projection():
    # prox(x) + projection onto *all* p cylinders == x: constraints inactive
    # at x never bind, so projecting onto the active subset is enough.
    rng = np.random.default_rng(10)
    for _ in range(20):
        p = int(rng.integers(2, 21))
        m = int(rng.integers(0, 2 * p))
        edges = [(int(a), int(b)) for a, b in rng.integers(0, p, size=(m, 2)) if a != b]
        g = gr.from_edge_list(p, edges)
        w = gr.default_weights(g)
        x = rng.normal(0.0, 2.0, size=p)
        t = float(rng.uniform(0.1, 1.0))
        out, _ = prox.prox_graph_norm(x, g, w, t, switch_ratio=2.0)
        full = prox.CylinderSet(p, [(nb, t * w.tau[i]) for i, nb in enumerate(g.neighborhoods)])
        pi_full = prox.project_intersection_newton(x, full, tol=1e-12)
        assert np.allclose(out + pi_full, x, atol=1e-6)


def test_prox_is_firmly_nonexpansive():
    rng = np.random.default_rng(11)
    g = gr.banded(8, 2)
    w = gr.default_weights(g)
    for _ in range(20):
        x = rng.normal(0.0, 2.0, size=8)
        y = rng.normal(0.0, 2.0, size=8)
        px, _ = prox.prox_graph_norm(x, g, w, t=0.5, switch_ratio=2.0)
        py, _ = prox.prox_graph_norm(y, g, w, t=0.5, switch_ratio=2.0)
        lhs = np.dot(px - py, px - py)
        rhs = np.dot(px - py, x - y)
        assert lhs <= rhs + 1e-8


def test_prox_switch_paths_agree():
    # same input through the Newton route and the Dykstra route
    rng = np.random.default_rng(12)
    g = gr.banded(12, 1)
    w = gr.default_weights(g)
    for _ in range(10):
        x = rng.normal(0.0, 3.0, size=12)
        newton_out, _ = prox.prox_graph_norm(x, g, w, t=0.3, switch_ratio=2.0)
        dykstra_out, _ = prox.prox_graph_norm(
            x, g, w, t=0.3, switch_ratio=1e-9, proj_max_iter=500_000
        )
        assert np.allclose(newton_out, dykstra_out, atol=1e-6)


def test_prox_active_set_uses_strict_inequality():
    # block norm exactly at the threshold stays inactive
    g = gr.edgeless(2)
    w = gr.NodeWeights(np.ones(2))
    out, active = prox.prox_graph_norm(np.array([0.5, 2.0]), g, w, t=0.5)
    assert list(active) == [1]
    assert out[0] == 0.0


# ---------------------------------------------------------------------------
# prox of the scaled l2 norm
# ---------------------------------------------------------------------------


def test_prox_l2_shrinks_toward_origin():
    got = prox.prox_l2(np.array([3.0, 4.0]), 1.0)
    assert np.allclose(got, [2.4, 3.2], atol=1e-12)


def test_prox_l2_collapses_short_vectors():
    assert np.array_equal(prox.prox_l2(np.array([0.3, 0.4]), 1.0), [0.0, 0.0])
    assert np.array_equal(prox.prox_l2(np.zeros(3), 0.5), np.zeros(3))


def test_prox_l2_zero_threshold_is_identity():
    r = np.array([1.0, -2.0])
    assert np.array_equal(prox.prox_l2(r, 0.0), r)


def test_prox_l2_moreau_identity():
    rng = np.random.default_rng(13)
    for _ in range(10):
        r = rng.normal(size=6)
        t = float(rng.uniform(0.1, 3.0))
        ball = r - prox.prox_l2(r, t)  # residual lands inside the t-ball
        assert np.linalg.norm(ball) <= t + 1e-12
        assert np.allclose(prox.prox_l2(r, t) + ball, r)


# ---------------------------------------------------------------------------
# graph norm value and decomposition
# ---------------------------------------------------------------------------


def test_graph_norm_edgeless_is_weighted_l1():
    g = gr.edgeless(3)
    w = gr.NodeWeights(np.ones(3))
    val, dec = prox.graph_norm(np.array([1.0, -2.0, 3.0]), g, w)
    assert val == pytest.approx(6.0, abs=1e-7)
    assert np.allclose(dec.reconstruct(3), [1.0, -2.0, 3.0], atol=1e-7)


def test_graph_norm_complete_is_scaled_l2():
    g = gr.complete(2)
    beta = np.array([3.0, 4.0])
    val, _ = prox.graph_norm(beta, g, gr.NodeWeights(np.ones(2)))
    assert val == pytest.approx(5.0, abs=1e-7)
    val2, _ = prox.graph_norm(beta, g, gr.NodeWeights(np.array([2.0, 0.5])))
    assert val2 == pytest.approx(2.5, abs=1e-7)


def test_graph_norm_zero_vector():
    g = gr.banded(4, 1)
    val, dec = prox.graph_norm(np.zeros(4), g, gr.default_weights(g))
    assert val == 0.0
    assert np.array_equal(dec.reconstruct(4), np.zeros(4))


def test_graph_norm_absolute_homogeneity():
    rng = np.random.default_rng(14)
    g = gr.banded(6, 1)
    w = gr.default_weights(g)
    for _ in range(5):
        beta = rng.normal(size=6)
        c = float(rng.uniform(-3.0, 3.0))
        v1, _ = prox.graph_norm(c * beta, g, w)
        v0, _ = prox.graph_norm(beta, g, w)
        assert v1 == pytest.approx(abs(c) * v0, abs=1e-6)


def test_graph_norm_triangle_inequality():
    rng = np.random.default_rng(15)
    g = gr.from_edge_list(5, [(0, 1), (1, 2), (3, 4)])
    w = gr.default_weights(g)
    for _ in range(5):
        a, b = rng.normal(size=5), rng.normal(size=5)
        va, _ = prox.graph_norm(a, g, w)
        vb, _ = prox.graph_norm(b, g, w)
        vab, _ = prox.graph_norm(a + b, g, w)
        assert vab <= va + vb + 1e-6


def test_graph_norm_matches_conic_oracle():
    rng = np.random.default_rng(16)
    for _ in range(10):
        p = int(rng.integers(2, 7))
        m = int(rng.integers(0, p + 2))
        edges = [(int(a), int(b)) for a, b in rng.integers(0, p, size=(m, 2)) if a != b]
        g = gr.from_edge_list(p, edges)
        w = gr.NodeWeights(rng.uniform(0.5, 2.0, size=p))
        beta = rng.normal(size=p)
        got, dec = prox.graph_norm(beta, g, w)
        want = graph_norm_oracle(beta, g, w)
        assert got == pytest.approx(want, abs=1e-6)
        assert np.allclose(dec.reconstruct(p), beta, atol=1e-6)


def test_graph_norm_decomposition_respects_supports():
    g = gr.from_edge_list(4, [(0, 1), (2, 3)])
    w = gr.default_weights(g)
    beta = np.array([1.0, 2.0, -1.0, 0.5])
    val, dec = prox.graph_norm(beta, g, w)
    for node, values in dec.parts:
        nb = g.neighborhoods[node]
        assert values.shape == nb.shape
    total = sum(w.tau[node] * np.linalg.norm(values) for node, values in dec.parts)
    assert total == pytest.approx(val, abs=1e-8)


def test_graph_norm_upper_bounded_by_weighted_l1_of_self_blocks():
    # placing every coordinate in its own block is always feasible
    rng = np.random.default_rng(17)
    g = gr.banded(7, 2)
    w = gr.default_weights(g)
    beta = rng.normal(size=7)
    val, _ = prox.graph_norm(beta, g, w)
    assert val <= float(np.sum(w.tau * np.abs(beta))) + 1e-6


# ---------------------------------------------------------------------------
# dual norm
# ---------------------------------------------------------------------------


def test_dual_graph_norm_edgeless_is_weighted_linf():
    g = gr.edgeless(3)
    w = gr.NodeWeights(np.array([1.0, 2.0, 1.0]))
    u = np.array([1.0, -3.0, 2.0])
    assert prox.dual_graph_norm(u, g, w) == pytest.approx(2.0)


def test_dual_graph_norm_complete_is_scaled_l2():
    g = gr.complete(2)
    w = gr.NodeWeights(np.array([2.0, 0.5]))
    assert prox.dual_graph_norm(np.array([3.0, 4.0]), g, w) == pytest.approx(10.0)


def test_dual_norm_certifies_primal_norm():
    # <u, beta> <= dual(u) * norm(beta)
    rng = np.random.default_rng(18)
    g = gr.banded(6, 1)
    w = gr.default_weights(g)
    for _ in range(10):
        beta, u = rng.normal(size=6), rng.normal(size=6)
        nval, _ = prox.graph_norm(beta, g, w)
        dval = prox.dual_graph_norm(u, g, w)
        assert np.dot(u, beta) <= dval * nval + 1e-6
