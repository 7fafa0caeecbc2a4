import numpy as np
import pytest

from halluc.numkit import (
    AdamState,
    GoldenSectionSearch,
    adam_step,
    cholesky_lower,
    gmm_fit,
    golden_section,
    grad_check,
    kmeans,
    thin_svd,
)

INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0


# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------


def _lloyd_objective(pts, cent, iters=200):
    """Plain Lloyd loop used as a restart oracle (independent of the impl)."""
    cent = cent.copy()
    for _ in range(iters):
        d2 = ((pts[:, None, :] - cent[None, :, :]) ** 2).sum(-1)
        lab = d2.argmin(1)
        new = cent.copy()
        for j in range(cent.shape[0]):
            if (lab == j).any():
                new[j] = pts[lab == j].mean(0)
        if np.allclose(new, cent, atol=1e-12):
            break
        cent = new
    d2 = ((pts[:, None, :] - cent[None, :, :]) ** 2).sum(-1)
    return d2.min(1).sum()


def _multi_restart_objective(pts, k, restarts=50, seed=0):
    rng = np.random.default_rng(seed)
    best = np.inf
    for _ in range(restarts):
        init = pts[rng.choice(pts.shape[0], size=k, replace=False)]
        best = min(best, _lloyd_objective(pts, init))
    return best


class TestKmeans:
    def test_two_separated_pairs(self):
        pts = np.array([[0, 0], [0, 1], [10, 10], [10, 11]], dtype=float)
        d = kmeans(pts, 2, seed=0)
        got = sorted(map(tuple, d.centroids))
        assert got == [(0.0, 0.5), (10.0, 10.5)]

    def test_k_equals_n_identity(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(size=(5, 3))
        d, trace = kmeans(pts, 5, seed=1, return_trace=True)
        assert sorted(map(tuple, d.centroids)) == sorted(map(tuple, pts))
        assert trace[-1] == 0.0

    def test_objective_close_to_restart_oracle(self):
        rng = np.random.default_rng(7)
        centers = np.array([[0, 0], [6, 0], [0, 6]], dtype=float)
        pts = np.concatenate(
            [rng.normal(c, 0.5, size=(34, 2)) for c in centers]
        )[:100]
        _, trace = kmeans(pts, 3, seed=4, return_trace=True)
        oracle = _multi_restart_objective(pts, 3)
        assert trace[-1] <= oracle * 1.05

    def test_objective_non_increasing(self):
        rng = np.random.default_rng(11)
        pts = rng.normal(size=(80, 4))
        _, trace = kmeans(pts, 6, seed=2, return_trace=True)
        assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))

    def test_too_few_distinct_points(self):
        pts = np.array([[1.0, 2.0]] * 5 + [[3.0, 4.0]])
        with pytest.raises(ValueError, match="2 are distinct"):
            kmeans(pts, 4, seed=0)

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(40, 3))
        a = kmeans(pts, 4, seed=9).centroids
        b = kmeans(pts, 4, seed=9).centroids
        assert a.tobytes() == b.tobytes()


class TestGmmFit:
    def test_single_component_closed_form(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(loc=2.0, scale=1.5, size=(400, 2))
        m = gmm_fit(pts, 1, seed=0)
        np.testing.assert_allclose(m.means[0], pts.mean(0), atol=1e-6)
        np.testing.assert_allclose(m.stds[0], pts.std(0), atol=1e-6)
        assert m.weights[0] == pytest.approx(1.0)

    def test_two_separated_components(self):
        rng = np.random.default_rng(1)
        a = rng.normal(loc=[-4.0, 0.0], scale=0.5, size=(150, 2))
        b = rng.normal(loc=[4.0, 1.0], scale=0.5, size=(150, 2))
        m = gmm_fit(np.concatenate([a, b]), 2, seed=1)
        means = m.means[np.argsort(m.means[:, 0])]
        # oracle: per-cluster sample means of the generating clusters
        np.testing.assert_allclose(means[0], a.mean(0), atol=0.1)
        np.testing.assert_allclose(means[1], b.mean(0), atol=0.1)

    def test_model_nesting(self):
        rng = np.random.default_rng(2)
        pts = rng.normal(size=(6, 2))
        _, trace1 = gmm_fit(pts, 1, seed=0, return_trace=True)
        _, trace_n = gmm_fit(pts, 6, seed=0, return_trace=True)
        assert trace_n[-1] >= trace1[-1]

    def test_loglik_monotone(self):
        rng = np.random.default_rng(3)
        pts = np.concatenate(
            [rng.normal(-2, 1, size=(60, 3)), rng.normal(2, 1, size=(60, 3))]
        )
        _, trace = gmm_fit(pts, 3, seed=5, return_trace=True)
        assert all(b >= a - 1e-7 for a, b in zip(trace, trace[1:]))

    def test_std_floor(self):
        pts = np.array([[0.0], [0.0], [1.0], [1.0]])
        m = gmm_fit(pts, 2, seed=0)
        assert np.all(m.stds >= 1e-4)

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        pts = rng.normal(size=(50, 2))
        a = gmm_fit(pts, 3, seed=7)
        b = gmm_fit(pts, 3, seed=7)
        assert a.means.tobytes() == b.means.tobytes()
        assert a.stds.tobytes() == b.stds.tobytes()


class TestThinSvd:
    def test_identity(self):
        res = thin_svd(np.eye(3))
        np.testing.assert_allclose(res.singular_values, [1, 1, 1], atol=1e-12)

    def test_rank_one(self):
        u = np.array([2.0, 0.0, 0.0])
        v = np.array([0.0, 3.0])
        res = thin_svd(np.outer(u, v))
        np.testing.assert_allclose(res.singular_values[0], 6.0, atol=1e-10)
        np.testing.assert_allclose(res.singular_values[1:], 0.0, atol=1e-10)

    def test_matches_gram_eigenvalues(self):
        rng = np.random.default_rng(4)
        mat = rng.normal(size=(6, 4))
        res = thin_svd(mat)
        gram_eigs = np.sort(np.linalg.eigvalsh(mat.T @ mat))[::-1]
        np.testing.assert_allclose(res.singular_values**2, gram_eigs, atol=1e-8)

    @pytest.mark.parametrize("shape", [(6, 4), (4, 6), (5, 5), (8, 2)])
    def test_reconstruction_and_orthonormality(self, shape):
        rng = np.random.default_rng(sum(shape))
        mat = rng.normal(size=shape)
        res = thin_svd(mat)
        r = min(shape)
        assert res.left_vectors.shape == (shape[0], r)
        assert res.right_vectors.shape == (shape[1], r)
        np.testing.assert_allclose(
            res.left_vectors.T @ res.left_vectors, np.eye(r), atol=1e-8
        )
        np.testing.assert_allclose(
            res.right_vectors.T @ res.right_vectors, np.eye(r), atol=1e-8
        )
        assert np.all(np.diff(res.singular_values) <= 1e-12)
        assert np.all(res.singular_values >= 0)
        err = np.linalg.norm(res.reconstruct() - mat) / np.linalg.norm(mat)
        assert err <= 1e-6

    def test_rank_deficient_padding(self):
        rng = np.random.default_rng(9)
        col = rng.normal(size=(5, 1))
        mat = np.concatenate([col, col, 2 * col], axis=1)
        res = thin_svd(mat)
        assert np.sum(res.singular_values > 1e-9) == 1
        np.testing.assert_allclose(
            res.left_vectors.T @ res.left_vectors, np.eye(3), atol=1e-8
        )
        err = np.linalg.norm(res.reconstruct() - mat) / np.linalg.norm(mat)
        assert err <= 1e-6


class TestCholesky:
    def test_identity(self):
        np.testing.assert_allclose(cholesky_lower(np.eye(4)), np.eye(4))

    def test_hand_two_by_two(self):
        got = cholesky_lower(np.array([[4.0, 2.0], [2.0, 2.0]]))
        np.testing.assert_allclose(got, [[2.0, 0.0], [1.0, 1.0]], atol=1e-12)

    def test_reconstruction(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=(8, 8))
        spd = a.T @ a + np.eye(8)
        lower = cholesky_lower(spd)
        np.testing.assert_allclose(lower @ lower.T, spd, atol=1e-9)
        assert np.all(np.diag(lower) > 0)

    def test_roundtrip_from_seeded_factor(self):
        rng = np.random.default_rng(13)
        for d in (2, 5, 9):
            lower = np.tril(rng.uniform(-0.3, 0.3, size=(d, d)), k=-1)
            lower[np.diag_indices(d)] = rng.uniform(0.5, 1.5, size=d)
            got = cholesky_lower(lower @ lower.T)
            np.testing.assert_allclose(got, lower, atol=1e-9)

    def test_non_positive_pivot_named(self):
        with pytest.raises(ValueError, match="pivot 1"):
            cholesky_lower(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError, match="symmetric"):
            cholesky_lower(np.array([[1.0, 0.1], [0.0, 1.0]]))


class TestGoldenSection:
    def test_quadratic_vertex(self):
        res = golden_section(lambda b: (b - 2.0) ** 2, 0.0, 50.0, tol=1e-4)
        assert res.converged
        assert abs(res.argmin - 2.0) <= 1e-4

    def test_constant_function(self):
        res = golden_section(lambda b: 7.5, 0.0, 10.0, tol=1e-3)
        assert res.value == 7.5
        assert 0.0 <= res.argmin <= 10.0

    def test_grid_oracle(self):
        # tabulated unimodal accuracy curve; exhaustive grid argmin is the oracle
        grid = np.linspace(0.0, 50.0, 501)
        for peak in (3.7, 12.0, 31.4, 49.0):
            acc = np.exp(-((grid - peak) ** 2) / 40.0)
            f = lambda b: -acc[int(round(b / 0.1))]
            res = golden_section(f, 0.0, 50.0, tol=1e-3)
            oracle = grid[np.argmax(acc)]
            assert abs(res.argmin - oracle) <= 0.1

    def test_unconverged_flagged(self):
        res = golden_section(lambda b: (b - 1.0) ** 2, 0.0, 10.0, tol=0.0, max_iters=3)
        assert not res.converged
        assert res.iterations == 3
        assert 0.0 <= res.argmin <= 10.0

    def test_bracket_shrinks_at_golden_rate(self):
        search = GoldenSectionSearch(0.0, 50.0)
        f = lambda b: (b - 21.3) ** 2
        for n in range(1, 30):
            search.feed(f(search.next_point()))
            if search.iterations != n - 1:  # startup feed does not shrink
                assert search.pending_resolution <= 50.0 * INV_PHI ** (search.iterations + 1) * 1.01

    def test_stateful_single_eval_per_step(self):
        search = GoldenSectionSearch(0.0, 50.0)
        f = lambda b: abs(b - 8.0)
        evals = 0
        while search.pending_resolution > 1e-3:
            search.feed(f(search.next_point()))
            evals += 1
        assert abs(search.best_point() - 8.0) <= 1e-2
        assert evals == search.iterations + 1  # one eval per shrink after startup


class TestAdam:
    def test_zero_gradient_no_move(self):
        params = {"w": np.array([1.0, 2.0])}
        state = AdamState(lr=0.1)
        adam_step(params, {"w": np.zeros(2)}, state)
        np.testing.assert_allclose(params["w"], [1.0, 2.0])

    def test_first_step_displacement_is_lr(self):
        params = {"x": np.array([0.0])}
        state = AdamState(lr=0.05)
        adam_step(params, {"x": np.array([3.0])}, state)
        assert abs(abs(params["x"][0]) - 0.05) < 1e-7

    def test_converges_on_quadratic(self):
        params = {"x": np.array([0.0])}
        state = AdamState(lr=0.01, halving_period=10**9)
        for _ in range(2000):
            g = 2.0 * (params["x"] - 3.0)
            adam_step(params, {"x": g}, state)
        assert abs(params["x"][0] - 3.0) < 1e-2

    def test_nonfinite_gradient_named(self):
        params = {"bad_block": np.array([1.0])}
        state = AdamState()
        with pytest.raises(ValueError, match="bad_block"):
            adam_step(params, {"bad_block": np.array([np.nan])}, state)

    def test_rate_halving_schedule(self):
        state = AdamState(lr=1e-4, halving_period=10)
        assert state.current_lr() == 1e-4
        for _ in range(10):
            state.advance_epoch()
        assert state.current_lr() == 0.5e-4
        for _ in range(10):
            state.advance_epoch()
        assert state.current_lr() == 0.25e-4


class TestGradCheck:
    def test_quadratic_exact(self):
        x = np.array([0.3, -1.2, 2.0])
        err = grad_check(lambda p: float(p @ p), 2.0 * x, x, step=1e-5)
        assert err < 1e-8

    def test_wrong_gradient_ratio(self):
        # analytic 3x vs true 2x: |3x-2x| / max(3|x|, 2|x|) = 1/3
        x = np.array([0.7, -0.4])
        err = grad_check(lambda p: float(p @ p), 3.0 * x, x, step=1e-5)
        assert abs(err - 1.0 / 3.0) < 1e-6
