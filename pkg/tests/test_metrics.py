import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alws import kernels, metrics, models, oracles
from alws.models import Trajectory

GAUSS1 = kernels.KernelParams.with_bandwidth(1.0)


def brute_mmd2(X, Y, k):
    n, m = len(X), len(Y)
    xx = sum(k(X[i], X[j]) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    yy = sum(k(Y[i], Y[j]) for i in range(m) for j in range(m) if i != j) / (m * (m - 1))
    if n == m:
        xy = sum(k(X[i], Y[j]) + k(X[j], Y[i]) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    else:
        xy = 2 * sum(k(x, y) for x in X for y in Y) / (n * m)
    return xx + yy - xy


class TestMMD:
    def test_linear_kernel_identical_pair(self):
        X = np.array([[1.5, -0.2], [0.3, 2.0]])
        assert metrics.mmd2_unbiased(X, X.copy(), kernel="linear").mmd2 == 0.0

    def test_separated_gaussians(self):
        rng = np.random.default_rng(0)
        X, Y = rng.normal(size=(200, 1)), rng.normal(10.0, 1.0, size=(200, 1))
        assert metrics.mmd2_unbiased(X, Y, GAUSS1).mmd2 > 0.5

    def test_kernel_scaling(self):
        rng = np.random.default_rng(1)
        X, Y = rng.normal(size=(30, 2)), rng.normal(0.5, 1.0, size=(25, 2))
        k = lambda A, B: kernels.cross_matrix(GAUSS1, A, B)  # noqa: E731
        a = metrics.mmd2_unbiased(X, Y, k).mmd2
        b = metrics.mmd2_unbiased(X, Y, lambda A, B: 2 * k(A, B)).mmd2
        assert b == pytest.approx(2 * a, rel=1e-13)

    @pytest.mark.parametrize("n,m", [(2, 2), (5, 5), (10, 10), (4, 7)])
    def test_brute_force(self, n, m):
        rng = np.random.default_rng(n * 10 + m)
        X, Y = rng.normal(size=(n, 3)), rng.normal(size=(m, 3))
        got = metrics.mmd2_unbiased(X, Y, GAUSS1).mmd2
        want = brute_mmd2(X, Y, lambda a, b: kernels.eval(GAUSS1, a, b))
        assert got == pytest.approx(want, rel=1e-12, abs=1e-14)

    def test_same_sample_is_zero(self):
        X = np.random.default_rng(2).normal(size=(10, 2))
        assert metrics.mmd2_unbiased(X, X).mmd2 == pytest.approx(0.0, abs=1e-15)

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            metrics.mmd2_unbiased(np.zeros((1, 2)), np.zeros((5, 2)))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            metrics.mmd2_unbiased(np.zeros((3, 2)), np.zeros((3, 1)))

    def test_default_kernel_is_pooled_median(self):
        rng = np.random.default_rng(3)
        X, Y = rng.normal(size=(40, 2)), rng.normal(1.0, 1.0, size=(30, 2))
        res = metrics.mmd2_unbiased(X, Y)
        assert res.kernel.bandwidth == pytest.approx(metrics.pooled_median_kernel(X, Y).bandwidth)
        assert (res.n_x, res.n_y) == (40, 30)

    def test_bootstrap_compare(self):
        rng = np.random.default_rng(4)
        data = rng.normal(size=(150, 2))
        close, far = rng.normal(size=(150, 2)), rng.normal(1.5, 1.0, size=(150, 2))
        a, b = metrics.mmd_compare(data, close, far, n_boot=200, rng=5)
        assert a.mmd2 < b.mmd2 and a.bootstrap_p < 0.05
        assert a.bootstrap_p == b.bootstrap_p
        _, b2 = metrics.mmd_compare(data, far, close, n_boot=200, rng=5)
        assert b2.bootstrap_p > 0.95

    def test_bootstrap_reproducible(self):
        rng = np.random.default_rng(6)
        data, A, B = rng.normal(size=(3, 40, 2))
        assert metrics.mmd_compare(data, A, B, rng=1)[0] == metrics.mmd_compare(data, A, B, rng=1)[0]


class TestCosine:
    def test_examples(self):
        a = np.array([0.3, -1.2, 2.0])
        assert metrics.cosine(a, a) == pytest.approx(1.0)
        assert metrics.cosine(a, -a) == pytest.approx(-1.0)
        assert metrics.cosine([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_zero_vector(self):
        with pytest.raises(ValueError, match="zero"):
            metrics.cosine([0.0, 0.0], [1.0, 0.0])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=3, max_size=3),
           st.lists(st.floats(-100, 100), min_size=3, max_size=3), st.floats(1e-3, 1e3))
    def test_scale_invariant(self, a, b, c):
        a, b = np.array(a), np.array(b)
        if np.linalg.norm(a) < 1e-6 or np.linalg.norm(b) < 1e-6:
            return
        assert metrics.cosine(a, c * b) == pytest.approx(metrics.cosine(a, b), abs=1e-12)


class TestBasisMatch:
    def W(self, d=16, k=4, seed=0):
        return np.random.default_rng(seed).normal(size=(d, k))

    def test_identity(self):
        W = self.W()
        score, perm, signs = metrics.basis_match(W, W)
        assert score == pytest.approx(1.0)
        np.testing.assert_array_equal(perm, np.arange(4))
        np.testing.assert_array_equal(signs, 1.0)

    def test_reversed_and_negated(self):
        W = self.W()
        score, perm, signs = metrics.basis_match(W, -W[:, ::-1])
        assert score == pytest.approx(1.0)
        np.testing.assert_array_equal(perm, [3, 2, 1, 0])
        np.testing.assert_array_equal(signs, -1.0)

    def test_permutation_and_sign_invariance(self):
        rng = np.random.default_rng(1)
        W, V = self.W(seed=2), self.W(seed=3)
        base = metrics.basis_match(W, V)[0]
        for _ in range(10):
            V2 = V[:, rng.permutation(4)] * rng.choice([-1.0, 1.0], size=4)
            assert metrics.basis_match(W, V2)[0] == pytest.approx(base, rel=1e-12)

    def test_random_null_high_dimension(self):
        scores = [metrics.basis_match(self.W(256, 8, s), self.W(256, 8, 1000 + s))[0] for s in range(100)]
        assert max(scores) < 0.3

    def test_k_mismatch(self):
        with pytest.raises(ValueError, match="shapes"):
            metrics.basis_match(self.W(k=4), self.W(k=3))

    def test_constant_column(self):
        W = self.W()
        V = W.copy()
        V[:, 1] = 2.0
        with pytest.raises(ValueError, match="constant"):
            metrics.basis_match(W, V)


class TestTrajMSE:
    def traj(self, seed=0, T=12, d=3):
        rng = np.random.default_rng(seed)
        return Trajectory(rng.normal(size=(T, 2)), rng.normal(size=(T, d)))

    def test_identical(self):
        t = self.traj()
        assert metrics.traj_mse(t, t) == 0.0

    def test_constant_offset(self):
        t = self.traj()
        shifted = Trajectory(t.latents, t.observations + 0.7)
        assert metrics.traj_mse(shifted, t) == pytest.approx(0.49, rel=1e-12)

    def test_brute_force(self):
        a, b = self.traj(1), self.traj(2)
        T, d = a.observations.shape
        loop = sum((a.observations[t, j] - b.observations[t, j]) ** 2 for t in range(T) for j in range(d)) / (T * d)
        assert metrics.traj_mse(a, b) == pytest.approx(loop, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shapes"):
            metrics.traj_mse(self.traj(T=12), self.traj(T=11))


def test_one_step_ahead_mse_matches_manual():
    m = models.make_model("oscillator", T=6, d_obs=4, hidden=5)
    theta = m.init_params(np.random.default_rng(0))
    traj = m.simulate(theta, np.random.default_rng(1))
    got = metrics.one_step_ahead_mse(m, theta, traj.observations, steps=50)
    res = oracles.map_latent(m, theta, traj.observations.ravel(), np.zeros(m.dim_z), steps=50)
    pred = m.one_step_predictions(theta.unpack(), res.z)
    assert got == pytest.approx(np.mean((pred - traj.observations[1:]) ** 2), rel=1e-12)
    assert got >= 0
