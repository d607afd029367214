import numpy as np
import pytest

from alws import autodiff as ad
from alws import kernels, krr, models, oracles
from conftest import fd_grad, small_model


def lg(dim_z=2, dim_x=5, seed=0):
    m = models.make_model("linear_gaussian", dim_z=dim_z, dim_x=dim_x)
    return m, m.init_params(np.random.default_rng(seed))


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


class TestImportanceSampling:
    def test_uniform_weights_without_z_dependence(self):
        m, theta = lg()
        theta = theta.replace(W=0.0)
        x = np.random.default_rng(1).normal(size=5)
        Z = m.sample(theta, np.random.default_rng(2), 50)[0]
        est = oracles.is_gradient(m, theta, x, proposals=Z)
        np.testing.assert_allclose(est.weights, 1 / 50, rtol=1e-12)
        X = np.tile(x, (50, 1))
        plain = np.mean([ad.backward(ad.forward(lambda p, i=i: ad.sum(m.log_joint(p, Z[i:i + 1], X[i:i + 1])),
                                                theta)).data for i in range(50)], axis=0)
        np.testing.assert_allclose(est.gradient.data, plain, rtol=1e-10, atol=1e-12)
        assert est.effective_sample_size == pytest.approx(50)

    def test_linear_gaussian_against_exact(self):
        m, theta = lg()
        x = m.sample(theta, np.random.default_rng(3), 1)[1][0]
        est = oracles.is_gradient(m, theta, x, n_proposals=100_000, rng=4)
        _, exact = oracles.lin_gauss_exact(m, theta, x)
        assert rel(est.gradient.data, exact.data) < 0.02

    def test_single_proposal(self):
        m, theta = lg()
        x = np.zeros(5)
        z = np.array([[0.4, -0.3]])
        est = oracles.is_gradient(m, theta, x, proposals=z)
        direct = ad.backward(ad.forward(lambda p: ad.sum(m.log_joint(p, z, x[None, :])), theta))
        np.testing.assert_array_equal(est.gradient.data, direct.data)
        assert est.effective_sample_size == 1.0

    def test_weights_normalised_and_ess_bounds(self):
        m, theta = lg()
        x = m.sample(theta, np.random.default_rng(5), 1)[1][0]
        est = oracles.is_gradient(m, theta, x, n_proposals=2000, rng=6)
        assert abs(est.weights.sum() - 1) < 1e-12
        assert 1 <= est.effective_sample_size <= est.n_proposals

    def test_underflow_reports_max_log_weight(self):
        m, theta = lg()
        with pytest.raises(oracles.OracleError, match="max log-weight"):
            oracles.is_gradient(m, theta, np.full(5, 1e200), n_proposals=10, rng=0)

    def test_consistency_in_proposal_count(self):
        m, theta = lg()
        x = m.sample(theta, np.random.default_rng(7), 1)[1][0]
        _, exact = oracles.lin_gauss_exact(m, theta, x)
        medians = []
        for n in (100, 1000, 10_000):
            errs = [rel(oracles.is_gradient(m, theta, x, n, rng=s).gradient.data, exact.data) for s in range(20)]
            medians.append(np.median(errs))
        assert medians[0] > medians[1] > medians[2]

    @pytest.mark.parametrize("name", ["linear_gaussian", "blowfly"])
    def test_mean_matches_per_row_loop(self, name):
        m = small_model(name)
        theta = m.init_params(np.random.default_rng(0))
        X = m.sample(theta, np.random.default_rng(1), 3)[1]
        mean, ess = oracles.is_gradient_mean(m, theta, X, n_proposals=500, rng=2)
        Z = m.sample(theta, np.random.default_rng(2), 500)[0]
        loop = [oracles.is_gradient(m, theta, x, proposals=Z) for x in X]
        np.testing.assert_allclose(mean.data, np.mean([e.gradient.data for e in loop], axis=0),
                                   rtol=1e-9, atol=1e-10)
        np.testing.assert_allclose(ess, [e.effective_sample_size for e in loop], rtol=1e-12)


class TestLinGaussExact:
    def test_zero_weights_mode(self):
        m, theta = lg()
        theta = theta.replace(W=0.0)
        ll, g = oracles.lin_gauss_exact(m, theta, theta["c"])
        np.testing.assert_allclose(g["W"], 0.0, atol=1e-15)
        sx = np.exp(theta["log_sx"])
        assert ll == pytest.approx(np.sum(-0.5 * np.log(2 * np.pi * sx ** 2)), rel=1e-13)

    def test_one_dimensional_by_hand(self):
        m = models.make_model("linear_gaussian", dim_z=1, dim_x=1)
        theta = m.init_params().replace(W=1.0, c=0.0, log_sx=0.0)
        ll, _ = oracles.lin_gauss_exact(m, theta, [0.0])
        assert ll == pytest.approx(-0.5 * np.log(4 * np.pi), rel=1e-14)

    def test_gradient_vs_finite_differences(self):
        m, theta = lg()
        X = m.sample(theta, np.random.default_rng(8), 4)[1]
        _, g = oracles.lin_gauss_exact(m, theta, X)
        g_fd = fd_grad(lambda d: oracles.lin_gauss_exact(m, theta.with_data(d), X)[0], theta.data)
        np.testing.assert_allclose(g.data, g_fd, rtol=1e-6, atol=1e-6)

    def test_singular_covariance(self):
        m, theta = lg()
        theta = theta.replace(W=0.0, log_sx=-400.0)
        with pytest.raises(np.linalg.LinAlgError, match="singular"):
            oracles.lin_gauss_exact(m, theta, np.zeros(5))

    def test_wrong_model(self):
        m = small_model("toy_softplus")
        with pytest.raises(TypeError):
            oracles.lin_gauss_exact(m, m.init_params(), [0.0])


class TestMapLatent:
    def test_linear_gaussian_posterior_mean(self):
        m, theta = lg()
        x = m.sample(theta, np.random.default_rng(9), 1)[1][0]
        res = oracles.map_latent(m, theta, x, np.zeros(2), steps=2000, lr=0.1)
        mean, _ = oracles.lin_gauss_posterior(m, theta, x)
        np.testing.assert_allclose(res.z, mean, atol=1e-4)

    def test_mat_fact_reconstruction(self):
        m = models.make_model("mat_fact", dim_x=16, dim_z=4)
        theta = m.init_params(np.random.default_rng(10))
        z0 = np.array([[0.2, 0.7, 0.4, 0.9]])
        xbar = np.asarray(m.obs_mean(theta.unpack(), z0))[0]
        res = oracles.map_latent(m, theta, xbar, np.full(4, 0.5), steps=3000, lr=0.1)
        recon = np.asarray(m.obs_mean(theta.unpack(), res.z[None, :]))[0]
        assert np.max(np.abs(recon - xbar)) < 0.05

    def test_zero_steps(self):
        m, theta = lg()
        res = oracles.map_latent(m, theta, np.zeros(5), [0.3, 0.1], steps=0)
        np.testing.assert_array_equal(res.z, [0.3, 0.1])

    def test_monotone_history(self):
        m = small_model("toy_softplus")
        theta = m.init_params()
        res = oracles.map_latent(m, theta, [0.5], [1.5, -2.0], steps=200)
        assert np.all(np.diff(res.history) >= 0)
        assert res.log_joint >= res.history[0]

    def test_stalled_flag_at_optimum(self):
        m, theta = lg()
        x = m.sample(theta, np.random.default_rng(11), 1)[1][0]
        mean, _ = oracles.lin_gauss_posterior(m, theta, x)
        res = oracles.map_latent(m, theta, x, mean, steps=5, tol=0.0)
        assert res.stalled
        np.testing.assert_allclose(res.z, mean, atol=1e-10)


THREE_ATOMS = oracles.DiscreteJoint(x_atoms=[-1.0, 0.0, 2.0], x_probs=[0.3, 0.5, 0.2],
                                    y_values=[[-1.0, 1.0, 3.0], [0.0, 2.0, 4.0], [-3.0, -1.0, 5.0]],
                                    y_probs=[[0.2, 0.5, 0.3], [0.6, 0.2, 0.2], [0.1, 0.6, 0.3]])


class TestConditionalMean:
    def test_exact_predictor(self):
        mse_p, mse_c = oracles.conditional_mean_check(THREE_ATOMS, THREE_ATOMS.conditional_mean, rng=0)
        assert mse_p == mse_c

    def test_constant_predictor_excess(self):
        joint = oracles.DiscreteJoint([0.0], [1.0], [[-1.0, 1.0]], [[0.5, 0.5]])
        base, _ = oracles.conditional_mean_check(joint, lambda x: np.zeros_like(x), n=20_000, rng=1)
        for c in (0.5, 1.5):
            mse, _ = oracles.conditional_mean_check(joint, lambda x, c=c: np.full_like(x, c), n=20_000, rng=1)
            # mse(c) - mse(0) = c^2 - 2 c ybar with ybar ~ N(0, 1 / n)
            assert mse - base == pytest.approx(c * c, abs=2 * c * 4 / np.sqrt(20_000))

    def test_krr_recovers_atom_means(self):
        rng = np.random.default_rng(2)
        x, y = THREE_ATOMS.sample(rng, 10_000)
        fit_ = krr.fit(x[:, None], y[None, :], krr.Hyperparams(kernels.KernelParams.with_bandwidth(0.5), 1e-12))
        mse_p, mse_c = oracles.conditional_mean_check(
            THREE_ATOMS, lambda q: krr.predict(fit_, q[:, None])[0], rng=3)
        assert abs(mse_p - mse_c) < 1e-2 * mse_c
        pred = krr.predict(fit_, THREE_ATOMS.x_atoms[:, None])[0]
        for k, atom in enumerate(THREE_ATOMS.x_atoms):
            ys = y[x == atom]
            se = ys.std(ddof=1) / np.sqrt(ys.size)
            assert abs(pred[k] - ys.mean()) < 2 * se

    def test_bad_predictor_cannot_win(self):
        # the check raises if the conditional mean loses by more than the sampling slack
        class Rigged(oracles.DiscreteJoint):
            def conditional_mean(self, x):
                return np.full_like(x, 100.0)

        rigged = Rigged(THREE_ATOMS.x_atoms, THREE_ATOMS.x_probs, THREE_ATOMS.y_values, THREE_ATOMS.y_probs)
        with pytest.raises(oracles.OracleError):
            oracles.conditional_mean_check(rigged, THREE_ATOMS.conditional_mean, rng=4)

    def test_probabilities_validated(self):
        with pytest.raises(ValueError):
            oracles.DiscreteJoint([0.0], [0.5], [[1.0]], [[1.0]])
