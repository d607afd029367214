import numpy as np
import pytest
from sklearn.base import clone
from sklearn.decomposition import FactorAnalysis

from alws import autodiff as ad
from alws import krr, models, oracles, trainer
from alws.trainer import TrainConfig, adam_update, train, wake_sleep_step

# theta <- theta - 0.1 * Adam(d/dtheta theta^2), theta_0 = 1, default betas and eps
ADAM_REFERENCE = [0.9000000005, 0.8004122286917927, 0.70158627294603, 0.6039390605737458,
                  0.5079636592643417, 0.4142364559936616, 0.32342070493910174, 0.2362637245210415,
                  0.1535845600703632, 0.07624915560691176]


def quick_config(**kw):
    base = dict(n_sleep=100, n_val=20, batch_size=20, epochs=1, gen_lr=0.01, lam=0.01,
                overdispersion=1.0, tol=0.0)
    base.update(kw)
    return TrainConfig(**base)


class TestAdam:
    def test_zero_gradient(self):
        theta, state = np.array([1.0, -2.0]), None
        for _ in range(20):
            theta, state = adam_update(theta, np.zeros(2), state, lr=0.1)
        np.testing.assert_array_equal(theta, [1.0, -2.0])

    def test_first_step_is_signed_lr(self):
        g = np.array([3.0, -0.01, 250.0])
        theta, _ = adam_update(np.zeros(3), g, None, lr=0.05)
        np.testing.assert_allclose(theta, -0.05 * np.sign(g), rtol=1e-6)

    def test_reference_trace(self):
        theta, state, out = np.array([1.0]), None, []
        for _ in range(10):
            theta, state = adam_update(theta, 2 * theta, state, lr=0.1)
            out.append(float(theta[0]))
        np.testing.assert_allclose(out, ADAM_REFERENCE, rtol=1e-14)

    def test_non_finite_gradient_skips(self, caplog):
        theta, state = adam_update(np.ones(2), np.ones(2), None, lr=0.1)
        new, new_state = adam_update(theta, np.array([1.0, np.nan]), state, lr=0.1)
        assert new is theta and new_state is state
        assert "skipped" in caplog.text


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError, match="n_sleep"):
            TrainConfig(n_sleep=1)
        with pytest.raises(ValueError, match="n_val"):
            TrainConfig(n_val=1, adapt=True)
        with pytest.raises(ValueError, match="gen_lr"):
            TrainConfig(gen_lr=-1.0)
        with pytest.raises(ValueError, match="lam"):
            TrainConfig(lam=0.0)
        TrainConfig(n_val=0, adapt=False)

    def test_batch_larger_than_data(self):
        m = models.make_model("toy_softplus")
        with pytest.raises(ValueError, match="batch_size"):
            train(m, np.zeros((5, 1)), quick_config(batch_size=10))


class TestStep:
    @staticmethod
    def setup(name="linear_gaussian", **kw):
        m = models.make_model(name, **kw)
        theta = m.init_params(np.random.default_rng(0))
        _, X = m.sample(theta, np.random.default_rng(1), 50)
        return m, theta, X

    def test_zero_learning_rate(self):
        m, theta, X = self.setup()
        new, _, rec = wake_sleep_step(m, theta, None, X, quick_config(gen_lr=0.0), 0)
        assert new.data.tobytes() == theta.data.tobytes()
        assert np.isfinite(rec.jbar) and rec.status == "ok"

    def test_record_fields(self):
        m, theta, X = self.setup()
        _, hp, rec = wake_sleep_step(m, theta, None, X, quick_config(adapt=True), 0)
        assert np.isfinite(rec.val_mse) and rec.grad_norm > 0 and rec.condition >= 1
        assert rec.bandwidth == pytest.approx(hp.kernel.bandwidth)

    def test_fit_failure_leaves_theta(self, monkeypatch, caplog):
        m, theta, X = self.setup()

        def broken(*args, **kwargs):
            raise krr.FitError("forced", 1e-4)

        monkeypatch.setattr(krr, "fit", broken)
        new, _, rec = wake_sleep_step(m, theta, None, X, quick_config(), 0)
        assert new is theta and rec.status == "fit_failed" and np.isnan(rec.jbar)
        assert "fit failed" in caplog.text

    def test_three_failures_terminate(self, monkeypatch):
        m, theta, X = self.setup()
        monkeypatch.setattr(krr, "fit", lambda *a, **k: (_ for _ in ()).throw(krr.FitError("forced", 1e-4)))
        with pytest.raises(trainer.TrainingError, match="3 consecutive"):
            train(m, X, quick_config(batch_size=10))

    def test_exp_fam_pathway_matches_scalar(self):
        m, theta, X = self.setup()
        rng = np.random.default_rng(2)
        Z, Xs = m.sample(theta, rng, 40)
        # near-zero ridge and a narrow kernel keep K + lam N I well conditioned and close to K
        hp = krr.Hyperparams(krr.kernels.KernelParams.with_bandwidth(0.5), 1e-10)
        grads = []
        for exp_fam in (False, True):
            Y = trainer.sleep_targets(m, theta, Z, Xs, exp_fam)
            fit_ = krr.fit(Xs, Y, hp)
            # wake points equal to sleep inputs make both regressions exact interpolants
            obj = trainer.wake_objective(m, fit_, Z, Xs, Xs[:10], exp_fam)
            grads.append(ad.backward(ad.forward(obj, theta)).data)
        assert np.linalg.norm(grads[0] - grads[1]) / np.linalg.norm(grads[0]) < 1e-6

    def test_targets_idempotent(self):
        m, theta, _ = self.setup()
        Z, X = m.sample(theta, np.random.default_rng(3), 30)
        a = trainer.sleep_targets(m, theta, Z, X, True)
        b = trainer.sleep_targets(m, theta, Z, X, True)
        assert a.tobytes() == b.tobytes()


class TestTrain:
    def test_zero_epochs(self):
        m = models.make_model("toy_softplus")
        theta0 = m.init_params()
        theta, log = train(m, np.zeros((10, 1)), quick_config(epochs=0, batch_size=5), theta0)
        assert theta is theta0 and len(log) == 0

    def test_iteration_count_and_order(self):
        m, theta, X = TestStep.setup()
        _, log = train(m, X, quick_config(epochs=2, batch_size=15))
        assert len(log) == 2 * 4
        np.testing.assert_array_equal(log.column("iteration"), np.arange(8))
        np.testing.assert_array_equal(log.column("epoch"), [0] * 4 + [1] * 4)

    def test_deterministic_log(self, tmp_path):
        m, _, X = TestStep.setup()
        paths = []
        for i in range(2):
            _, log = train(m, X, quick_config(epochs=2, adapt=True, seed=5))
            paths.append(tmp_path / f"log{i}.csv")
            log.write_csv(paths[-1])
        assert paths[0].read_bytes() == paths[1].read_bytes()
        header = paths[0].read_text().splitlines()[0]
        assert header == ",".join(trainer.LOG_COLUMNS)

    def test_convergence_stops_early(self):
        m, _, X = TestStep.setup()
        _, log = train(m, X, quick_config(epochs=50, gen_lr=0.0, tol=1.0))
        assert log.converged and len(log) < 50 * 3

    def test_convergence_rule(self):
        assert not trainer._converged([1.0] * 10, 1e-5)
        assert trainer._converged([1.0] * 11, 1e-5)
        assert not trainer._converged(list(range(1, 12)), 1e-5)

    def test_linear_gaussian_reaches_em_optimum(self):
        m = models.make_model("linear_gaussian", dim_z=1, dim_x=5)
        truth = m.init_params(np.random.default_rng(100))
        _, X = m.sample(truth, np.random.default_rng(101), 500)
        # factor analysis fitted by EM is the exact maximum-likelihood solution for this model
        fa = FactorAnalysis(n_components=1, tol=1e-10, max_iter=10_000).fit(X)
        optimum = fa.score(X) * len(X)
        cfg = TrainConfig(n_sleep=500, n_val=100, batch_size=100, epochs=50, gen_lr=0.01, lam=1e-4,
                          exp_fam_mode=True, adapt=False, overdispersion=1.0, seed=0, tol=0.0)
        theta, _ = train(m, X, cfg)
        ll = oracles.lin_gauss_exact(m, theta, X)[0]
        assert abs(ll - optimum) / abs(optimum) < 0.02

    def test_callback_and_final_state(self):
        m, _, X = TestStep.setup()
        seen = []
        theta, log = train(m, X, quick_config(), callback=lambda i, th, hp, rec: seen.append(i))
        assert seen == list(range(len(log)))
        assert log.theta_final is theta and log.hp_final is not None


class TestEstimator:
    def test_fit_and_sample(self):
        est = trainer.AmortisedWakeSleep(model="toy_softplus", n_sleep=100, n_val=20, batch_size=20,
                                         epochs=1, random_state=0)
        X = np.random.default_rng(0).normal(size=(40, 1))
        est.fit(X)
        assert est.sample(7, random_state=1).shape == (7, 1)
        assert clone(est).get_params()["n_sleep"] == 100
        assert len(est.log_) == 2
