"""Wake-sleep training loop around the kernel gradient model.

One iteration draws sleep samples from the current model, fits the ridge
regression to their log joints (or to natural parameters and log
normalisers), optionally takes a hyperparameter step on fresh validation
samples, and finally applies the fitted regression to a batch of data and
ascends the resulting objective with Adam.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from . import kernels, krr
from ._validation import as_observations, as_rng, check_count, check_positive
from .models import GenerativeModel, make_model

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("iteration", "epoch", "jbar", "grad_norm", "val_mse", "bandwidth", "lam",
               "jitter", "condition", "status")


class TrainingError(RuntimeError):
    """Raised after too many consecutive aborted iterations."""


def adam_update(theta, grad, state=None, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam descent step; returns new parameters and a new state dict.

    A gradient with any non-finite entry leaves both unchanged.
    """
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if state is None:
        state = {"m": np.zeros_like(theta), "v": np.zeros_like(theta), "t": 0}
    if not np.all(np.isfinite(grad)):
        logger.warning("non-finite gradient; Adam update skipped")
        return theta, state
    t = state["t"] + 1
    m = beta1 * state["m"] + (1 - beta1) * grad
    v = beta2 * state["v"] + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + eps), {"m": m, "v": v, "t": t}


@dataclass
class TrainConfig:
    """Settings of the wake-sleep loop.

    ``lam`` is the initial (or fixed, with ``lambda_fixed``) ridge weight.
    ``bandwidth`` set to ``None`` initialises the kernel with the median
    heuristic on the first sleep sample; with ``adapt`` off the heuristic is
    reapplied at every iteration.  ``n_proj`` switches to a fixed random
    linear feature map of that many outputs.
    """

    n_sleep: int = 2000
    n_val: int = 200
    batch_size: int = 100
    epochs: int = 1
    gen_lr: float = 0.001
    grad_lr: float = 0.001
    lam: float = 0.01
    lambda_fixed: bool = False
    exp_fam_mode: bool = False
    overdispersion: float = 3.0
    seed: int = 0
    adapt: bool = True
    adapt_steps: int = 1
    adapt_every: int = 1
    adapt_warmup: int = 0
    adapt_projection: bool = False
    n_proj: int | None = None
    batchnorm: bool = False
    bandwidth: float | None = None
    tol: float = 1e-5
    max_failures: int = 3

    def __post_init__(self):
        check_count(self.n_sleep, "n_sleep", 2)
        check_count(self.n_val, "n_val", 0)
        check_count(self.batch_size, "batch_size", 1)
        check_count(self.epochs, "epochs", 0)
        if not (np.isfinite(self.gen_lr) and self.gen_lr >= 0):
            raise ValueError(f"gen_lr must be a non-negative number, got {self.gen_lr!r}")
        check_positive(self.grad_lr, "grad_lr")
        check_positive(self.lam, "lam")
        check_positive(self.overdispersion, "overdispersion")
        check_count(self.adapt_steps, "adapt_steps", 0)
        check_count(self.adapt_every, "adapt_every", 1)
        check_count(self.adapt_warmup, "adapt_warmup", 0)
        check_count(self.max_failures, "max_failures", 1)
        if self.adapt and self.n_val < 2:
            raise ValueError("n_val must be >= 2 when adapt is enabled")
        if self.n_proj is not None:
            check_count(self.n_proj, "n_proj", 1)
        if self.bandwidth is not None:
            check_positive(self.bandwidth, "bandwidth")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class StepRecord:
    iteration: int
    epoch: int
    jbar: float
    grad_norm: float
    val_mse: float
    bandwidth: float
    lam: float
    jitter: float
    condition: float = math.nan
    status: str = "ok"
    wall_time: float = 0.0
    opt_state: dict | None = field(default=None, repr=False)
    gamma_state: dict | None = field(default=None, repr=False)

    def row(self):
        return [self.iteration, self.epoch, self.jbar, self.grad_norm, self.val_mse,
                self.bandwidth, self.lam, self.jitter, self.condition, self.status]


def fmt(value):
    """Floats with 17 significant digits so logs round-trip exactly."""
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    return str(value)


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    theta_final: ad.ParamVector | None = None
    hp_final: krr.Hyperparams | None = None
    converged: bool = False

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for r in self.records:
                w.writerow([fmt(v) for v in r.row()])

    def write_timing(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("iteration", "wall_time"))
            for r in self.records:
                w.writerow([r.iteration, fmt(r.wall_time)])


# --------------------------------------------------------------------------- #

def sleep_targets(model, theta, Z, X, exp_fam_mode=False):
    """Regression targets ``(d_t, N)``: the log joint, or ``eta`` rows followed by ``Psi``."""
    p = theta.unpack()
    if not exp_fam_mode:
        return np.asarray(model.log_joint(p, Z, X))[None, :]
    eta = np.asarray(model.natural_params(p, Z))
    psi = np.asarray(model.log_norm(p, Z))
    return np.vstack([eta.T, psi[None, :]])


def initial_hyperparams(model, X, config, rng):
    d_x = X.shape[1]
    if config.n_proj is not None:
        fm = kernels.FeatureMap.random_projection(d_x, config.n_proj, rng, batchnorm=config.batchnorm)
        if config.batchnorm:
            F = X @ fm.weights.T
            fm = kernels.FeatureMap(fm.variant, fm.weights, F.mean(0), F.var(0) + 1e-12)
    else:
        fm = kernels.FeatureMap()
    base = kernels.KernelParams(0.0, fm)
    sigma = config.bandwidth or kernels.median_heuristic(base, X, max_points=1000, rng=rng)
    return krr.Hyperparams(kernels.KernelParams.with_bandwidth(sigma, fm), config.lam,
                           config.lambda_fixed)


def wake_objective(model, fit_, Z, X, data_batch, exp_fam_mode=False):
    """Build ``p -> Jbar(p)`` for the wake phase from a fitted gradient model.

    Scalar mode: ``sum_n wbar_n log p(z_n, x_n)`` with ``wbar`` the mean of the
    ridge weights over the batch.  Exponential-family mode:
    ``sum_n eta_n . c_n - sum_n wbar_n Psi_n`` with ``c = W S* / M``.
    """
    W = krr.weights(fit_, data_batch)
    if W.ndim == 1:
        W = W[:, None]
    wbar = W.mean(axis=1)
    if not exp_fam_mode:
        return lambda p: ad.sum(ad.mul(model.log_joint(p, Z, X), wbar))
    S = model.suff_stats(as_observations(data_batch))
    C = W @ S / S.shape[0]

    def objective(p):
        return ad.sub(ad.sum(ad.mul(model.natural_params(p, Z), C)),
                      ad.sum(ad.mul(model.log_norm(p, Z), wbar)))

    return objective


def estimate_gradient(model, theta, data, n_sleep=2000, lam=0.01, rng=None, exp_fam_mode=False,
                      bandwidth=None, n_proj=None):
    """Amortised estimate of the mean log-likelihood gradient over ``data``.

    Fits the gradient model on ``n_sleep`` fresh samples from ``theta`` with
    a median-heuristic (or fixed) bandwidth and ridge weight ``lam``, and
    returns ``grad Jbar`` as a :class:`~alws.autodiff.ParamVector`.
    """
    rng = as_rng(rng)
    data = as_observations(data)
    config = TrainConfig(n_sleep=n_sleep, lam=lam, adapt=False, exp_fam_mode=exp_fam_mode,
                         bandwidth=bandwidth, n_proj=n_proj)
    Z, X = model.sample(theta, rng, n_sleep)
    Y = sleep_targets(model, theta, Z, X, exp_fam_mode)
    fit_ = krr.fit(X, Y, initial_hyperparams(model, X, config, rng))
    objective = wake_objective(model, fit_, Z, X, data, exp_fam_mode)
    return ad.backward(ad.forward(objective, theta))


def wake_sleep_step(model: GenerativeModel, theta, hp, data_batch, config: TrainConfig, rng,
                    n_data=None, iteration=0, epoch=0, opt_state=None, gamma_state=None):
    """One iteration: sleep fit, hyperparameter step, wake update.

    Returns ``(theta', hp', record)``.  If the gradient-model fit fails the
    parameters are returned unchanged and ``record.status`` says why.
    """
    t0 = time.perf_counter()
    rng = as_rng(rng)
    data_batch = as_observations(data_batch)
    n_data = data_batch.shape[0] if n_data is None else n_data
    Z, X = model.sample(theta, rng, config.n_sleep)
    Y = sleep_targets(model, theta, Z, X, config.exp_fam_mode)
    if hp is None:
        hp = initial_hyperparams(model, X, config, rng)
    elif not config.adapt and config.bandwidth is None:
        sigma = kernels.median_heuristic(hp.kernel, X, max_points=1000, rng=rng)
        hp = replace(hp, kernel=replace(hp.kernel, log_bandwidth=float(np.log(sigma))))
    if hp.kernel.feature_map.variant == kernels.LINEAR_BN:
        hp = replace(hp, kernel=replace(hp.kernel,
                                                feature_map=hp.kernel.feature_map.update_stats(X)))

    def aborted(status, hp_out):
        rec = StepRecord(iteration, epoch, math.nan, math.nan, math.nan, hp_out.kernel.bandwidth,
                         hp_out.lam, math.nan, math.nan, status, time.perf_counter() - t0,
                         opt_state, gamma_state)
        return theta, hp_out, rec

    try:
        fit_ = krr.fit(X, Y, hp)
    except krr.FitError as exc:
        logger.error("iteration %d: gradient-model fit failed: %s", iteration, exc)
        return aborted("fit_failed", hp)

    val_mse = math.nan
    adapt_now = (config.adapt and config.adapt_steps > 0 and iteration >= config.adapt_warmup
                 and iteration % config.adapt_every == 0)
    if adapt_now:
        Zv, Xv = model.sample(theta, rng, config.n_val)
        Yv = sleep_targets(model, theta, Zv, Xv, config.exp_fam_mode)
        hp_new, trace = krr.adapt(hp, krr.SleepBatch(X, Y), krr.SleepBatch(Xv, Yv),
                                  config.adapt_steps, config.grad_lr, gamma_state,
                                  config.adapt_projection)
        gamma_state = trace.state
        val_mse = float(trace[-1]) if len(trace) else math.nan
        if hp_new != hp:
            try:
                fit_ = krr.fit(X, Y, hp_new)
                hp = hp_new
            except krr.FitError as exc:
                logger.error("iteration %d: refit after adaptation failed: %s", iteration, exc)
                return aborted("fit_failed", hp)

    objective = wake_objective(model, fit_, Z, X, data_batch, config.exp_fam_mode)
    holder = {}

    def total(p):
        j = objective(p)
        holder["jbar"] = float(ad.value_of(j))
        pen = model.log_penalty(p)
        return ad.add(j, ad.mul(1.0 / n_data, pen)) if isinstance(pen, ad.Node) else j

    try:
        out = ad.forward(total, theta)
        grad = ad.backward(out).data
    except (ad.NonFiniteError, FloatingPointError) as exc:
        logger.error("iteration %d: wake objective not finite: %s", iteration, exc)
        return aborted("wake_failed", hp)

    status = "ok"
    new_data, opt_state = adam_update(theta.data, -grad, opt_state, config.gen_lr)
    new_theta = theta.with_data(new_data)
    if not np.all(np.isfinite(grad)) or not np.all(np.isfinite(new_data)):
        new_theta, status = theta, "grad_skipped"
    rec = StepRecord(iteration, epoch, holder["jbar"], float(np.linalg.norm(grad)), val_mse,
                     hp.kernel.bandwidth, hp.lam, fit_.jitter, fit_.condition_estimate, status,
                     time.perf_counter() - t0, opt_state, gamma_state)
    return new_theta, hp, rec


def _converged(jbar, tol, window=10):
    if tol is None or tol <= 0 or len(jbar) < window + 1:
        return False
    cur = np.mean(jbar[-window:])
    prev = np.mean(jbar[-window - 1:-1])
    return bool(abs(cur - prev) < tol * abs(prev))


def train(model: GenerativeModel, dataset, config: TrainConfig, theta0=None, callback=None):
    """Run ``epochs * ceil(n_data / batch_size)`` wake-sleep iterations.

    ``callback(iteration, theta, hp, record)`` is invoked after every
    iteration.  Returns ``(theta_final, TrainLog)``.
    """
    X = as_observations(dataset, "dataset")
    if X.shape[1] != model.dim_x:
        raise ValueError(f"dataset has {X.shape[1]} columns, model expects {model.dim_x}")
    n_data = X.shape[0]
    if config.batch_size > n_data:
        raise ValueError(f"batch_size {config.batch_size} exceeds dataset size {n_data}")
    rng = np.random.default_rng(config.seed)
    theta = model.init_params(rng) if theta0 is None else theta0
    model.check_params(theta)
    if theta0 is None and config.overdispersion != 1.0:
        theta = model.overdisperse(theta, config.overdispersion)

    log = TrainLog()
    hp, opt_state, gamma_state = None, None, None
    per_epoch = math.ceil(n_data / config.batch_size)
    failures, it = 0, 0
    jbar_hist = []
    for epoch in range(config.epochs):
        order = rng.permutation(n_data)
        for b in range(per_epoch):
            batch = X[order[b * config.batch_size:(b + 1) * config.batch_size]]
            theta, hp, rec = wake_sleep_step(model, theta, hp, batch, config, rng, n_data, it,
                                             epoch, opt_state, gamma_state)
            opt_state, gamma_state = rec.opt_state, rec.gamma_state
            log.records.append(rec)
            if callback is not None:
                callback(it, theta, hp, rec)
            it += 1
            if rec.status in ("fit_failed", "wake_failed"):
                failures += 1
                if failures >= config.max_failures:
                    raise TrainingError(f"{failures} consecutive iterations failed "
                                        f"(last status {rec.status!r} at iteration {rec.iteration})")
                continue
            failures = 0
            jbar_hist.append(rec.jbar)
            if _converged(jbar_hist, config.tol):
                log.converged = True
                break
        if log.converged:
            break
    log.theta_final, log.hp_final = theta, hp
    return theta, log


# --------------------------------------------------------------------------- #

class AmortisedWakeSleep(BaseEstimator):
    """Estimator wrapper: ``fit(X)`` learns model parameters from data rows.

    Parameters
    ----------
    model : str or GenerativeModel, default="linear_gaussian"
        A zoo name (built with ``model_kwargs``) or a model instance.
    n_sleep, n_val, batch_size, epochs, gen_lr, grad_lr, lam, lambda_fixed,
    exp_fam_mode, overdispersion, adapt, n_proj :
        See :class:`TrainConfig`.
    random_state : int, default=0

    Attributes
    ----------
    theta_ : ParamVector
    hyperparams_ : Hyperparams
    log_ : TrainLog
    """

    def __init__(self, model="linear_gaussian", model_kwargs=None, n_sleep=500, n_val=100,
                 batch_size=100, epochs=10, gen_lr=0.01, grad_lr=0.001, lam=0.01,
                 lambda_fixed=False, exp_fam_mode=False, overdispersion=1.0, adapt=True,
                 n_proj=None, random_state=0):
        self.model = model
        self.model_kwargs = model_kwargs
        self.n_sleep = n_sleep
        self.n_val = n_val
        self.batch_size = batch_size
        self.epochs = epochs
        self.gen_lr = gen_lr
        self.grad_lr = grad_lr
        self.lam = lam
        self.lambda_fixed = lambda_fixed
        self.exp_fam_mode = exp_fam_mode
        self.overdispersion = overdispersion
        self.adapt = adapt
        self.n_proj = n_proj
        self.random_state = random_state

    def _build_model(self):
        if isinstance(self.model, GenerativeModel):
            return self.model
        return make_model(self.model, **(self.model_kwargs or {}))

    def _config(self, n_data):
        return TrainConfig(n_sleep=self.n_sleep, n_val=self.n_val,
                           batch_size=min(self.batch_size, n_data), epochs=self.epochs,
                           gen_lr=self.gen_lr, grad_lr=self.grad_lr, lam=self.lam,
                           lambda_fixed=self.lambda_fixed, exp_fam_mode=self.exp_fam_mode,
                           overdispersion=self.overdispersion, seed=self.random_state,
                           adapt=self.adapt, n_proj=self.n_proj)

    def fit(self, X, y=None, theta0=None):
        X = as_observations(X)
        self.model_ = self._build_model()
        self.theta_, self.log_ = train(self.model_, X, self._config(X.shape[0]), theta0)
        self.hyperparams_ = self.log_.hp_final
        self.n_features_in_ = X.shape[1]
        return self

    def sample(self, n, random_state=None):
        """Draw ``n`` observations from the fitted model."""
        check_is_fitted(self, "theta_")
        return self.model_.sample(self.theta_, as_rng(random_state), n)[1]

    def get_config(self):
        return asdict(self._config(self.batch_size))
