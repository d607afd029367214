"""Kernel ridge regression used as the gradient model.

With training inputs ``X`` (N observations), targets ``Y`` (d_t x N) and
ridge weight ``lam`` the fitted weights are ``alpha = Y (K + lam N I)^-1`` and
the prediction at ``x*`` is ``alpha @ k*``.  Because the prediction is linear
in the targets, differentiating it with respect to model parameters that
enter only through ``Y`` is the same as regressing the target gradients.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy import linalg as sla
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from . import kernels
from ._validation import as_observations, as_targets, check_count, check_positive

LOG_JOINT = "log-joint"
EXP_FAMILY = "exp-family"

JITTER_START = 1e-10
JITTER_STOP = 1e-4


class FitError(np.linalg.LinAlgError):
    """Cholesky factorisation failed even after jitter escalation."""

    def __init__(self, message, jitter):
        super().__init__(message)
        self.jitter = jitter


@dataclass(frozen=True)
class Hyperparams:
    """Kernel parameters plus ridge weight ``lam``."""

    kernel: kernels.KernelParams = field(default_factory=kernels.KernelParams)
    lam: float = 0.01
    lambda_fixed: bool = False

    def __post_init__(self):
        check_positive(self.lam, "lam")

    def to_json(self):
        return {"kernel": self.kernel.to_json(), "lam": self.lam, "lambda_fixed": self.lambda_fixed}

    @classmethod
    def from_json(cls, obj):
        return cls(kernels.KernelParams.from_json(obj["kernel"]), float(obj["lam"]),
                   bool(obj["lambda_fixed"]))


@dataclass(frozen=True)
class SleepBatch:
    """Samples ``(Z, X)`` from the model together with their regression targets.

    ``Y`` has one row per target dimension and one column per sample.
    """

    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray | None = None

    def __post_init__(self):
        X = as_observations(self.X)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", as_targets(self.Y, X.shape[0]))

    def __len__(self):
        return self.X.shape[0]


@dataclass(frozen=True)
class GradientModelFit:
    """A fitted ridge regression.

    ``alpha = Y (K + lam N I)^-1`` is computed on first access, since the
    wake phase only needs the weights ``(K + lam N I)^-1 k*``.
    """

    train_inputs: np.ndarray
    kernel: kernels.KernelParams
    lam: float
    chol: np.ndarray
    targets: np.ndarray
    jitter: float = 0.0
    target_kind: str = LOG_JOINT
    n_eta: int = 0

    @cached_property
    def alpha(self):
        return _solve(self.chol, self.targets.T).T

    @property
    def n(self):
        return self.train_inputs.shape[0]

    @property
    def condition_estimate(self):
        d = np.diag(self.chol)
        return float((d.max() / d.min()) ** 2)


def factorize(K, lam, n=None):
    """Cholesky factor of ``K + (lam n + jitter) I`` with jitter escalation.

    Zero jitter is tried first.  Returns ``(chol, jitter)``.
    """
    n = K.shape[0] if n is None else n
    scale = np.trace(K) / K.shape[0]
    ridge = lam * n
    jitters = [0.0] + [scale * 10.0 ** e for e in range(int(np.log10(JITTER_START)),
                                                       int(np.log10(JITTER_STOP)) + 1)]
    A = K.copy()
    diag = np.diag_indices_from(A)
    base = np.diag(K).copy()
    for jitter in jitters:
        A[diag] = base + ridge + jitter
        try:
            return sla.cholesky(A, lower=True, check_finite=False), jitter
        except np.linalg.LinAlgError:
            continue
    raise FitError(f"Cholesky failed for N={K.shape[0]} even with jitter {jitters[-1]:.3g}",
                   jitters[-1])


def _solve(chol, B):
    return sla.cho_solve((chol, True), B, check_finite=False)


def fit(X, Y, hp: Hyperparams, target_kind=LOG_JOINT, n_eta=0) -> GradientModelFit:
    """Fit ridge weights for every row of ``Y`` with one shared Cholesky factor."""
    X = as_observations(X)
    Y = as_targets(Y, X.shape[0])
    K = kernels.gram(hp.kernel, X)
    chol, jitter = factorize(K, hp.lam)
    return GradientModelFit(X, hp.kernel, hp.lam, chol, Y, jitter, target_kind, n_eta)


def _cross(fit_, Xstar):
    Xstar = np.asarray(Xstar, dtype=float)
    single = Xstar.ndim == 0 or (Xstar.ndim == 1 and Xstar.size == fit_.train_inputs.shape[1])
    Xs = np.atleast_1d(Xstar)[None, :] if single else Xstar
    return kernels.cross_matrix(fit_.kernel, fit_.train_inputs, Xs), single


def weights(fit_: GradientModelFit, Xstar) -> np.ndarray:
    """``(K + lam N I)^-1 k*``: one column per query point, or a vector for a single one."""
    Kx, single = _cross(fit_, Xstar)
    W = _solve(fit_.chol, Kx)
    return W[:, 0] if single else W


def predict(fit_: GradientModelFit, Xstar) -> np.ndarray:
    """``alpha @ k*``; shape ``(d_t,)`` for one query or ``(d_t, n*)`` for a batch."""
    Kx, single = _cross(fit_, Xstar)
    out = fit_.alpha @ Kx
    return out[:, 0] if single else out


def predict_grad_targets(fit_: GradientModelFit, grad_targets, Xstar) -> np.ndarray:
    """Regress the per-sample gradients directly: ``G (K + lam N I)^-1 k*``."""
    G = np.asarray(grad_targets, dtype=float)
    if G.ndim != 2 or G.shape[1] != fit_.n:
        raise ValueError(f"grad_targets must have shape (d_theta, {fit_.n}), got {G.shape}")
    return G @ weights(fit_, Xstar)


def predict_node(fit_: GradientModelFit, targets, Xstar):
    """Prediction with differentiable targets (length-N node) at a single query point.

    The solve reuses the stored factor, so gradients flow only into ``targets``.
    """
    Kx, single = _cross(fit_, Xstar)
    k = Kx[:, 0] if single else Kx
    u = ad.tri_solve(fit_.chol, k, lower=True)
    w = ad.tri_solve(fit_.chol, u, lower=True, trans=True)
    return ad.matmul(targets, w)


# --------------------------------------------------------------------------- #
# hyperparameter adaptation

@dataclass
class AdaptTrace:
    """Validation MSE before each step plus the value after the last one."""

    values: np.ndarray
    aborted: bool = False
    state: dict | None = None

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def _val_mse(hp, log_sigma, log_lam, fit_set, val_set, weights_=None):
    n = len(fit_set)
    K = kernels.gram_node(hp.kernel, fit_set.X, log_sigma, weights_)
    A = ad.add(K, ad.mul(ad.exp(log_lam) * n, np.eye(n))) if isinstance(log_lam, ad.Node) \
        else ad.add(K, np.exp(log_lam) * n * np.eye(n))
    Kx = kernels.cross_node(hp.kernel, fit_set.X, val_set.X, log_sigma, weights_)
    if len(val_set) < fit_set.Y.shape[0]:
        # fewer validation points than targets: solve against k* instead of Y
        pred = ad.transpose(ad.matmul(fit_set.Y, ad.spd_solve(A, Kx)))
    else:
        pred = ad.matmul(ad.transpose(Kx), ad.spd_solve(A, fit_set.Y.T))   # (L, d_t)
    resid = ad.sub(pred, val_set.Y.T)
    return ad.mean(ad.sum(ad.square(resid), axis=1))


def validation_mse(hp: Hyperparams, fit_set: SleepBatch, val_set: SleepBatch) -> float:
    """Mean squared error of a fit on ``fit_set`` evaluated on ``val_set``."""
    f = fit(fit_set.X, fit_set.Y, hp)
    P = predict(f, val_set.X)
    return float(np.mean(np.sum((P - val_set.Y) ** 2, axis=0)))


def adapt(hp: Hyperparams, fit_set: SleepBatch, val_set: SleepBatch, steps=1, lr=0.001,
          state=None, adapt_projection=False):
    """Adam descent on the validation MSE with respect to log bandwidth and log ridge.

    Each step refits the weights on ``fit_set`` (inside the differentiated
    expression) and measures the error on ``val_set``.  Returns the updated
    hyperparameters and an :class:`AdaptTrace`.  A non-finite error stops the
    adaptation and returns the last finite state with ``trace.aborted`` set.
    """
    from .trainer import adam_update  # shared optimiser, imported lazily to avoid a cycle

    steps = check_count(steps, "steps")
    check_positive(lr, "lr")
    if len(val_set) < 2:
        raise ValueError("validation set needs at least 2 samples")
    if fit_set.Y.shape[0] != val_set.Y.shape[0]:
        raise ValueError("fit and validation targets have different dimensions")
    fm = hp.kernel.feature_map
    use_w = adapt_projection and fm.variant != kernels.IDENTITY

    names = {"log_sigma": np.array(hp.kernel.log_bandwidth)}
    if not hp.lambda_fixed:
        names["log_lam"] = np.array(np.log(hp.lam))
    if use_w:
        names["proj"] = fm.weights
    gamma = ad.ParamVector.pack(names)

    def objective(p):
        log_lam = p["log_lam"] if "log_lam" in p else np.log(hp.lam)
        return _val_mse(hp, p["log_sigma"], log_lam, fit_set, val_set, p.get("proj"))

    trace, aborted = [], False
    current = accepted = gamma
    for step in range(steps + 1):
        try:
            out = ad.forward(objective, current)
        except (ad.NonFiniteError, np.linalg.LinAlgError) as exc:
            warnings.warn(f"hyperparameter adaptation aborted: {exc}", RuntimeWarning, stacklevel=2)
            aborted = True
            break
        trace.append(float(out.value))
        accepted = current
        if step == steps:
            break
        grad = ad.backward(out)
        new_data, state = adam_update(current.data, grad.data, state, lr)
        current = current.with_data(new_data)

    if np.array_equal(accepted.data, gamma.data):
        return hp, AdaptTrace(np.asarray(trace), aborted, state)
    vals = accepted.unpack()
    new_fm = fm if not use_w else replace(fm, weights=vals["proj"])
    kernel = kernels.KernelParams(float(vals["log_sigma"]), new_fm)
    lam = float(np.exp(vals["log_lam"])) if "log_lam" in vals else hp.lam
    return Hyperparams(kernel, lam, hp.lambda_fixed), AdaptTrace(np.asarray(trace), aborted, state)


# --------------------------------------------------------------------------- #
# estimator interface

class KernelRidgeGradientModel(RegressorMixin, BaseEstimator):
    """Scikit-learn style wrapper around :func:`fit` and :func:`predict`.

    Parameters
    ----------
    bandwidth : float or "median", default="median"
        Kernel bandwidth; ``"median"`` applies the median heuristic to the
        training inputs.
    lam : float, default=0.01
        Ridge weight; the regulariser added to the Gram matrix is ``lam * N``.
    """

    def __init__(self, bandwidth="median", lam=0.01):
        self.bandwidth = bandwidth
        self.lam = lam

    def fit(self, X, y):
        X = as_observations(X)
        y = np.asarray(y, dtype=float)
        self._multi = y.ndim == 2
        Y = y.T if self._multi else y[None, :]
        base = kernels.KernelParams()
        sigma = kernels.median_heuristic(base, X) if self.bandwidth == "median" else self.bandwidth
        self.hyperparams_ = Hyperparams(kernels.KernelParams.with_bandwidth(sigma),
                                        check_positive(self.lam, "lam"))
        self.fit_ = fit(X, Y, self.hyperparams_)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        X = as_observations(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        P = predict(self.fit_, X)
        return P.T if self._multi else P[0]

    def weights(self, X):
        check_is_fitted(self, "fit_")
        return weights(self.fit_, as_observations(X))
