"""Reference estimators used to check gradient-model output.

* :func:`is_gradient` - self-normalised importance sampling with prior proposals.
* :func:`lin_gauss_exact` - closed-form marginal likelihood of the linear-Gaussian model.
* :func:`map_latent` - posterior mode by gradient ascent on ``log p(z, x*)``.
* :func:`conditional_mean_check` - squared-error optimality of the conditional mean.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from . import autodiff as ad
from ._validation import as_observations, as_rng, check_count, check_positive
from .models import LinearGaussian

LOG_2PI = float(np.log(2 * np.pi))


class OracleError(AssertionError):
    """An oracle could not produce a trustworthy reference."""


@dataclass(frozen=True)
class ISEstimate:
    gradient: ad.ParamVector
    effective_sample_size: float
    n_proposals: int
    weights: np.ndarray | None = None


def _is_weights(model, p, Z, x):
    X = np.broadcast_to(x, (Z.shape[0], x.size))
    try:
        logw = np.asarray(model.log_lik(p, Z, X), dtype=float)
    except ad.NonFiniteError as exc:
        raise OracleError(f"importance weights underflow (max log-weight non-finite: {exc})") from exc
    top = np.max(logw)
    if not np.isfinite(top):
        raise OracleError(f"importance weights underflow (max log-weight {top})")
    w = np.exp(logw - special.logsumexp(logw))
    return w / w.sum(), X


def is_gradient(model, theta, x_star, n_proposals=50000, rng=None, proposals=None) -> ISEstimate:
    """Self-normalised importance-sampling estimate of ``grad log p(x*)``.

    Proposals come from the prior; weights are normalised likelihoods
    ``p(x* | z) / sum p(x* | z')`` and the estimate is
    ``sum_i w_i grad log p(z_i, x*)``.  ``proposals`` reuses a fixed latent
    sample instead of drawing one.
    """
    x = np.asarray(x_star, dtype=float).ravel()
    if x.size != model.dim_x:
        raise ValueError(f"x_star has {x.size} entries, model expects {model.dim_x}")
    if proposals is None:
        Z = model.sample(theta, as_rng(rng), check_count(n_proposals, "n_proposals", 1))[0]
    else:
        Z = np.asarray(proposals, dtype=float)
    p = theta.unpack()
    w, X = _is_weights(model, p, Z, x)
    out = ad.forward(lambda q: ad.sum(ad.mul(model.log_joint(q, Z, X), w)), theta)
    return ISEstimate(ad.backward(out), float(1.0 / np.sum(w * w)), Z.shape[0], w)


def is_gradient_mean(model, theta, X_data, n_proposals=50000, rng=None):
    """Average of :func:`is_gradient` over data rows, sharing one proposal sample.

    Returns the mean gradient vector and the effective sample size of each
    data row.
    Exponential-family models use one backward pass over the proposals:
    ``sum_i eta(z_i) . C_i - wbar_i Psi(z_i)`` with ``C_i`` the weighted mean
    of the data statistics and ``wbar_i`` the mean weight.
    """
    X_data = as_observations(X_data)
    Z = model.sample(theta, as_rng(rng), check_count(n_proposals, "n_proposals", 1))[0]
    if not model.has_exp_fam:
        total = np.zeros(len(theta))
        ess = np.empty(X_data.shape[0])
        for m, x in enumerate(X_data):
            est = is_gradient(model, theta, x, proposals=Z)
            total += est.gradient.data
            ess[m] = est.effective_sample_size
        return theta.with_data(total / X_data.shape[0]), ess
    p = theta.unpack()
    M = X_data.shape[0]
    Wt = np.empty((M, Z.shape[0]))
    for m, x in enumerate(X_data):
        Wt[m] = _is_weights(model, p, Z, x)[0]
    ess = 1.0 / np.sum(Wt * Wt, axis=1)
    C = Wt.T @ model.suff_stats(X_data) / M
    wbar = Wt.mean(axis=0)

    def objective(q):
        return ad.sub(ad.sum(ad.mul(model.natural_params(q, Z), C)),
                      ad.sum(ad.mul(model.log_norm(q, Z), wbar)))

    return ad.backward(ad.forward(objective, theta)), ess


def _lg_loglik(p, X):
    W, c, log_sx = p["W"], p["c"], p["log_sx"]
    d = np.shape(ad.value_of(c))[0]
    S = ad.add(ad.matmul(W, ad.transpose(W)), ad.mul(np.eye(d), ad.exp(ad.mul(2.0, log_sx))))
    R = ad.sub(X, c)                                    # (n, d)
    sol = ad.spd_solve(S, ad.transpose(R))              # (d, n)
    quad = ad.sum(ad.mul(ad.transpose(R), sol))
    n = np.shape(X)[0]
    return ad.mul(-0.5, ad.add(ad.add(quad, ad.mul(float(n), ad.spd_logdet(S))), n * d * LOG_2PI))


def lin_gauss_exact(model, theta, x_star):
    """Exact ``log p(x*)`` summed over rows and its gradient for :class:`LinearGaussian`."""
    if not isinstance(model, LinearGaussian):
        raise TypeError("lin_gauss_exact needs a LinearGaussian model")
    X = np.asarray(x_star, dtype=float).reshape(-1, model.dim_x)
    try:
        out = ad.forward(_lg_loglik, theta, X)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"marginal covariance is singular: {exc}") from exc
    value = float(out.value)
    return value, ad.backward(out)


def lin_gauss_posterior(model, theta, x_star):
    """Posterior mean and covariance of ``z`` given one observation."""
    p = theta.unpack()
    W, c, prec_x = p["W"], p["c"], np.exp(-2 * p["log_sx"])
    A = np.eye(model.dim_z) + (W.T * prec_x) @ W
    cov = np.linalg.inv(A)
    mean = cov @ (W.T * prec_x) @ (np.asarray(x_star, dtype=float).ravel() - c)
    return mean, cov


@dataclass(frozen=True)
class MapResult:
    z: np.ndarray
    log_joint: float
    stalled: bool
    history: np.ndarray


def map_latent(model, theta, x_star, init_z, steps=500, lr=0.1, min_lr=1e-12, tol=1e-10):
    """Gradient ascent on ``log p(z, x*)`` over continuous latents with backtracking.

    Models with latents in the unit interval are optimised in logit space.
    ``stalled`` is set when no step improves the objective even at ``min_lr``.
    """
    steps = check_count(steps, "steps")
    check_positive(lr, "lr")
    p = theta.unpack()
    X = np.asarray(x_star, dtype=float).reshape(1, model.dim_x)
    unit = getattr(model, "uniform_latents", False)
    z0 = np.asarray(init_z, dtype=float).reshape(1, model.dim_z)
    u = special.logit(z0) if unit else z0.copy()

    def objective(v):
        Zv = ad.sigmoid(v) if unit else v
        return ad.sum(model.log_joint(p, Zv, X))

    def value_and_grad(v):
        leaf = ad.Node(v)
        out = objective(leaf)
        return float(out.value), ad.gradients(out, [leaf])[0]

    f, g = value_and_grad(u)
    history = [f]
    stalled = False
    for _ in range(steps):
        step = lr
        while True:
            cand = u + step * g
            try:
                fc = float(objective(cand))
            except (ad.NonFiniteError, FloatingPointError):
                fc = -np.inf
            if fc > f:
                break
            step *= 0.5
            if step < min_lr:
                stalled = True
                break
        if stalled:
            break
        improvement = fc - f
        u = cand
        f, g = value_and_grad(u)
        history.append(f)
        lr = step * 1.5
        if improvement < tol * (1 + abs(f)):
            break
    z = special.expit(u) if unit else u
    return MapResult(z[0], f, stalled, np.asarray(history))


# --------------------------------------------------------------------------- #
# conditional-mean optimality

@dataclass(frozen=True)
class DiscreteJoint:
    """Joint over finitely many ``x`` atoms with a finite conditional for ``y``.

    ``y_values[k]`` and ``y_probs[k]`` describe ``p(y | x = x_atoms[k])``.
    """

    x_atoms: np.ndarray
    x_probs: np.ndarray
    y_values: np.ndarray
    y_probs: np.ndarray

    def __post_init__(self):
        for name in ("x_atoms", "x_probs", "y_values", "y_probs"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not np.isclose(self.x_probs.sum(), 1.0) or not np.allclose(self.y_probs.sum(1), 1.0):
            raise ValueError("probabilities must sum to one")

    def sample(self, rng, n):
        rng = as_rng(rng)
        k = rng.choice(self.x_atoms.size, size=n, p=self.x_probs)
        cum = np.cumsum(self.y_probs[k], axis=1)
        j = np.minimum((rng.uniform(size=(n, 1)) > cum).sum(axis=1), self.y_values.shape[1] - 1)
        return self.x_atoms[k], self.y_values[k, j]

    def atom_means(self):
        return np.sum(self.y_values * self.y_probs, axis=1)

    def conditional_mean(self, x):
        idx = np.searchsorted(self.x_atoms, x)
        if not np.all(self.x_atoms[np.clip(idx, 0, self.x_atoms.size - 1)] == x):
            raise ValueError("x outside the atom set")
        return self.atom_means()[idx]


def conditional_mean_check(joint_sampler, predictor, n=10000, rng=None, n_se=3.0):
    """Squared errors of ``predictor`` and of the exact conditional mean on fresh samples.

    Returns ``(mse_predictor, mse_conditional_mean)`` and raises
    :class:`OracleError` if the conditional mean does worse than the predictor
    by more than ``n_se`` standard errors of the paired difference.
    """
    x, y = joint_sampler.sample(as_rng(rng), check_count(n, "n", 2))
    e_pred = (np.asarray(predictor(x), dtype=float) - y) ** 2
    e_cm = (joint_sampler.conditional_mean(x) - y) ** 2
    diff = e_pred - e_cm
    slack = n_se * diff.std(ddof=1) / np.sqrt(n)
    if diff.mean() < -slack:
        raise OracleError(f"conditional mean lost to the predictor by {-diff.mean():.3g} "
                          f"(slack {slack:.3g})")
    return float(e_pred.mean()), float(e_cm.mean())
