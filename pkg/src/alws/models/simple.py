"""Static (non-temporal) models of the zoo."""
from __future__ import annotations

import numpy as np
from scipy import special

from .. import autodiff as ad
from .._validation import as_rng, check_count, check_positive
from .base import (LOG_2PI, GenerativeModel, bernoulli_logpmf, gauss_logpdf, gauss_natural,
                   gauss_suff_stats, init_mlp, mlp, mlp_layers)


def _std_normal_logpdf(Z):
    d = np.shape(ad.value_of(Z))[1]
    return ad.sub(ad.mul(-0.5, ad.sum(ad.square(Z), axis=1)), 0.5 * d * LOG_2PI)


class ToySoftplus(GenerativeModel):
    """``z ~ N(0, I_2)``, ``x | z ~ N(softplus(b . z) - ||b||^2, sigma_x^2)``.

    Parameters
    ----------
    b : sequence of 2 floats, default=(1, 1)
        Initial weight vector.
    sigma_x : float, default=0.1
        Initial observation noise.
    """

    name = "toy_softplus"
    has_exp_fam = True
    noise_params = ("log_sx",)
    dim_z, dim_x = 2, 1

    def __init__(self, b=(1.0, 1.0), sigma_x=0.1):
        self.b = np.asarray(b, dtype=float)
        if self.b.shape != (2,):
            raise ValueError("b must have two entries")
        self.sigma_x = check_positive(sigma_x, "sigma_x")

    def init_params(self, rng=None):
        return ad.ParamVector.pack({"b": self.b, "log_sx": np.log(self.sigma_x)})

    def sample_latents(self, theta, rng, n):
        return rng.standard_normal((check_count(n, "n"), 2))

    def _mean(self, p, Z):
        b = p["b"]
        mu = ad.sub(ad.softplus(ad.matmul(Z, b)), ad.sum(ad.square(b)))
        return ad.reshape(mu, (-1, 1))

    def sample_obs(self, theta, Z, rng):
        p = theta.unpack()
        mu = self._mean(p, Z)
        return mu + np.exp(p["log_sx"]) * rng.standard_normal(mu.shape)

    def log_prior(self, p, Z):
        return _std_normal_logpdf(Z)

    def log_lik(self, p, Z, X):
        return gauss_logpdf(X, self._mean(p, Z), p["log_sx"])

    def natural_params(self, p, Z):
        return gauss_natural(self._mean(p, Z), p["log_sx"])[0]

    def log_partition(self, p, Z):
        return gauss_natural(self._mean(p, Z), p["log_sx"])[1]

    def suff_stats(self, X):
        return gauss_suff_stats(X)

    obs_mean = _mean


class LinearGaussian(GenerativeModel):
    """``z ~ N(0, I)``, ``x | z ~ N(W z + c, diag(exp(2 log_sx)))``.

    The marginal of ``x`` is Gaussian, which gives an exact likelihood and
    gradient to compare against.
    """

    name = "linear_gaussian"
    has_exp_fam = True
    noise_params = ("log_sx",)

    def __init__(self, dim_z=2, dim_x=5):
        self.dim_z = check_count(dim_z, "dim_z", 1)
        self.dim_x = check_count(dim_x, "dim_x", 1)

    def init_params(self, rng=None):
        rng = as_rng(0 if rng is None else rng)
        return ad.ParamVector.pack({
            "W": rng.normal(0.0, 1.0, (self.dim_x, self.dim_z)),
            "c": rng.normal(0.0, 0.5, self.dim_x),
            "log_sx": rng.uniform(np.log(0.3), np.log(1.0), self.dim_x),
        })

    def sample_latents(self, theta, rng, n):
        return rng.standard_normal((check_count(n, "n"), self.dim_z))

    def _mean(self, p, Z):
        return ad.add(ad.matmul(Z, ad.transpose(p["W"])), p["c"])

    def sample_obs(self, theta, Z, rng):
        p = theta.unpack()
        mu = self._mean(p, Z)
        return mu + np.exp(p["log_sx"]) * rng.standard_normal(mu.shape)

    def log_prior(self, p, Z):
        return _std_normal_logpdf(Z)

    def log_lik(self, p, Z, X):
        return gauss_logpdf(X, self._mean(p, Z), p["log_sx"])

    def natural_params(self, p, Z):
        return gauss_natural(self._mean(p, Z), p["log_sx"])[0]

    def log_partition(self, p, Z):
        return gauss_natural(self._mean(p, Z), p["log_sx"])[1]

    def suff_stats(self, X):
        return gauss_suff_stats(X)

    obs_mean = _mean


class Circular(GenerativeModel):
    """Uniform angle ``a``, latent ``z = (cos a, sin a)``, ``x | z ~ N(NN(z), sigma_x^2 I)``."""

    name = "circular"
    has_exp_fam = True
    noise_params = ("log_sx",)
    dim_z = 2

    def __init__(self, dim_x=64, hidden=20, sigma_x=0.1):
        self.dim_x = check_count(dim_x, "dim_x", 1)
        self.hidden = check_count(hidden, "hidden", 1)
        self.sigma_x = check_positive(sigma_x, "sigma_x")

    def init_params(self, rng=None):
        rng = as_rng(0 if rng is None else rng)
        p = init_mlp(rng, [2, self.hidden, self.dim_x], "dec_")
        p["log_sx"] = np.log(self.sigma_x)
        return ad.ParamVector.pack(p)

    def sample_latents(self, theta, rng, n):
        a = rng.uniform(-np.pi, np.pi, check_count(n, "n"))
        return np.stack([np.cos(a), np.sin(a)], axis=1)

    def in_support(self, Z):
        return np.abs(np.hypot(Z[:, 0], Z[:, 1]) - 1.0) < 1e-8

    def _mean(self, p, Z):
        return mlp(Z, mlp_layers(p, "dec_", 2))

    def sample_obs(self, theta, Z, rng):
        p = theta.unpack()
        mu = self._mean(p, Z)
        return mu + np.exp(p["log_sx"]) * rng.standard_normal(mu.shape)

    def log_prior(self, p, Z):
        return np.full(np.shape(ad.value_of(Z))[0], -LOG_2PI)

    def log_lik(self, p, Z, X):
        return gauss_logpdf(X, self._mean(p, Z), p["log_sx"])

    def natural_params(self, p, Z):
        return gauss_natural(self._mean(p, Z), p["log_sx"])[0]

    def log_partition(self, p, Z):
        return gauss_natural(self._mean(p, Z), p["log_sx"])[1]

    def suff_stats(self, X):
        return gauss_suff_stats(X)

    obs_mean = _mean


class IcaLaplace(GenerativeModel):
    """Laplace sources mixed linearly: ``z_i ~ Lap(0, 1)``, ``x | z ~ N(W z, sigma^2 I)``.

    Only the basis ``W`` is learned; ``sigma`` is fixed.
    """

    name = "ica_laplace"
    has_exp_fam = True

    def __init__(self, dim_x=16, dim_z=8, sigma=0.1):
        self.dim_x = check_count(dim_x, "dim_x", 1)
        self.dim_z = check_count(dim_z, "dim_z", 1)
        self.sigma = check_positive(sigma, "sigma")

    def init_params(self, rng=None):
        rng = as_rng(0 if rng is None else rng)
        return ad.ParamVector.pack({"W": rng.normal(0.0, 1.0 / np.sqrt(self.dim_x),
                                                    (self.dim_x, self.dim_z))})

    def sample_latents(self, theta, rng, n):
        return rng.laplace(0.0, 1.0, (check_count(n, "n"), self.dim_z))

    def _mean(self, p, Z):
        return ad.matmul(Z, ad.transpose(p["W"]))

    def _log_sd(self):
        return np.full(self.dim_x, np.log(self.sigma))

    def sample_obs(self, theta, Z, rng):
        mu = self._mean(theta.unpack(), Z)
        return mu + self.sigma * rng.standard_normal(mu.shape)

    def log_prior(self, p, Z):
        return ad.sub(ad.mul(-1.0, ad.sum(ad.absolute(Z), axis=1)), self.dim_z * np.log(2.0))

    def log_lik(self, p, Z, X):
        return gauss_logpdf(X, self._mean(p, Z), self._log_sd())

    def natural_params(self, p, Z):
        return gauss_natural(self._mean(p, Z), self._log_sd())[0]

    def log_partition(self, p, Z):
        return gauss_natural(self._mean(p, Z), self._log_sd())[1]

    def suff_stats(self, X):
        return gauss_suff_stats(X)

    obs_mean = _mean


class MatFact(GenerativeModel):
    """Non-negative factorisation with uniform latents and Bernoulli pixels.

    ``z_i ~ U(0, 1)``, ``x_j ~ Bernoulli(sigmoid(w_j . logit(z) + b_j))`` with
    ``W = exp(log_W)`` kept positive and a Gamma log-density penalty on its
    entries.
    """

    name = "mat_fact"
    has_exp_fam = True
    uniform_latents = True

    def __init__(self, dim_x=16, dim_z=4, gamma_shape=0.9, gamma_rate=0.3):
        self.dim_x = check_count(dim_x, "dim_x", 1)
        self.dim_z = check_count(dim_z, "dim_z", 1)
        self.gamma_shape = check_positive(gamma_shape, "gamma_shape")
        self.gamma_rate = check_positive(gamma_rate, "gamma_rate")

    def init_params(self, rng=None):
        rng = as_rng(0 if rng is None else rng)
        return ad.ParamVector.pack({
            "log_W": np.log(rng.gamma(2.0, 0.5, (self.dim_x, self.dim_z))),
            "b": rng.normal(0.0, 0.5, self.dim_x),
        })

    def in_support(self, Z):
        return np.all((Z > 0) & (Z < 1), axis=1)

    def sample_latents(self, theta, rng, n):
        # keep clear of the open interval's end points so logit(z) stays finite
        return np.clip(rng.uniform(0.0, 1.0, (check_count(n, "n"), self.dim_z)), 1e-12, 1 - 1e-12)

    def logits(self, p, Z):
        u = ad.sub(ad.log(Z), ad.log(ad.sub(1.0, Z)))
        return ad.add(ad.matmul(u, ad.transpose(ad.exp(p["log_W"]))), p["b"])

    def obs_mean(self, p, Z):
        return ad.sigmoid(self.logits(p, Z))

    def sample_obs(self, theta, Z, rng):
        prob = special.expit(self.logits(theta.unpack(), Z))
        return (rng.uniform(size=prob.shape) < prob).astype(float)

    def log_prior(self, p, Z):
        return np.zeros(np.shape(ad.value_of(Z))[0])

    def log_lik(self, p, Z, X):
        return bernoulli_logpmf(X, self.logits(p, Z))

    def log_penalty(self, p):
        a, r = self.gamma_shape, self.gamma_rate
        lw = p["log_W"]
        return ad.sum(ad.sub(ad.mul(a - 1.0, lw), ad.mul(r, ad.exp(lw))))

    def natural_params(self, p, Z):
        return self.logits(p, Z)

    def log_partition(self, p, Z):
        return ad.sum(ad.softplus(self.logits(p, Z)), axis=1)

    def suff_stats(self, X):
        return np.asarray(X, dtype=float)
