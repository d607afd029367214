"""Generative-model interface and shared density helpers.

Every model stores its parameters in a :class:`~alws.autodiff.ParamVector`
and writes its log densities with the primitives of :mod:`alws.autodiff`.
Densities take a dict of named parameters (either autodiff nodes or plain
arrays) and batched latents ``Z`` of shape ``(n, dim_z)`` and observations
``X`` of shape ``(n, dim_x)``, and return one value per row.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .. import autodiff as ad
from .._validation import as_rng

LOG_2PI = float(np.log(2.0 * np.pi))


class CapabilityError(TypeError):
    """The model does not provide the requested structure."""


class OutOfSupport(float):
    """Negative-infinity log density carrying the reason the point was rejected."""

    def __new__(cls, message):
        obj = super().__new__(cls, -np.inf)
        obj.message = message
        obj.error = True
        return obj


# --------------------------------------------------------------------------- #
# density helpers (work on nodes and arrays alike)

def gauss_logpdf(x, mu, log_sd):
    """Row sums of independent normal log densities; ``log_sd`` broadcasts against ``mu``."""
    prec = ad.exp(ad.mul(-2.0, log_sd))
    r = ad.sub(x, mu)
    per = ad.sub(ad.mul(-0.5, ad.mul(ad.square(r), prec)), ad.add(log_sd, 0.5 * LOG_2PI))
    return ad.sum(_broadcast_rows(per, x), axis=1)


def _broadcast_rows(per, x):
    """Make sure ``per`` has the ``(n, d)`` shape of ``x`` before a row sum."""
    shape = np.shape(ad.value_of(x))
    if np.shape(ad.value_of(per)) == shape:
        return per
    return ad.add(per, np.zeros(shape))


def gauss_natural(mu, log_sd):
    """Natural parameters ``[mu/s^2, -1/(2 s^2)]`` and log normaliser of a diagonal normal."""
    prec = ad.exp(ad.mul(-2.0, log_sd))
    prec = _broadcast_rows(prec, mu)
    eta = ad.concat([ad.mul(mu, prec), ad.mul(-0.5, prec)], axis=1)
    log_z = ad.sum(ad.add(ad.mul(0.5, ad.mul(ad.square(mu), prec)),
                          _broadcast_rows(ad.add(log_sd, 0.5 * LOG_2PI), mu)), axis=1)
    return eta, log_z


def gauss_suff_stats(X):
    X = np.asarray(X, dtype=float)
    return np.concatenate([X, X * X], axis=1)


def bernoulli_logpmf(x, logits):
    return ad.sum(ad.sub(ad.mul(x, logits), ad.softplus(logits)), axis=1)


def mlp(x, layers, activation=ad.tanh):
    """Fully connected network; ``layers`` is a list of ``(W, b)`` with ``W`` of shape (out, in)."""
    h = x
    for i, (W, b) in enumerate(layers):
        h = ad.add(ad.matmul(h, ad.transpose(W)), b)
        if i < len(layers) - 1:
            h = activation(h)
    return h


def init_mlp(rng, sizes, prefix):
    """Glorot-style initialisation keyed ``{prefix}W{i}`` / ``{prefix}b{i}``."""
    out = {}
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        out[f"{prefix}W{i}"] = rng.normal(0.0, np.sqrt(1.0 / n_in), size=(n_out, n_in))
        out[f"{prefix}b{i}"] = np.zeros(n_out)
    return out


def mlp_layers(p, prefix, n_layers):
    return [(p[f"{prefix}W{i}"], p[f"{prefix}b{i}"]) for i in range(n_layers)]


# --------------------------------------------------------------------------- #
# interface

class GenerativeModel:
    """Base class for latent-variable models ``p(z, x) = p(z) p(x | z)``.

    Subclasses define ``dim_z``, ``dim_x``, :meth:`init_params`,
    :meth:`sample_latents`, :meth:`sample_obs`, :meth:`log_prior` and
    :meth:`log_lik`.  Models with an exponential-family likelihood set
    ``has_exp_fam`` and implement :meth:`natural_params`, :meth:`log_partition`
    and :meth:`suff_stats`.
    """

    name = "model"
    has_exp_fam = False
    dynamical = False
    noise_params: tuple = ()

    dim_z: int
    dim_x: int

    # -- parameters ------------------------------------------------------- #
    @cached_property
    def param_layout(self):
        return self.init_params(np.random.default_rng(0)).layout

    def init_params(self, rng=None) -> ad.ParamVector:
        raise NotImplementedError

    def check_params(self, theta: ad.ParamVector):
        if not np.all(np.isfinite(theta.data)):
            raise ValueError(f"{self.name}: parameters contain non-finite values")
        if theta.layout != self.param_layout:
            raise ValueError(f"{self.name}: parameter layout does not match the model")

    def overdisperse(self, theta: ad.ParamVector, factor=3.0) -> ad.ParamVector:
        """Scale the observation-noise standard deviations by ``factor``."""
        if factor <= 0:
            raise ValueError("overdispersion factor must be positive")
        updates = {name: theta[name] + np.log(factor) for name in self.noise_params}
        return theta.replace(**updates) if updates else theta

    # -- sampling ---------------------------------------------------------- #
    def sample_latents(self, theta, rng, n):
        raise NotImplementedError

    def sample_obs(self, theta, Z, rng):
        raise NotImplementedError

    def sample(self, theta, rng, n):
        self.check_params(theta)
        rng = as_rng(rng)
        Z = self.sample_latents(theta, rng, n)
        return Z, self.sample_obs(theta, Z, rng)

    # -- densities --------------------------------------------------------- #
    def log_prior(self, p, Z):
        raise NotImplementedError

    def log_lik(self, p, Z, X):
        raise NotImplementedError

    def log_joint(self, p, Z, X):
        return ad.add(self.log_prior(p, Z), self.log_lik(p, Z, X))

    def log_penalty(self, p):
        """Log prior on the parameters themselves (0 unless the model adds one)."""
        return 0.0

    def in_support(self, Z):
        """Boolean mask of rows of ``Z`` inside the latent support."""
        return np.all(np.isfinite(Z), axis=1)

    # -- exponential family ------------------------------------------------ #
    def natural_params(self, p, Z):
        raise CapabilityError(f"{self.name} has no exponential-family likelihood")

    def log_partition(self, p, Z):
        raise CapabilityError(f"{self.name} has no exponential-family likelihood")

    def suff_stats(self, X):
        raise CapabilityError(f"{self.name} has no exponential-family likelihood")

    def log_norm(self, p, Z):
        """``log Z(z) - log p(z)``: the combined regression target next to ``eta``."""
        return ad.sub(self.log_partition(p, Z), self.log_prior(p, Z))

    # -- conveniences ------------------------------------------------------ #
    def evaluate(self, theta, Z, X):
        """Plain-array log joint of each row."""
        return np.asarray(self.log_joint(theta.unpack(), _rows(Z, self.dim_z), _rows(X, self.dim_x)))

    def obs_mean(self, p, Z):
        """Expected observation given latents, used for reconstructions."""
        raise CapabilityError(f"{self.name} does not expose an observation mean")

    def __repr__(self):
        return f"{type(self).__name__}(dim_z={self.dim_z}, dim_x={self.dim_x})"


def _rows(A, d):
    A = np.asarray(A, dtype=float)
    return A.reshape(-1, d) if A.ndim < 2 else A


@dataclass(frozen=True)
class ExpFamParts:
    natural_params: np.ndarray
    log_norm: float

    def __post_init__(self):
        if np.ndim(self.natural_params) != 1:
            raise ValueError("natural parameters must be a vector")


@dataclass(frozen=True)
class Trajectory:
    """Time-major latents and observations, with optional controls and hidden states."""

    latents: np.ndarray
    observations: np.ndarray
    controls: np.ndarray | None = None
    states: np.ndarray | None = None

    def __post_init__(self):
        for name in ("latents", "observations", "controls", "states"):
            value = getattr(self, name)
            if value is None:
                continue
            arr = np.asarray(value, dtype=float)
            if arr.ndim == 1:
                arr = arr[:, None]
            object.__setattr__(self, name, arr)
        T = self.observations.shape[0]
        if T < 1:
            raise ValueError("trajectory needs at least one time step")
        if self.latents.shape[0] != T:
            raise ValueError("latents and observations must share the time axis")
        if self.controls is not None and self.controls.shape[0] != T:
            raise ValueError("controls must have one row per time step")

    @property
    def T(self):
        return self.observations.shape[0]
