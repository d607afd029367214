"""Model zoo and functional entry points.

>>> from alws import models
>>> m = models.make_model("toy_softplus")
>>> Z, X = models.sample(m, m.init_params(), seed=0, n=3)
>>> X.shape
(3, 1)
"""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from .._validation import as_rng, check_count
from . import datasets
from .base import (CapabilityError, ExpFamParts, GenerativeModel, OutOfSupport, Trajectory,
                   gauss_logpdf)
from .dynamical import Blowfly, HodgkinHuxley, Oscillator, SimulationError
from .pinwheel import PinwheelHier
from .simple import Circular, IcaLaplace, LinearGaussian, MatFact, ToySoftplus

ZOO = {
    cls.name: cls
    for cls in (ToySoftplus, LinearGaussian, Circular, PinwheelHier, IcaLaplace, MatFact,
                Oscillator, HodgkinHuxley, Blowfly)
}

__all__ = [
    "ZOO", "make_model", "sample", "log_joint", "exp_fam_parts", "suff_stats", "simulate",
    "GenerativeModel", "ExpFamParts", "Trajectory", "CapabilityError", "OutOfSupport",
    "SimulationError", "datasets", "gauss_logpdf",
    *[c.__name__ for c in ZOO.values()],
]


def make_model(name, **kwargs) -> GenerativeModel:
    try:
        cls = ZOO[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(ZOO)}") from None
    if cls is HodgkinHuxley and "controls" not in kwargs:
        T = kwargs.pop("T", 200)
        kwargs["controls"] = datasets.hh_current(T, rng=kwargs.pop("current_seed", 0))
    return cls(**kwargs)


def _row(a, d):
    a = np.asarray(a, dtype=float)
    return a.reshape(1, d) if a.ndim < 2 else a


def sample(model, theta, seed=None, n=1):
    """``n`` joint draws ``(Z, X)``; identical seeds give identical arrays."""
    return model.sample(theta, as_rng(seed), check_count(n, "n"))


def log_joint(model, theta, z, x):
    """Differentiable ``log p(z, x)`` of a single pair as a scalar graph node.

    Latents outside the support give an :class:`OutOfSupport` value, a
    negative-infinity float carrying ``error`` and ``message`` attributes.
    """
    Z, X = _row(z, model.dim_z), _row(x, model.dim_x)
    if Z.shape[0] != 1 or X.shape[0] != 1:
        raise ValueError("log_joint takes a single (z, x) pair")
    if not model.in_support(Z)[0]:
        return OutOfSupport(f"latent outside the support of {model.name}")
    return ad.forward(lambda p: ad.sum(model.log_joint(p, Z, X)), theta)


def exp_fam_parts(model, theta, z) -> ExpFamParts:
    """Natural parameters ``eta(z)`` and ``Psi(z) = log Z(z) - log p(z)`` as plain values."""
    if not model.has_exp_fam:
        raise CapabilityError(f"{model.name} has no exponential-family likelihood")
    Z = _row(z, model.dim_z)
    p = theta.unpack()
    eta = np.asarray(model.natural_params(p, Z))[0]
    return ExpFamParts(eta, float(np.asarray(model.log_norm(p, Z))[0]))


def suff_stats(model, x):
    if not model.has_exp_fam:
        raise CapabilityError(f"{model.name} has no exponential-family likelihood")
    X = _row(x, model.dim_x)
    S = model.suff_stats(X)
    return S[0] if np.ndim(x) < 2 else S


def simulate(model, theta, seed=None, T=None, controls=None, **kwargs) -> Trajectory:
    if not model.dynamical:
        raise CapabilityError(f"{model.name} is not a dynamical model")
    return model.simulate(theta, as_rng(seed), T=T, controls=controls, **kwargs)
