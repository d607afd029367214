"""Synthetic data sets with recorded seeds, plus a CSV loader."""
from __future__ import annotations

import numpy as np
from scipy import special

from .._validation import as_rng, check_count, check_positive
from .base import Trajectory


def load_csv(path):
    """Rows are observations; a header line is skipped when present."""
    with open(path) as fh:
        first = fh.readline()
    try:
        [float(v) for v in first.strip().split(",")]
        skip = 0
    except ValueError:
        skip = 1
    return np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2))


def pinwheel(rng=None, n_per_class=500, n_classes=5, radial_std=0.3, tangential_std=0.05,
             rate=0.25):
    """Spiral-armed mixture of distorted Gaussians, shape ``(n_classes * n_per_class, 2)``."""
    rng = as_rng(rng)
    rads = np.linspace(0, 2 * np.pi, n_classes, endpoint=False)
    feats = rng.standard_normal((n_classes * n_per_class, 2)) * np.array([radial_std, tangential_std])
    feats[:, 0] += 1.0
    labels = np.repeat(np.arange(n_classes), n_per_class)
    angles = rads[labels] + rate * np.exp(feats[:, 0])
    c, s = np.cos(angles), np.sin(angles)
    rot = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)   # (n, 2, 2)
    X = np.einsum("ni,nij->nj", feats, rot)
    return X[rng.permutation(X.shape[0])]


def orthonormal_basis(d, k, rng=None):
    rng = as_rng(rng)
    Q, R = np.linalg.qr(rng.standard_normal((d, k)))
    return Q * np.sign(np.diag(R))


def ica(n=20000, d=16, k=8, sigma=0.1, rng=None, basis=None):
    """Laplace sources through an orthonormal basis plus Gaussian noise.

    Returns ``(X, W_true)``.  ``basis`` replaces the random basis when given.
    """
    rng = as_rng(rng)
    W = orthonormal_basis(d, k, rng) if basis is None else np.asarray(basis, dtype=float)
    S = rng.laplace(0.0, 1.0, (check_count(n, "n"), W.shape[1]))
    return S @ W.T + sigma * rng.standard_normal((n, W.shape[0])), W


def gabor(n=1000, size=8, rng=None, wavelength=4.0, width=1.5):
    """Gabor patches with uniformly random orientation in ``[0, pi)``, flattened."""
    rng = as_rng(rng)
    theta = rng.uniform(0.0, np.pi, check_count(n, "n"))
    g = np.arange(size) - (size - 1) / 2
    yy, xx = np.meshgrid(g, g, indexing="ij")
    u = xx[None] * np.cos(theta)[:, None, None] + yy[None] * np.sin(theta)[:, None, None]
    env = np.exp(-0.5 * (xx ** 2 + yy ** 2) / width ** 2)
    return (env[None] * np.cos(2 * np.pi * u / wavelength)).reshape(n, size * size)


def oscillator_radius_fixed_point():
    """Positive fixed point of ``r(a) = sigmoid(4 (a - 0.3))``."""
    from scipy.optimize import brentq
    return brentq(lambda a: special.expit(4 * (a - 0.3)) - a, 0.5, 1.5)


def oscillator(T=30, rng=None, alpha=0.3, sigma_z=0.05, sigma_x=0.1, n_pixels=20,
               width=0.3, z0=None):
    """Rotating latent with radial contraction, rendered as a row of Gaussian bumps.

    Returns a :class:`Trajectory` with ``T`` rows of latents and pixels.
    """
    rng = as_rng(rng)
    T = check_count(T, "T", 1)
    c, s = np.cos(alpha), np.sin(alpha)
    R = np.array([[c, -s], [s, c]])
    centres = np.linspace(-1.0, 1.0, n_pixels)
    z = np.array([1.0, 0.0]) if z0 is None else np.asarray(z0, dtype=float)
    Z = np.empty((T, 2))
    for t in range(T):
        if t > 0:
            norm = np.linalg.norm(z)
            z = R @ z * special.expit(4 * (norm - 0.3)) / norm + sigma_z * rng.standard_normal(2)
        Z[t] = z
    X = np.exp(-0.5 * (Z[:, :1] - centres[None]) ** 2 / width ** 2)
    return Trajectory(Z, X + sigma_x * rng.standard_normal(X.shape))


def hh_current(T, rng=None, base=0.0, amplitude=6.0, noise=1.0, onset=0.1):
    """Noisy step current switched on after ``onset * T`` steps."""
    rng = as_rng(rng)
    I = np.full(check_count(T, "T", 1), float(base))
    I[int(onset * T):] += amplitude
    return I + noise * rng.standard_normal(T)


def normalise_unit(x):
    """Scale a positive series into ``(0, 1]`` by its maximum."""
    x = np.asarray(x, dtype=float)
    check_positive(float(np.max(x)), "series maximum")
    return x / np.max(x)
