"""Squared-exponential kernels on (optionally projected) observations.

``k(x, x') = exp(-0.5 * ||phi(x) - phi(x')||^2 / sigma^2)`` where ``phi`` is the
identity, a linear projection, or a linear projection followed by a frozen
batch normalisation.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.distance import pdist
from sklearn.metrics.pairwise import euclidean_distances

from . import autodiff as ad

IDENTITY = "identity"
LINEAR = "linear"
LINEAR_BN = "linear-bn"


@dataclass(frozen=True)
class FeatureMap:
    """Feature map applied to observations before the kernel.

    Parameters
    ----------
    variant : {"identity", "linear", "linear-bn"}
    weights : ndarray of shape (d_out, d_x), optional
        Projection weights for the linear variants.
    running_mean, running_var : ndarray of shape (d_out,), optional
        Batch-normalisation statistics. They are only changed by
        :meth:`update_stats`, never during evaluation.
    eps : float
    momentum : float
        Weight given to a new batch when updating the running statistics.
    """

    variant: str = IDENTITY
    weights: np.ndarray | None = None
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None
    eps: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        if self.variant not in (IDENTITY, LINEAR, LINEAR_BN):
            raise ValueError(f"unknown feature map variant {self.variant!r}")
        if self.variant == IDENTITY:
            return
        if self.weights is None or np.ndim(self.weights) != 2 or np.shape(self.weights)[0] < 1:
            raise ValueError("linear feature maps need a (d_out, d_x) weight matrix with d_out >= 1")
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if self.variant == LINEAR_BN:
            d_out = self.weights.shape[0]
            mean = np.zeros(d_out) if self.running_mean is None else np.asarray(self.running_mean, float)
            var = np.ones(d_out) if self.running_var is None else np.asarray(self.running_var, float)
            if np.any(var <= 0):
                raise ValueError("batch-norm running variance must be positive")
            object.__setattr__(self, "running_mean", mean)
            object.__setattr__(self, "running_var", var)

    @classmethod
    def random_projection(cls, d_x, d_out, rng, batchnorm=False, **kwargs):
        """Gaussian projection with entry variance ``1/d_x``."""
        w = rng.normal(0.0, 1.0 / np.sqrt(d_x), size=(d_out, d_x))
        return cls(LINEAR_BN if batchnorm else LINEAR, w, **kwargs)

    @property
    def d_in(self):
        return None if self.weights is None else self.weights.shape[1]

    def __call__(self, X, weights=None):
        """Map an ``(n, d_x)`` array; ``weights`` may be an autodiff node."""
        if self.variant == IDENTITY:
            return X
        w = self.weights if weights is None else weights
        F = ad.matmul(X, ad.transpose(w)) if isinstance(w, ad.Node) else X @ w.T
        if self.variant == LINEAR_BN:
            F = (F - self.running_mean) / np.sqrt(self.running_var + self.eps)
        return F

    def update_stats(self, X) -> "FeatureMap":
        """Blend batch statistics of the projected ``X`` into the running ones."""
        if self.variant != LINEAR_BN:
            return self
        F = np.asarray(X) @ self.weights.T
        m = self.momentum
        return replace(self,
                       running_mean=(1 - m) * self.running_mean + m * F.mean(axis=0),
                       running_var=(1 - m) * self.running_var + m * F.var(axis=0))

    def to_json(self):
        out = {"variant": self.variant, "eps": self.eps, "momentum": self.momentum}
        if self.weights is not None:
            out["weights"] = self.weights.tolist()
        if self.variant == LINEAR_BN:
            out["running_mean"] = self.running_mean.tolist()
            out["running_var"] = self.running_var.tolist()
        return out

    @classmethod
    def from_json(cls, obj):
        return cls(obj["variant"],
                   None if "weights" not in obj else np.asarray(obj["weights"]),
                   None if "running_mean" not in obj else np.asarray(obj["running_mean"]),
                   None if "running_var" not in obj else np.asarray(obj["running_var"]),
                   obj.get("eps", 1e-5), obj.get("momentum", 0.1))


@dataclass(frozen=True)
class KernelParams:
    log_bandwidth: float = 0.0
    feature_map: FeatureMap = field(default_factory=FeatureMap)

    @property
    def bandwidth(self):
        return float(np.exp(self.log_bandwidth))

    @classmethod
    def with_bandwidth(cls, sigma, feature_map=None):
        if not sigma > 0:
            raise ValueError(f"bandwidth must be positive, got {sigma}")
        return cls(float(np.log(sigma)), feature_map or FeatureMap())

    def to_json(self):
        return {"log_bandwidth": self.log_bandwidth, "feature_map": self.feature_map.to_json()}

    @classmethod
    def from_json(cls, obj):
        return cls(float(obj["log_bandwidth"]), FeatureMap.from_json(obj["feature_map"]))


def _as_2d(X, d_in=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]  # a 1-D array is a batch of scalar observations
    if X.ndim != 2:
        raise ValueError(f"expected a vector or an (n, d) array, got shape {X.shape}")
    if d_in is not None and X.shape[1] != d_in:
        raise ValueError(f"observation dimension {X.shape[1]} does not match kernel input {d_in}")
    return X


def sq_dists(params: KernelParams, A, B=None):
    fm = params.feature_map
    FA = fm(_as_2d(A, fm.d_in))
    FB = FA if B is None else fm(_as_2d(B, fm.d_in))
    if FA.shape[1] != FB.shape[1]:
        raise ValueError(f"dimension mismatch: {FA.shape[1]} vs {FB.shape[1]}")
    # BLAS-based expansion; the diagonal is exactly zero when B is omitted
    return euclidean_distances(FA, None if B is None else FB, squared=True)


def eval(params: KernelParams, x, x_prime) -> float:  # noqa: A001
    x, x_prime = np.atleast_1d(x), np.atleast_1d(x_prime)
    if x.shape != x_prime.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x_prime.shape}")
    return float(cross(params, x[None, :], x_prime)[0])


def gram(params: KernelParams, X) -> np.ndarray:
    X = _as_2d(X)
    return np.exp(-0.5 * sq_dists(params, X) / params.bandwidth ** 2)


def cross_matrix(params: KernelParams, X, Xstar) -> np.ndarray:
    """``(n_train, n_star)`` matrix of kernel values."""
    return np.exp(-0.5 * sq_dists(params, X, Xstar) / params.bandwidth ** 2)


def cross(params: KernelParams, X, x_star) -> np.ndarray:
    x_star = np.atleast_1d(np.asarray(x_star, dtype=float))
    if x_star.ndim != 1:
        raise ValueError("cross takes a single observation; use cross_matrix for batches")
    fm = params.feature_map
    FX = fm(_as_2d(X, fm.d_in))
    fs = fm(_as_2d(x_star[None, :], fm.d_in))
    if FX.shape[1] != fs.shape[1]:
        raise ValueError(f"dimension mismatch: {FX.shape[1]} vs {fs.shape[1]}")
    # explicit differences so that coincident points give exactly 1
    d2 = np.sum((FX - fs) ** 2, axis=1)
    return np.exp(-0.5 * d2 / params.bandwidth ** 2)


def median_heuristic(params: KernelParams, X, max_points=None, rng=None) -> float:
    """Median pairwise Euclidean distance in feature space.

    ``max_points`` optionally restricts the computation to a random subset.
    """
    X = _as_2d(X)
    if max_points is not None and X.shape[0] > max_points:
        rng = np.random.default_rng(0) if rng is None else rng
        X = X[rng.choice(X.shape[0], max_points, replace=False)]
    F = params.feature_map(X)
    if F.shape[0] < 2:
        raise ValueError("median heuristic needs at least two points")
    med = float(np.median(pdist(F)))
    if not med > 0:
        raise ValueError("median pairwise distance is zero; all points coincide")
    return med


# --------------------------------------------------------------------------- #
# differentiable variants used for hyperparameter adaptation

def gram_node(params: KernelParams, X, log_bandwidth, weights=None):
    """Gram matrix as an autodiff expression of the log-bandwidth (and projection)."""
    scale = ad.exp(ad.mul(-2.0, log_bandwidth))
    if weights is None:
        return ad.exp(ad.mul(-0.5 * sq_dists(params, X), scale))
    F = params.feature_map(_as_2d(X), weights)
    return ad.exp(ad.mul(-0.5 * _sq_dists_node(F, F), scale))


def cross_node(params: KernelParams, X, Xstar, log_bandwidth, weights=None):
    scale = ad.exp(ad.mul(-2.0, log_bandwidth))
    if weights is None:
        return ad.exp(ad.mul(-0.5 * sq_dists(params, X, Xstar), scale))
    FA = params.feature_map(_as_2d(X), weights)
    FB = params.feature_map(_as_2d(Xstar), weights)
    return ad.exp(ad.mul(-0.5 * _sq_dists_node(FA, FB), scale))


def _sq_dists_node(FA, FB):
    na = ad.sum(ad.square(FA), axis=1)
    nb = ad.sum(ad.square(FB), axis=1)
    inner = ad.matmul(FA, ad.transpose(FB))
    d = ad.add(ad.sub(ad.reshape(na, (-1, 1)), ad.mul(2.0, inner)), ad.reshape(nb, (1, -1)))
    return ad.relu(d)
