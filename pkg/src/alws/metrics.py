"""Evaluation quantities: unbiased MMD^2, cosine similarity, basis matching, trajectory errors."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from ._validation import as_observations, as_rng, check_count
from .models import Trajectory
from .oracles import map_latent

LINEAR = "linear"


@dataclass(frozen=True)
class MMDResult:
    """Unbiased squared MMD between two samples.

    ``mmd2`` is the U-statistic and can be negative.  ``kernel`` is the
    :class:`~alws.kernels.KernelParams`, the string ``"linear"`` or the
    callable that was used.  ``bootstrap_p`` is filled in by
    :func:`mmd_compare`.
    """

    mmd2: float
    n_x: int
    n_y: int
    kernel: object
    bootstrap_p: float | None = None


def _kernel_matrix(kernel, A, B):
    if isinstance(kernel, kernels.KernelParams):
        return kernels.cross_matrix(kernel, A, B)
    if kernel == LINEAR:
        return A @ B.T
    return np.asarray(kernel(A, B), dtype=float)


def pooled_median_kernel(X, Y, max_points=2000):
    """Gaussian kernel whose bandwidth is the median distance of the pooled sample."""
    pooled = np.vstack([as_observations(X), as_observations(Y)])
    sigma = kernels.median_heuristic(kernels.KernelParams(), pooled, max_points=max_points)
    return kernels.KernelParams.with_bandwidth(sigma)


def _u_stat(Kxx, Kyy, Kxy):
    n, m = Kxx.shape[0], Kyy.shape[0]
    xx = (Kxx.sum() - np.trace(Kxx)) / (n * (n - 1))
    yy = (Kyy.sum() - np.trace(Kyy)) / (m * (m - 1))
    if n == m:
        # paired samples: the one-sample U-statistic also drops i == j cross terms
        xy = (Kxy.sum() - np.trace(Kxy)) / (n * (n - 1))
    else:
        xy = Kxy.mean()
    return float(xx + yy - 2.0 * xy)


def mmd2_unbiased(X, Y, kernel=None) -> MMDResult:
    """Unbiased estimate of ``MMD^2`` with diagonal terms excluded.

    With equal sample sizes the rows are paired and the cross term also
    skips ``i == j``, so ``mmd2_unbiased(X, X)`` is exactly zero.  With
    unequal sizes every cross pair is used.

    Parameters
    ----------
    X : array-like of shape (n_x, d)
    Y : array-like of shape (n_y, d)
    kernel : KernelParams, "linear", callable or None
        ``None`` uses a Gaussian kernel with the median-heuristic bandwidth
        of the pooled sample.  A callable maps two arrays to a kernel matrix.
    """
    X = as_observations(X, "X", min_samples=2)
    Y = as_observations(Y, "Y", min_samples=2)
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if kernel is None:
        kernel = pooled_median_kernel(X, Y)
    mmd2 = _u_stat(_kernel_matrix(kernel, X, X), _kernel_matrix(kernel, Y, Y),
                   _kernel_matrix(kernel, X, Y))
    return MMDResult(mmd2, X.shape[0], Y.shape[0], kernel)


def mmd_compare(data, A, B, kernel=None, n_boot=500, rng=None):
    """Compare how close two model samples are to the data.

    Returns ``(result_a, result_b)`` with a shared ``bootstrap_p``: the
    fraction of bootstrap resamples in which ``mmd2(data, A) >= mmd2(data, B)``.
    Small values mean ``A`` is closer to the data than ``B``.
    """
    data, A, B = (as_observations(v, name, 2) for v, name in ((data, "data"), (A, "A"), (B, "B")))
    if kernel is None:
        kernel = pooled_median_kernel(data, np.vstack([A, B]))
    n, na, nb = data.shape[0], A.shape[0], B.shape[0]
    Kdd = _kernel_matrix(kernel, data, data)
    Kaa, Kbb = _kernel_matrix(kernel, A, A), _kernel_matrix(kernel, B, B)
    Kda, Kdb = _kernel_matrix(kernel, data, A), _kernel_matrix(kernel, data, B)
    ma, mb = _u_stat(Kdd, Kaa, Kda), _u_stat(Kdd, Kbb, Kdb)

    def within(K, idx, c):
        m = idx.size
        return (c @ K @ c - c @ np.diag(K)) / (m * (m - 1))

    def between(K, i, j, ci, cj):
        if i.size == j.size:
            return (ci @ K @ cj - K[i, j].sum()) / (i.size * (i.size - 1))
        return ci @ K @ cj / (i.size * j.size)

    # a resample is encoded by multiplicities, so each statistic costs a few
    # matrix-vector products; repeated points count as distinct draws
    rng = as_rng(rng)
    hits = 0
    n_boot = check_count(n_boot, "n_boot", 1)
    for _ in range(n_boot):
        d, a, b = rng.integers(0, n, n), rng.integers(0, na, na), rng.integers(0, nb, nb)
        cd, ca, cb = (np.bincount(v, minlength=m).astype(float)
                      for v, m in ((d, n), (a, na), (b, nb)))
        base = within(Kdd, d, cd)
        ba = base + within(Kaa, a, ca) - 2.0 * between(Kda, d, a, cd, ca)
        bb = base + within(Kbb, b, cb) - 2.0 * between(Kdb, d, b, cd, cb)
        hits += ba >= bb
    p = float(hits / n_boot)
    ra = MMDResult(ma, n, na, kernel, p)
    return ra, replace(ra, mmd2=mb, n_y=nb)


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def basis_match(W_true, W_est):
    """Greedy matching of estimated to true basis vectors by absolute correlation.

    Returns
    -------
    mean_abs_corr : float
    permutation : ndarray of int
        ``permutation[j]`` is the column of ``W_est`` matched to true column ``j``.
    signs : ndarray
        ``+1`` or ``-1`` so that ``signs[j] * W_est[:, permutation[j]]``
        correlates positively with ``W_true[:, j]``.
    """
    W_true = np.asarray(W_true, dtype=float)
    W_est = np.asarray(W_est, dtype=float)
    if W_true.ndim != 2 or W_est.ndim != 2:
        raise ValueError("bases must be 2-D (d, k) arrays")
    if W_true.shape != W_est.shape:
        raise ValueError(f"basis shapes differ: {W_true.shape} vs {W_est.shape}")
    if np.any(W_true.std(axis=0) == 0) or np.any(W_est.std(axis=0) == 0):
        raise ValueError("basis columns must not be constant")
    k = W_true.shape[1]
    C = np.corrcoef(W_true.T, W_est.T)[:k, k:]
    A = np.abs(C)
    perm = np.empty(k, dtype=int)
    free_t, free_e = np.ones(k, bool), np.ones(k, bool)
    for _ in range(k):
        masked = np.where(free_t[:, None] & free_e[None, :], A, -1.0)
        j, i = np.unravel_index(np.argmax(masked), A.shape)
        perm[j] = i
        free_t[j] = free_e[i] = False
    matched = C[np.arange(k), perm]
    signs = np.where(matched < 0, -1.0, 1.0)
    return float(np.abs(matched).mean()), perm, signs


def traj_mse(pred, ref) -> float:
    """Mean squared error over every time step and observation dimension."""
    P = pred.observations if isinstance(pred, Trajectory) else np.asarray(pred, dtype=float)
    R = ref.observations if isinstance(ref, Trajectory) else np.asarray(ref, dtype=float)
    if P.shape != R.shape:
        raise ValueError(f"trajectory shapes differ: {P.shape} vs {R.shape}")
    return float(np.mean((P - R) ** 2))


def one_step_ahead_mse(model, theta, observations, init_z=None, steps=300):
    """Observation MSE of ``x_{t+1}`` predicted from the MAP latent path at ``t``.

    The latent path is the mode of ``p(z_{1:T} | x_{1:T})`` found by
    :func:`alws.oracles.map_latent`, started from ``init_z`` (zeros when
    omitted).
    """
    X = np.asarray(observations, dtype=float).reshape(model.T, model.d_obs)
    z0 = np.zeros(model.dim_z) if init_z is None else init_z
    res = map_latent(model, theta, X.ravel(), z0, steps=steps)
    pred = model.one_step_predictions(theta.unpack(), res.z)
    return float(np.mean((pred - X[1:]) ** 2))
