"""Hierarchical mixture: categorical component, Gaussian latent, neural-network decoder."""
from __future__ import annotations

import numpy as np
from scipy import special

from .. import autodiff as ad
from .._validation import as_rng, check_count, check_positive
from .base import (LOG_2PI, GenerativeModel, gauss_logpdf, gauss_natural, gauss_suff_stats,
                   init_mlp, mlp, mlp_layers)


class PinwheelHier(GenerativeModel):
    """``k ~ Cat(softmax(m))``, ``z | k ~ N(mu_k, Sigma_k)``, ``x | z ~ N(NN(z), Sigma_x)``.

    Latents are stored as ``[k, z_1, ..., z_d]`` with the component index in
    the first column.  Each ``Sigma_k = L_k L_k^T`` uses a lower-triangular
    factor with log-diagonal entries (``chol_logdiag``) and strictly lower
    entries (``chol_off``).

    Parameters
    ----------
    n_components : int, default=10
    dim : int, default=2
        Dimension of both the continuous latent and the observation.
    hidden : int, default=20
        Width of the single tanh hidden layer of the decoder.
    dirichlet_alpha : float, default=0.999
        Concentration of the symmetric Dirichlet penalty on the mixture weights.
    penalty : float, default=1e-4
        Strength of the normal-inverse-Wishart-style penalty on component
        parameters and of the L2 penalty on decoder weights.
    """

    name = "pinwheel_hier"
    has_exp_fam = True
    noise_params = ("log_sx",)

    def __init__(self, n_components=10, dim=2, hidden=20, dirichlet_alpha=0.999,
                 penalty=1e-4, sigma_x=0.1):
        self.n_components = check_count(n_components, "n_components", 1)
        self.dim = check_count(dim, "dim", 1)
        self.hidden = check_count(hidden, "hidden", 1)
        self.dirichlet_alpha = check_positive(dirichlet_alpha, "dirichlet_alpha")
        self.penalty = float(penalty)
        self.sigma_x = check_positive(sigma_x, "sigma_x")
        self.dim_z = self.dim + 1
        self.dim_x = self.dim
        self._tril = np.tril_indices(self.dim, -1)

    def init_params(self, rng=None):
        rng = as_rng(0 if rng is None else rng)
        K, d = self.n_components, self.dim
        p = {
            "logits": np.zeros(K),
            "mu": rng.normal(0.0, 1.0, (K, d)),
            "chol_logdiag": np.full((K, d), np.log(0.5)),
            "chol_off": np.zeros((K, d * (d - 1) // 2)),
        }
        p.update(init_mlp(rng, [d, self.hidden, d], "dec_"))
        p["log_sx"] = np.full(d, np.log(self.sigma_x))
        return ad.ParamVector.pack(p)

    # -- helpers ----------------------------------------------------------- #
    def _onehot(self, Z):
        k = np.asarray(ad.value_of(Z))[:, 0].astype(int)
        if np.any((k < 0) | (k >= self.n_components)):
            raise ValueError("component index out of range")
        return np.eye(self.n_components)[k]

    def in_support(self, Z):
        k = Z[:, 0]
        return (k == np.round(k)) & (k >= 0) & (k < self.n_components) & np.all(np.isfinite(Z), 1)

    def _whiten(self, p, onehot, resid):
        """Solve ``L_k u = resid`` row by row; returns ``u`` and ``sum log diag(L_k)``."""
        logdiag = ad.matmul(onehot, p["chol_logdiag"])            # (n, d)
        off = ad.matmul(onehot, p["chol_off"]) if self.dim > 1 else None
        inv_diag = ad.exp(ad.neg(logdiag))
        cols, pos = [], {}
        for i, j in zip(*self._tril):
            pos[(i, j)] = len(pos)
        for i in range(self.dim):
            acc = ad.getitem(resid, (slice(None), i))
            for j in range(i):
                lij = ad.getitem(off, (slice(None), pos[(i, j)]))
                acc = ad.sub(acc, ad.mul(lij, cols[j]))
            cols.append(ad.mul(acc, ad.getitem(inv_diag, (slice(None), i))))
        u = ad.concat([ad.reshape(c, (-1, 1)) for c in cols], axis=1)
        return u, ad.sum(logdiag, axis=1)

    def _decode(self, p, z2):
        return mlp(z2, mlp_layers(p, "dec_", 2))

    def component_chol(self, p):
        """Lower-triangular factors ``(K, d, d)`` as a plain array."""
        L = np.zeros((self.n_components, self.dim, self.dim))
        idx = np.arange(self.dim)
        L[:, idx, idx] = np.exp(np.asarray(p["chol_logdiag"]))
        L[:, self._tril[0], self._tril[1]] = np.asarray(p["chol_off"])
        return L

    # -- model interface --------------------------------------------------- #
    def sample_latents(self, theta, rng, n):
        n = check_count(n, "n")
        p = theta.unpack()
        prob = special.softmax(p["logits"])
        k = rng.choice(self.n_components, size=n, p=prob)
        L = self.component_chol(p)
        eps = rng.standard_normal((n, self.dim))
        z2 = p["mu"][k] + np.einsum("nij,nj->ni", L[k], eps)
        return np.column_stack([k.astype(float), z2])

    def sample_obs(self, theta, Z, rng):
        p = theta.unpack()
        mu = self._decode(p, Z[:, 1:])
        return mu + np.exp(p["log_sx"]) * rng.standard_normal(mu.shape)

    def log_prior(self, p, Z):
        onehot = self._onehot(Z)
        z2 = ad.getitem(Z, (slice(None), slice(1, None)))
        log_pk = ad.matmul(onehot, ad.log_softmax(p["logits"]))
        resid = ad.sub(z2, ad.matmul(onehot, p["mu"]))
        u, logdet_half = self._whiten(p, onehot, resid)
        log_pz = ad.sub(ad.mul(-0.5, ad.sum(ad.square(u), axis=1)),
                        ad.add(logdet_half, 0.5 * self.dim * LOG_2PI))
        return ad.add(log_pk, log_pz)

    def log_lik(self, p, Z, X):
        z2 = ad.getitem(Z, (slice(None), slice(1, None)))
        return gauss_logpdf(X, self._decode(p, z2), p["log_sx"])

    def log_penalty(self, p):
        s = self.penalty
        dirichlet = ad.mul(self.dirichlet_alpha - 1.0, ad.sum(ad.log_softmax(p["logits"])))
        logdiag = p["chol_logdiag"]
        logdet = ad.mul(2.0, ad.sum(logdiag))
        # trace of Sigma^-1 equals the squared Frobenius norm of L^-1
        K, d = self.n_components, self.dim
        onehot = np.repeat(np.eye(K), d, axis=0)                # row block k selects component k
        Linv, _ = self._whiten(p, onehot, np.tile(np.eye(d), (K, 1)))
        trace_inv = ad.sum(ad.square(Linv))
        niw = ad.add(ad.add(ad.sum(ad.square(p["mu"])), logdet), trace_inv)
        l2 = 0.0
        for i in range(2):
            l2 = ad.add(l2, ad.sum(ad.square(p[f"dec_W{i}"])))
        return ad.sub(dirichlet, ad.mul(s, ad.add(niw, l2)))

    def natural_params(self, p, Z):
        z2 = ad.getitem(Z, (slice(None), slice(1, None)))
        return gauss_natural(self._decode(p, z2), p["log_sx"])[0]

    def log_partition(self, p, Z):
        z2 = ad.getitem(Z, (slice(None), slice(1, None)))
        return gauss_natural(self._decode(p, z2), p["log_sx"])[1]

    def suff_stats(self, X):
        return gauss_suff_stats(X)

    def obs_mean(self, p, Z):
        return self._decode(p, ad.getitem(Z, (slice(None), slice(1, None))))
