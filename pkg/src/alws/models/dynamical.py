"""State-space models whose sequences are treated as one multi-dimensional observation.

Injected noises are part of the latent vector, so each log joint is an
explicit product of tractable densities.
"""
from __future__ import annotations

import numpy as np
from scipy import special

from .. import autodiff as ad
from .._validation import as_rng, check_count, check_positive
from .base import (LOG_2PI, GenerativeModel, Trajectory, gauss_logpdf, gauss_natural,
                   gauss_suff_stats, init_mlp, mlp, mlp_layers)


class SimulationError(FloatingPointError):
    """A simulated trajectory left its numerically valid range."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


def _seq_rows(A, n, T, d):
    """``(n, T*d)`` -> ``(n*T, d)`` for nodes and arrays."""
    return ad.reshape(A, (n * T, d))


# --------------------------------------------------------------------------- #
# nonlinear oscillator

class Oscillator(GenerativeModel):
    """Neural-network state-space model for the oscillation sequences.

    ``z_1 ~ N(0, I)``, ``z_t | z_{t-1} ~ N(NN_z(z_{t-1}), Sigma_z)`` and
    ``x_t | z_t ~ N(NN_x(z_t), Sigma_x)``; both networks have one tanh hidden
    layer.  Latents are flattened time-major to ``(n, T * d_z)`` and
    observations to ``(n, T * d_x)``.
    """

    name = "oscillator"
    has_exp_fam = True
    dynamical = True
    noise_params = ("log_sx",)

    def __init__(self, T=30, d_obs=20, d_latent=2, hidden=20, sigma_z=0.1, sigma_x=0.1):
        self.T = check_count(T, "T", 1)
        self.d_obs = check_count(d_obs, "d_obs", 1)
        self.d_latent = check_count(d_latent, "d_latent", 1)
        self.hidden = check_count(hidden, "hidden", 1)
        self.sigma_z = check_positive(sigma_z, "sigma_z")
        self.sigma_x = check_positive(sigma_x, "sigma_x")
        self.dim_z = self.T * self.d_latent
        self.dim_x = self.T * self.d_obs

    def init_params(self, rng=None):
        rng = as_rng(0 if rng is None else rng)
        d, h = self.d_latent, self.hidden
        p = init_mlp(rng, [d, h, d], "trans_")
        p.update(init_mlp(rng, [d, h, self.d_obs], "obs_"))
        p["log_sz"] = np.full(d, np.log(self.sigma_z))
        p["log_sx"] = np.full(self.d_obs, np.log(self.sigma_x))
        return ad.ParamVector.pack(p)

    def transition(self, p, Z):
        return mlp(Z, mlp_layers(p, "trans_", 2))

    def emission(self, p, Z):
        return mlp(Z, mlp_layers(p, "obs_", 2))

    def _run(self, p, rng, n, T):
        d = self.d_latent
        sz = np.exp(p["log_sz"])
        Z = np.empty((n, T, d))
        Z[:, 0] = rng.standard_normal((n, d))
        for t in range(1, T):
            Z[:, t] = self.transition(p, Z[:, t - 1]) + sz * rng.standard_normal((n, d))
        mu = self.emission(p, Z.reshape(n * T, d))
        X = mu + np.exp(p["log_sx"]) * rng.standard_normal(mu.shape)
        return Z.reshape(n, T * d), X.reshape(n, T * self.d_obs)

    def sample_latents(self, theta, rng, n):
        return self._run(theta.unpack(), as_rng(rng), check_count(n, "n"), self.T)[0]

    def sample(self, theta, rng, n):
        self.check_params(theta)
        return self._run(theta.unpack(), as_rng(rng), check_count(n, "n"), self.T)

    def simulate(self, theta, rng, T=None, controls=None):
        T = self.T if T is None else check_count(T, "T", 1)
        Z, X = self._run(theta.unpack(), as_rng(rng), 1, T)
        return Trajectory(Z.reshape(T, self.d_latent), X.reshape(T, self.d_obs))

    def _split(self, Z):
        n = np.shape(ad.value_of(Z))[0]
        T, d = self.T, self.d_latent
        Z3 = ad.reshape(Z, (n, T, d))
        first = ad.reshape(ad.getitem(Z3, (slice(None), 0)), (n, d))
        prev = ad.reshape(ad.getitem(Z3, (slice(None), slice(0, T - 1))), (n * (T - 1), d))
        nxt = ad.reshape(ad.getitem(Z3, (slice(None), slice(1, T))), (n * (T - 1), d))
        return n, first, prev, nxt

    def log_prior(self, p, Z):
        n, first, prev, nxt = self._split(Z)
        d = self.d_latent
        lp = ad.sub(ad.mul(-0.5, ad.sum(ad.square(first), axis=1)), 0.5 * d * LOG_2PI)
        if self.T > 1:
            trans = gauss_logpdf(nxt, self.transition(p, prev), p["log_sz"])
            lp = ad.add(lp, ad.sum(ad.reshape(trans, (n, self.T - 1)), axis=1))
        return lp

    def _obs_rows(self, p, Z):
        n = np.shape(ad.value_of(Z))[0]
        return n, self.emission(p, _seq_rows(Z, n, self.T, self.d_latent))

    def log_lik(self, p, Z, X):
        n, mu = self._obs_rows(p, Z)
        Xr = np.asarray(X, dtype=float).reshape(n * self.T, self.d_obs)
        return ad.sum(ad.reshape(gauss_logpdf(Xr, mu, p["log_sx"]), (n, self.T)), axis=1)

    def natural_params(self, p, Z):
        n, mu = self._obs_rows(p, Z)
        eta, _ = gauss_natural(mu, p["log_sx"])                     # (n*T, 2 d_obs)
        d = self.d_obs
        eta3 = ad.reshape(eta, (n, self.T, 2 * d))
        first = ad.reshape(ad.getitem(eta3, (slice(None), slice(None), slice(0, d))), (n, self.T * d))
        second = ad.reshape(ad.getitem(eta3, (slice(None), slice(None), slice(d, 2 * d))),
                            (n, self.T * d))
        return ad.concat([first, second], axis=1)

    def log_partition(self, p, Z):
        n, mu = self._obs_rows(p, Z)
        _, log_z = gauss_natural(mu, p["log_sx"])
        return ad.sum(ad.reshape(log_z, (n, self.T)), axis=1)

    def suff_stats(self, X):
        return gauss_suff_stats(X)

    def obs_mean(self, p, Z):
        n, mu = self._obs_rows(p, Z)
        return ad.reshape(mu, (n, self.T * self.d_obs))

    def one_step_predictions(self, p, z_seq):
        """Predicted ``x_{t+1}`` from ``z_t`` for ``t = 1..T-1`` as a ``(T-1, d_obs)`` array."""
        z_seq = np.asarray(z_seq, dtype=float).reshape(-1, self.d_latent)
        return np.asarray(self.emission(p, self.transition(p, z_seq[:-1])))


# --------------------------------------------------------------------------- #
# Hodgkin-Huxley neuron

HH_DEFAULTS = {
    "C_m": 1.0, "g_l": 0.1, "E_l": -70.0, "g_Na": 20.0, "E_Na": 53.0,
    "g_K": 5.0, "E_K": -107.0, "V_T": -60.0, "sigma_z": 0.1, "sigma_x": 1.0,
}


def _gate_rates(V, V_T):
    """Opening and closing rates (1/ms) of the m, h and n gates."""
    u = ad.sub(V, V_T)
    a_m = ad.mul(1.28, ad.x_over_expm1(ad.mul(-0.25, ad.sub(u, 13.0))))
    b_m = ad.mul(1.4, ad.x_over_expm1(ad.mul(0.2, ad.sub(u, 40.0))))
    a_h = ad.mul(0.128, ad.exp(ad.mul(-1.0 / 18.0, ad.sub(u, 17.0))))
    b_h = ad.div(4.0, ad.add(1.0, ad.exp(ad.mul(-0.2, ad.sub(u, 40.0)))))
    a_n = ad.mul(0.16, ad.x_over_expm1(ad.mul(-0.2, ad.sub(u, 15.0))))
    b_n = ad.mul(0.5, ad.exp(ad.mul(-1.0 / 40.0, ad.sub(u, 10.0))))
    return (a_m, b_m), (a_h, b_h), (a_n, b_n)


class HodgkinHuxley(GenerativeModel):
    """Single-compartment Hodgkin-Huxley neuron driven by an input current.

    The membrane potential follows a forward-Euler step of size ``dt`` with
    Gaussian process noise ``eps_t`` (the latents); gating variables use the
    exponential-Euler update, which keeps them inside ``[0, 1]``.  Observations
    are ``V_t`` plus Gaussian measurement noise.  Conductances, the membrane
    capacitance and both noise scales are stored as logarithms.

    Parameters
    ----------
    controls : array of shape (T,)
        Input current for every step; its length fixes ``T``.
    dt : float, default=0.05
        Step size in ms.
    """

    name = "hodgkin_huxley"
    has_exp_fam = True
    dynamical = True
    noise_params = ("log_sigma_x",)

    def __init__(self, controls, dt=0.05, truth=None):
        self.controls = np.asarray(controls, dtype=float).ravel()
        self.T = check_count(self.controls.size, "T", 1)
        self.dt = check_positive(dt, "dt")
        self.truth = dict(HH_DEFAULTS, **(truth or {}))
        self.dim_z = self.T
        self.dim_x = self.T

    def init_params(self, rng=None):
        t = self.truth
        return ad.ParamVector.pack({
            "log_C_m": np.log(t["C_m"]), "log_g_l": np.log(t["g_l"]), "E_l": t["E_l"],
            "log_g_Na": np.log(t["g_Na"]), "E_Na": t["E_Na"], "log_g_K": np.log(t["g_K"]),
            "E_K": t["E_K"], "V_T": t["V_T"], "log_sigma_z": np.log(t["sigma_z"]),
            "log_sigma_x": np.log(t["sigma_x"]),
        })

    def _steady(self, V, V_T):
        return [ad.div(a, ad.add(a, b)) for a, b in _gate_rates(V, V_T)]

    def voltage(self, p, E, controls=None, check=False):
        """Membrane potential ``(n, T)`` given process noises ``E`` of shape ``(n, T)``."""
        I = self.controls if controls is None else controls
        n, T = np.shape(ad.value_of(E))
        dt = self.dt
        inv_c = ad.exp(ad.neg(p["log_C_m"]))
        g_l, g_na, g_k = ad.exp(p["log_g_l"]), ad.exp(p["log_g_Na"]), ad.exp(p["log_g_K"])
        V = ad.add(np.zeros(n), p["E_l"])
        m, h, k = self._steady(V, p["V_T"])
        out = []
        for t in range(T):
            i_ion = ad.add(ad.add(
                ad.mul(g_l, ad.sub(V, p["E_l"])),
                ad.mul(ad.mul(g_na, ad.mul(ad.power(m, 3), h)), ad.sub(V, p["E_Na"]))),
                ad.mul(ad.mul(g_k, ad.power(k, 4)), ad.sub(V, p["E_K"])))
            dV = ad.mul(dt, ad.mul(inv_c, ad.sub(I[t], i_ion)))
            (am, bm), (ah, bh), (an, bn) = _gate_rates(V, p["V_T"])
            m, h, k = (ad.add(ad.div(a, ad.add(a, b)),
                              ad.mul(ad.sub(g, ad.div(a, ad.add(a, b))),
                                     ad.exp(ad.mul(-dt, ad.add(a, b)))))
                       for g, (a, b) in ((m, (am, bm)), (h, (ah, bh)), (k, (an, bn))))
            V = ad.add(ad.add(V, dV), ad.getitem(E, (slice(None), t)))
            if check and np.any(np.abs(ad.value_of(V)) > 1e3):
                raise SimulationError(f"membrane potential exceeded 1e3 mV at step {t}", t)
            out.append(ad.reshape(V, (n, 1)))
        return ad.concat(out, axis=1)

    def sample(self, theta, rng, n):
        self.check_params(theta)
        rng = as_rng(rng)
        p = theta.unpack()
        E = np.exp(p["log_sigma_z"]) * rng.standard_normal((check_count(n, "n"), self.T))
        V = self.voltage(p, E, check=True)
        return E, V + np.exp(p["log_sigma_x"]) * rng.standard_normal(V.shape)

    def simulate(self, theta, rng, T=None, controls=None, noise=True):
        rng = as_rng(rng)
        I = self.controls if controls is None else np.asarray(controls, dtype=float).ravel()
        if T is not None and T != I.size:
            raise ValueError("controls must provide one value per step")
        p = theta.unpack()
        sz, sx = (np.exp(p["log_sigma_z"]), np.exp(p["log_sigma_x"])) if noise else (0.0, 0.0)
        E = sz * rng.standard_normal((1, I.size))
        V = self.voltage(p, E, I, check=True)
        X = V + sx * rng.standard_normal(V.shape)
        return Trajectory(E[0], X[0], I, V[0])

    def log_prior(self, p, E):
        return gauss_logpdf(E, 0.0, p["log_sigma_z"])

    def log_lik(self, p, E, X):
        return gauss_logpdf(X, self.voltage(p, E), p["log_sigma_x"])

    def natural_params(self, p, E):
        return gauss_natural(self.voltage(p, E), p["log_sigma_x"])[0]

    def log_partition(self, p, E):
        return gauss_natural(self.voltage(p, E), p["log_sigma_x"])[1]

    def suff_stats(self, X):
        return gauss_suff_stats(X)

    def obs_mean(self, p, E):
        return self.voltage(p, E)


# --------------------------------------------------------------------------- #
# blowfly population

def _gamma_logpdf(y, log_sd):
    """Gamma density with mean 1 and standard deviation ``exp(log_sd)``: shape 1/s^2, scale s^2."""
    shape = ad.exp(ad.mul(-2.0, log_sd))
    log_scale = ad.mul(2.0, log_sd)
    return ad.sub(ad.sub(ad.sub(ad.mul(ad.sub(shape, 1.0), ad.log(y)), ad.div(y, ad.exp(log_scale))),
                         ad.lgamma(shape)), ad.mul(shape, log_scale))


class Blowfly(GenerativeModel):
    """Delayed birth-death population model with log-normal observations.

    ``z_t = P x_{t-tau} exp(-x_{t-tau} / N0) e_t + x_{t-1} exp(-delta eps_t)`` with
    ``tau ~ Cat(softmax(m))`` on ``{1, ..., max_delay}``, Gamma noises ``e_t`` and
    ``eps_t`` of mean one, and ``x_t ~ LogNormal(log z_t, sigma_n^2)``.  The
    unobserved history ``x_{1-max_delay}, ..., x_0`` enters as parameters
    squashed into ``(0, 1)`` by a sigmoid.  Latents are stored as
    ``[tau, e_1..e_T, eps_1..eps_T]``.
    """

    name = "blowfly"
    dynamical = True
    noise_params = ("log_sigma_n",)

    def __init__(self, T=180, max_delay=20, truth=None):
        self.T = check_count(T, "T", 1)
        self.max_delay = check_count(max_delay, "max_delay", 1)
        self.truth = dict({"P": 6.5, "N0": 0.4, "delta": 0.16, "sigma_p": 0.5,
                           "sigma_d": 0.3, "sigma_n": 0.1, "tau": 14, "past": 0.3},
                          **(truth or {}))
        self.dim_z = 2 * self.T + 1
        self.dim_x = self.T

    def init_params(self, rng=None):
        t = self.truth
        logits = np.zeros(self.max_delay)
        if t.get("tau") is not None:
            logits[int(t["tau"]) - 1] = 3.0
        past = np.clip(np.broadcast_to(t["past"], (self.max_delay,)), 1e-6, 1 - 1e-6)
        return ad.ParamVector.pack({
            "logits": logits, "log_sigma_p": np.log(t["sigma_p"]),
            "log_sigma_d": np.log(t["sigma_d"]), "log_P": np.log(t["P"]),
            "log_N0": np.log(t["N0"]), "log_delta": np.log(t["delta"]),
            "log_sigma_n": np.log(t["sigma_n"]), "past_raw": special.logit(past),
        })

    def in_support(self, Z):
        tau = Z[:, 0]
        ok = (tau == np.round(tau)) & (tau >= 1) & (tau <= self.max_delay)
        return ok & np.all(Z[:, 1:] > 0, axis=1)

    def _split(self, Z):
        T = self.T
        tau = np.asarray(ad.value_of(Z))[:, 0].astype(int)
        e = ad.getitem(Z, (slice(None), slice(1, T + 1)))
        eps = ad.getitem(Z, (slice(None), slice(T + 1, 2 * T + 1)))
        return tau, e, eps

    def population_mean(self, p, tau, e, eps, X):
        """``z_t`` for every sample and step, shape ``(n, T)``."""
        n, T, D = tau.size, self.T, self.max_delay
        past = ad.add(np.zeros((n, D)), ad.sigmoid(p["past_raw"]))
        XX = ad.concat([past, X], axis=1)                        # column D-1+t holds x_t
        t = np.arange(1, T + 1)
        lag_idx = (D - 1) + t[None, :] - tau[:, None]
        lagged = ad.getitem(XX, (np.arange(n)[:, None], lag_idx))
        prev = ad.getitem(XX, (slice(None), slice(D - 1, D - 1 + T)))
        birth = ad.mul(ad.mul(ad.mul(ad.exp(p["log_P"]), lagged),
                              ad.exp(ad.neg(ad.div(lagged, ad.exp(p["log_N0"]))))), e)
        survive = ad.mul(prev, ad.exp(ad.neg(ad.mul(ad.exp(p["log_delta"]), eps))))
        return ad.add(birth, survive)

    def sample(self, theta, rng, n):
        self.check_params(theta)
        rng = as_rng(rng)
        n = check_count(n, "n")
        p = theta.unpack()
        T, D = self.T, self.max_delay
        tau = rng.choice(D, size=n, p=special.softmax(p["logits"])) + 1
        sp, sd = np.exp(p["log_sigma_p"]), np.exp(p["log_sigma_d"])
        e = rng.gamma(1.0 / sp ** 2, sp ** 2, (n, T))
        eps = rng.gamma(1.0 / sd ** 2, sd ** 2, (n, T))
        # tiny floors keep log densities finite when a gamma draw underflows
        e, eps = np.maximum(e, 1e-300), np.maximum(eps, 1e-300)
        XX = np.empty((n, D + T))
        XX[:, :D] = special.expit(p["past_raw"])
        P, N0, delta, sn = (np.exp(p[k]) for k in ("log_P", "log_N0", "log_delta", "log_sigma_n"))
        rows = np.arange(n)
        for t in range(1, T + 1):
            lag = XX[rows, D - 1 + t - tau]
            z = P * lag * np.exp(-lag / N0) * e[:, t - 1] + XX[:, D - 2 + t] * np.exp(-delta * eps[:, t - 1])
            XX[:, D - 1 + t] = z * np.exp(sn * rng.standard_normal(n))
        Z = np.column_stack([tau.astype(float), e, eps])
        return Z, XX[:, D:]

    def simulate(self, theta, rng, T=None, controls=None):
        model = self if T is None or T == self.T else Blowfly(T, self.max_delay, self.truth)
        Z, X = model.sample(theta, rng, 1)
        Tm = model.T
        lat = np.column_stack([np.full(Tm, Z[0, 0]), Z[0, 1:Tm + 1], Z[0, Tm + 1:]])
        return Trajectory(lat, X[0])

    def log_prior(self, p, Z):
        tau, e, eps = self._split(Z)
        onehot = np.eye(self.max_delay)[tau - 1]
        lp = ad.matmul(onehot, ad.log_softmax(p["logits"]))
        lp = ad.add(lp, ad.sum(_gamma_logpdf(e, p["log_sigma_p"]), axis=1))
        return ad.add(lp, ad.sum(_gamma_logpdf(eps, p["log_sigma_d"]), axis=1))

    def log_lik(self, p, Z, X):
        tau, e, eps = self._split(Z)
        z = self.population_mean(p, tau, e, eps, X)
        log_x = np.log(np.asarray(X, dtype=float))
        sn = p["log_sigma_n"]
        r = ad.sub(log_x, ad.log(z))
        per = ad.sub(ad.mul(-0.5, ad.mul(ad.square(r), ad.exp(ad.mul(-2.0, sn)))),
                     ad.add(ad.add(sn, 0.5 * LOG_2PI), log_x))
        return ad.sum(per, axis=1)
