import numpy as np
import pytest

from alws import autodiff as ad
from alws import models

# Small instances of every zoo model, sized so per-test cost stays low.
SMALL_ZOO = {
    "toy_softplus": {},
    "linear_gaussian": {"dim_z": 2, "dim_x": 5},
    "circular": {"dim_x": 8, "hidden": 5},
    "pinwheel_hier": {"n_components": 3, "hidden": 4},
    "ica_laplace": {"dim_x": 6, "dim_z": 3},
    "mat_fact": {"dim_x": 6, "dim_z": 2},
    "oscillator": {"T": 4, "d_obs": 5, "hidden": 4},
    "hodgkin_huxley": {"T": 20},
    "blowfly": {"T": 30},
}


def small_model(name):
    return models.make_model(name, **SMALL_ZOO[name])


@pytest.fixture(params=sorted(SMALL_ZOO))
def zoo_model(request):
    return small_model(request.param)


def fd_grad(f, x, h=1e-5):
    """Central finite differences of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_rel_err(g, g_fd):
    return float(np.max(np.abs(g - g_fd) / (1.0 + np.abs(g_fd))))


def log_joint_fd_error(model, theta, Z, X, h=1e-5):
    """Max relative error of the autodiff log-joint gradient against finite differences."""
    def value(data):
        return float(np.sum(model.evaluate(theta.with_data(data), Z, X)))

    g = ad.backward(ad.forward(lambda p: ad.sum(model.log_joint(p, Z, X)), theta)).data
    return fd_rel_err(g, fd_grad(value, theta.data, h))


def pathway_pair(model, theta, n, rng, lam=0.01, n_query=1):
    """Gradient of the mean prediction over query points computed two ways.

    Returns ``(autodiff, direct)``: backpropagation through the ridge prediction
    with log-joint targets, and direct regression of the per-sample gradients.
    """
    from alws import kernels, krr

    Z, X = model.sample(theta, rng, n)
    _, Xq = model.sample(theta, rng, n_query)
    y = np.asarray(model.log_joint(theta.unpack(), Z, X))
    sigma = kernels.median_heuristic(kernels.KernelParams(), X)
    fit_ = krr.fit(X, y[None, :], krr.Hyperparams(kernels.KernelParams.with_bandwidth(sigma), lam))

    def expr(p):
        preds = [krr.predict_node(fit_, model.log_joint(p, Z, X), xq) for xq in Xq]
        return ad.mul(1.0 / len(Xq), ad.sum(ad.concat([ad.reshape(q, (1,)) for q in preds])))

    autodiff = ad.backward(ad.forward(expr, theta)).data
    G = np.stack([ad.backward(ad.forward(lambda p, i=i: ad.sum(model.log_joint(p, Z[i:i + 1], X[i:i + 1])),
                                         theta)).data for i in range(n)], axis=1)
    direct = krr.predict_grad_targets(fit_, G, Xq).mean(axis=1)
    return autodiff, direct


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    def record(criterion, passed, detail):
        line = f"{criterion} {'PASS' if passed else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
