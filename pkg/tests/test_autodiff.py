import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alws import autodiff as ad
from conftest import fd_grad, fd_rel_err

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def pv(**arrays):
    return ad.ParamVector.pack(arrays)


def gauss_logpdf(x, mu, sd):
    return -0.5 * np.log(2 * np.pi) - ad.log(sd) - 0.5 * ad.square((x - mu) / sd)


def grad_of(expr, params, *inputs):
    return ad.backward(ad.forward(expr, params, *inputs))


class TestForward:
    def test_square(self):
        out = ad.forward(lambda p: p["x"] ** 2, pv(x=3.0))
        assert float(out.value) == 9.0

    def test_softplus_mean_at_origin(self):
        z = np.zeros(2)
        out = ad.forward(lambda p: ad.softplus(ad.sum(p["b"] * z)) - ad.sum(ad.square(p["b"])),
                         pv(b=[1.0, 1.0]))
        assert float(out.value) == pytest.approx(np.log(2) - 2, abs=1e-15)

    def test_standard_normal_at_zero(self):
        out = ad.forward(lambda p: gauss_logpdf(0.0, p["mu"], 1.0), pv(mu=0.0))
        assert float(out.value) == pytest.approx(-0.918938533204672, abs=1e-14)

    def test_non_finite_names_primitive_and_shapes(self):
        with pytest.raises(ad.NonFiniteError, match=r"log.*\(2,\)"):
            ad.forward(lambda p: ad.sum(ad.log(p["x"])), pv(x=[1.0, -1.0]))

    def test_vector_output_rejected(self):
        with pytest.raises(ValueError, match="scalar"):
            ad.forward(lambda p: p["x"] * 2.0, pv(x=[1.0, 2.0]))

    def test_constant_expression_gives_zero_gradient(self):
        g = grad_of(lambda p: 4.0, pv(x=[1.0, 2.0]))
        np.testing.assert_array_equal(g.data, 0.0)


class TestBackward:
    def test_power_rule(self):
        assert grad_of(lambda p: p["x"] ** 2, pv(x=3.0))["x"] == 6.0

    def test_gauss_mean_gradient(self):
        g = grad_of(lambda p: gauss_logpdf(1.0, p["mu"], 1.0), pv(mu=0.0))
        assert float(g["mu"]) == pytest.approx(1.0, abs=1e-15)

    def test_layout_preserved(self):
        theta = pv(a=np.ones((2, 3)), b=[1.0])
        g = grad_of(lambda p: ad.sum(p["a"]) * p["b"][0], theta)
        assert g.layout == theta.layout
        np.testing.assert_array_equal(g["a"], np.ones((2, 3)))
        assert float(g["b"][0]) == 6.0

    def test_shared_subexpression_accumulates(self):
        # y = u * u with u = 2x appearing twice: dy/dx = 8x
        def expr(p):
            u = 2.0 * p["x"]
            return u * u + u

        assert float(grad_of(expr, pv(x=1.5))["x"]) == pytest.approx(8 * 1.5 + 2)

    def test_second_backward_raises(self):
        out = ad.forward(lambda p: p["x"] ** 2, pv(x=3.0))
        ad.backward(out)
        with pytest.raises(ad.GraphConsumedError):
            ad.backward(out)

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        A = rng.normal(size=(4, 4))
        theta = pv(w=rng.normal(size=4))

        def expr(p):
            return ad.sum(ad.tanh(ad.matmul(A, p["w"]))) + ad.logsumexp(p["w"])

        g1, g2 = grad_of(expr, theta), grad_of(expr, theta)
        assert g1.data.tobytes() == g2.data.tobytes()

    @settings(max_examples=30, deadline=None)
    @given(st.lists(finite, min_size=3, max_size=3), finite, finite)
    def test_linearity(self, w, a, b):
        theta = pv(w=w)
        f = lambda p: ad.sum(ad.sigmoid(p["w"]) * p["w"])  # noqa: E731
        g = lambda p: ad.sum(ad.square(p["w"])) + ad.tanh(p["w"][0])  # noqa: E731
        lhs = grad_of(lambda p: a * f(p) + b * g(p), theta).data
        rhs = a * grad_of(f, theta).data + b * grad_of(g, theta).data
        np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12 * (1 + np.abs(rhs).max()))


# Each primitive checked against central finite differences.
PRIMITIVE_EXPRS = {
    "add_mul_div": lambda p: ad.sum((p["a"] + 2.0) * p["b"] / (1.5 + ad.square(p["a"]))),
    "sub_neg_power": lambda p: ad.sum(-(p["a"] - p["b"]) ** 3),
    "sqrt_exp_log": lambda p: ad.sum(ad.sqrt(1.0 + ad.exp(p["a"])) * ad.log(2.0 + ad.square(p["b"]))),
    "tanh_sigmoid": lambda p: ad.sum(ad.tanh(p["a"]) * ad.sigmoid(p["b"])),
    "softplus_relu": lambda p: ad.sum(ad.softplus(p["a"]) + ad.relu(p["b"] + 10.0)),
    "absolute_lgamma": lambda p: ad.sum(ad.lgamma(1.0 + ad.absolute(p["a"] + 10.0))),
    "x_over_expm1": lambda p: ad.sum(ad.x_over_expm1(p["a"])),
    "matmul": lambda p: ad.sum(ad.matmul(ad.reshape(p["a"], (2, 2)), ad.reshape(p["b"], (2, 2)))),
    "matvec": lambda p: ad.sum(ad.square(ad.matmul(ad.reshape(p["a"], (2, 2)), p["b"][:2]))),
    "mean_transpose": lambda p: ad.mean(ad.transpose(ad.reshape(p["a"], (2, 2))) * ad.reshape(p["b"], (2, 2))),
    "logsumexp": lambda p: ad.logsumexp(ad.reshape(p["a"], (2, 2)), axis=1)[0] + ad.logsumexp(p["b"]),
    "log_softmax": lambda p: ad.sum(ad.log_softmax(p["a"]) * p["b"]),
    "concat_getitem": lambda p: ad.sum(ad.square(ad.concat([p["a"][1:], p["b"][::2]]))),
    "axis_sum": lambda p: ad.sum(ad.square(ad.sum(ad.reshape(p["a"], (2, 2)), axis=0))),
    "broadcast": lambda p: ad.sum(ad.reshape(p["a"], (2, 2)) * p["b"][:2]),
    "tri_solve": lambda p: ad.sum(ad.square(ad.tri_solve(np.array([[2.0, 0.0], [0.5, 1.5]]), p["a"][:2]))),
    "spd_solve": lambda p: ad.sum(ad.spd_solve(
        ad.matmul(ad.reshape(p["a"], (2, 2)), ad.transpose(ad.reshape(p["a"], (2, 2)))) + np.eye(2), p["b"][:2])),
    "spd_logdet": lambda p: ad.spd_logdet(
        ad.matmul(ad.reshape(p["a"], (2, 2)), ad.transpose(ad.reshape(p["a"], (2, 2)))) + np.eye(2)),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_EXPRS))
def test_primitive_matches_finite_differences(name):
    expr = PRIMITIVE_EXPRS[name]
    rng = np.random.default_rng(1)
    for _ in range(5):
        theta = pv(a=rng.normal(size=4), b=rng.normal(size=4))
        g = grad_of(expr, theta).data
        g_fd = fd_grad(lambda d: float(ad.value_of(expr(theta.with_data(d).unpack()))), theta.data)
        assert fd_rel_err(g, g_fd) < 1e-7


class TestJvpDot:
    def test_identity_map(self):
        c = np.array([0.3, -1.2])
        g = ad.jvp_dot(lambda p: ad.matmul(np.eye(2), p["t"]), pv(t=[1.0, 2.0]), c)
        np.testing.assert_array_equal(g.data, c)

    def test_componentwise(self):
        g = ad.jvp_dot(lambda p: ad.concat([p["t"][:1] ** 2, p["t"][1:]]), pv(t=[3.0, 5.0]), [1.0, 1.0])
        np.testing.assert_allclose(g.data, [6.0, 1.0])

    def test_quadratic_map_vs_finite_differences(self):
        rng = np.random.default_rng(2)
        A = rng.normal(size=(5, 5, 5))
        c = rng.normal(size=5)

        def fn(p):
            t = p["t"]
            return ad.concat([ad.reshape(ad.sum(ad.matmul(A[i], t) * t), (1,)) for i in range(5)])

        theta = pv(t=rng.normal(size=5))
        g = ad.jvp_dot(fn, theta, c).data
        g_fd = fd_grad(lambda d: float(np.dot(ad.value_of(fn({"t": d})), c)), theta.data)
        np.testing.assert_allclose(g, g_fd, rtol=1e-6, atol=1e-8)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="cotangent"):
            ad.jvp_dot(lambda p: p["t"] * 1.0, pv(t=[1.0, 2.0]), [1.0, 2.0, 3.0])


class TestParamVector:
    @settings(max_examples=50, deadline=None)
    @given(st.lists(finite, min_size=1, max_size=6), st.lists(finite, min_size=4, max_size=4))
    def test_pack_unpack_round_trip(self, a, b):
        v = pv(a=a, B=np.reshape(b, (2, 2)))
        w = ad.ParamVector.pack(v.unpack())
        assert w.layout == v.layout
        assert w.data.tobytes() == v.data.tobytes()

    def test_json_round_trip(self):
        v = pv(a=np.arange(6.0).reshape(2, 3) / 7, b=[np.pi])
        w = ad.ParamVector.from_json(v.to_json())
        assert w.layout == v.layout and w.data.tobytes() == v.data.tobytes()

    def test_layout_must_tile(self):
        with pytest.raises(ValueError, match="gap"):
            ad.ParamVector(np.zeros(3), (("a", 0, (1,)), ("b", 2, (1,))))
        with pytest.raises(ValueError, match="covers"):
            ad.ParamVector(np.zeros(3), (("a", 0, (2,)),))

    def test_immutable(self):
        v = pv(a=[1.0, 2.0])
        with pytest.raises(ValueError):
            v.data[0] = 5.0

    def test_replace(self):
        v = pv(a=[1.0, 2.0], b=[3.0])
        w = v.replace(b=[7.0])
        assert list(w.data) == [1.0, 2.0, 7.0] and list(v.data) == [1.0, 2.0, 3.0]
        with pytest.raises(KeyError):
            v.replace(c=[1.0])
