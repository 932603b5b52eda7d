import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from bidpm import numcore as nc


def central_fd(fn, arrays_, h=1e-6):
    """d fn / d arrays_[k] by central differences, for every k."""
    out = []
    for k, a in enumerate(arrays_):
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            vals = []
            for s in (1.0, -1.0):
                shifted = [b.copy() for b in arrays_]
                shifted[k][idx] += s * h
                vals.append(fn(*shifted))
            g[idx] = (vals[0] - vals[1]) / (2 * h)
        out.append(g)
    return out


def grads_of(build, arrays_):
    params = [nc.Parameter(a, f"p{i}") for i, a in enumerate(arrays_)]
    with nc.Tape():
        loss = build(*params)
    g = nc.backward(loss, params)
    return [g[f"p{i}"] for i in range(len(arrays_))]


def value_of(build):
    def f(*arrays_):
        with nc.no_tape():
            return build(*[nc.Tensor(a) for a in arrays_]).item()
    return f


rng = np.random.default_rng(7)
W = rng.normal(size=(3, 4))
A = rng.normal(size=(5, 3))
B = rng.normal(size=(5, 3))
ROW = rng.normal(size=4)

# scalarise each primitive with a fixed random projection so every output entry matters
PROJ4 = rng.normal(size=(5, 4))
PROJ3 = rng.normal(size=(5, 3))
PROJ55 = rng.normal(size=(5, 5))


def proj(t, p):
    return nc.sum_all(nc.mul(t, nc.Tensor(p)))


CASES = {
    "add": (lambda a, b: proj(nc.add(a, b), PROJ3), [A, B]),
    "sub": (lambda a, b: proj(nc.sub(a, b), PROJ3), [A, B]),
    "mul": (lambda a, b: proj(nc.mul(a, b), PROJ3), [A, B]),
    "scale": (lambda a: proj(nc.scale(a, -2.5), PROJ3), [A]),
    "silu": (lambda a: proj(nc.silu(a), PROJ3), [A]),
    "exp": (lambda a: proj(nc.exp(a), PROJ3), [A]),
    "sum": (lambda a: nc.sum_all(a), [A]),
    "mean_square": (lambda a: nc.mean_square(a), [A]),
    "matmul": (lambda a, w: proj(nc.matmul(a, w), PROJ4), [A, W]),
    "add_row": (lambda a, r: proj(nc.add_row(nc.matmul(a, nc.Tensor(W)), r), PROJ4), [A, ROW]),
    "concat_cols": (lambda a, b: proj(nc.concat_cols(a, b), np.concatenate([PROJ3, PROJ3[:, ::-1]], 1)), [A, B]),
    "concat_rows": (lambda a, b: proj(nc.concat_rows(a, b), np.concatenate([PROJ3, 2 * PROJ3])), [A, B]),
    "take_rows": (lambda a: proj(nc.take_rows(a, 1, 4), PROJ3[:3]), [A]),
    "pairwise_sqdist": (lambda a, b: proj(nc.pairwise_sqdist(a, b), PROJ55), [A, B]),
}


@pytest.mark.parametrize("kind", sorted(CASES))
def test_primitive_gradient_matches_finite_differences(kind):
    build, inputs = CASES[kind]
    got = grads_of(build, inputs)
    want = central_fd(value_of(build), inputs)
    for g, w in zip(got, want):
        np.testing.assert_allclose(g, w, rtol=1e-6, atol=1e-7)


def test_every_registered_primitive_has_a_gradient_case():
    assert set(nc.PRIMITIVES) == set(CASES)


def test_primitive_lookup_by_name():
    out = nc.primitive("add", nc.Tensor(A), nc.Tensor(B))
    np.testing.assert_array_equal(out.data, A + B)
    with pytest.raises(nc.NumcoreError):
        nc.primitive("tanh", nc.Tensor(A))


def test_silu_is_x_times_sigmoid():
    x = np.linspace(-40, 40, 81)
    got = nc.silu(nc.Tensor(x)).data
    np.testing.assert_allclose(got, x / (1 + np.exp(-x)), rtol=1e-14, atol=1e-300)


def test_pairwise_sqdist_matches_double_loop():
    got = nc.pairwise_sqdist(nc.Tensor(A), nc.Tensor(B)).data
    want = np.array([[np.sum((a - b) ** 2) for b in B] for a in A])
    np.testing.assert_allclose(got, want, rtol=1e-14)
    assert np.all(np.diag(nc.pairwise_sqdist(nc.Tensor(A), nc.Tensor(A)).data) == 0.0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 2), elements=st.floats(-3, 3)), arrays(np.float64, (3, 2), elements=st.floats(-3, 3)),
       st.floats(-2, 2), st.floats(-2, 2))
def test_gradient_is_linear_in_the_loss(a, b, alpha, beta):
    def f(p):
        return nc.mean_square(nc.silu(p))

    def g(p):
        return nc.sum_all(nc.mul(p, nc.Tensor(b)))

    ga = grads_of(lambda p: f(p), [a])[0]
    gb = grads_of(lambda p: g(p), [a])[0]
    gc = grads_of(lambda p: nc.add(nc.scale(f(p), alpha), nc.scale(g(p), beta)), [a])[0]
    np.testing.assert_allclose(gc, alpha * ga + beta * gb, rtol=1e-12, atol=1e-12)


def test_reused_input_accumulates_gradient():
    # d/da sum(a*a + a) = 2a + 1
    g = grads_of(lambda a: nc.sum_all(nc.add(nc.mul(a, a), a)), [A])[0]
    np.testing.assert_allclose(g, 2 * A + 1, rtol=1e-15)


def test_backward_is_deterministic():
    build, inputs = CASES["pairwise_sqdist"]
    g1 = grads_of(build, inputs)
    g2 = grads_of(build, inputs)
    for a, b in zip(g1, g2):
        assert a.tobytes() == b.tobytes()


def test_value_and_grad():
    p = nc.Parameter(A, "a")
    val, g = nc.value_and_grad(lambda q: nc.mean_square(q), [p], p)
    assert val == pytest.approx(np.mean(A ** 2), rel=1e-15)
    np.testing.assert_allclose(g["a"], 2 * A / A.size, rtol=1e-15)


def test_shape_errors():
    with pytest.raises(nc.ShapeError):
        nc.add(nc.Tensor(A), nc.Tensor(W))
    with pytest.raises(nc.ShapeError):
        nc.matmul(nc.Tensor(A), nc.Tensor(A))
    with pytest.raises(nc.ShapeError):
        nc.concat_rows(nc.Tensor(A), nc.Tensor(W))


def test_non_finite_output_raises():
    with pytest.raises(nc.NonFiniteError):
        nc.exp(nc.Tensor(np.array([1000.0])))


def test_backward_requires_scalar_loss():
    p = nc.Parameter(A, "a")
    with nc.Tape():
        out = nc.scale(p, 2.0)
    with pytest.raises(nc.NumcoreError, match="scalar"):
        nc.backward(out, [p])


def test_backward_requires_active_tape():
    p = nc.Parameter(A, "a")
    with nc.no_tape():
        loss = nc.mean_square(p)
    with pytest.raises(nc.NumcoreError, match="tape"):
        nc.backward(loss, [p])


def test_tape_cannot_be_replayed():
    p = nc.Parameter(A, "a")
    with nc.Tape():
        loss = nc.mean_square(p)
    nc.backward(loss, [p])
    with pytest.raises(nc.NumcoreError):
        nc.backward(loss, [p])


def test_parameter_missing_from_tape():
    p = nc.Parameter(A, "a")
    q = nc.Parameter(B, "b")
    with nc.Tape():
        loss = nc.mean_square(p)
    with pytest.raises(nc.NumcoreError, match="b"):
        nc.backward(loss, [p, q])


def test_tensors_are_immutable():
    t = nc.Tensor(A)
    with pytest.raises(ValueError):
        t.data[0, 0] = 1.0
