import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bidpm.field import FieldInit, init_field
from bidpm.flow import GridError, TimeGrid, backward_rollout, forward_rollout, make_grid, synthesize, uniform_grid

from helpers import const_field, scalar_field


def test_uniform_grid_one_and_two_steps():
    g1 = uniform_grid(1)
    assert g1.points == (0.0, 1.0) and g1.weights == (1.0, 1.0)
    g2 = uniform_grid(2)
    assert g2.points == (0.0, 0.5, 1.0) and g2.weights == (1.0, 0.5, 1.0)


def test_uniform_grid_four_steps():
    g = uniform_grid(4)
    assert g.points == (0.0, 0.25, 0.5, 0.75, 1.0)
    assert g.weights == (1.0, 0.5, 0.5, 0.5, 1.0)
    assert g.is_uniform()


@pytest.mark.parametrize("n", [1, 2, 3, 5, 7, 10, 64])
def test_step_sizes_sum_to_one(n):
    assert sum(uniform_grid(n).steps()) == pytest.approx(1.0, abs=n * 2.3e-16)


@pytest.mark.parametrize("bad", [0, -1, 1.5])
def test_uniform_grid_rejects_bad_counts(bad):
    with pytest.raises(GridError):
        uniform_grid(bad)


@pytest.mark.parametrize("points,weights", [
    ((0.0,), (1.0,)),
    ((0.1, 1.0), (1.0, 1.0)),
    ((0.0, 0.9), (1.0, 1.0)),
    ((0.0, 0.6, 0.4, 1.0), None),
    ((0.0, 0.5, 1.0), (1.0, 1.0)),
    ((0.0, 0.5, 1.0), (1.0, -0.5, 1.0)),
])
def test_grid_invariants(points, weights):
    with pytest.raises(GridError):
        TimeGrid(points, weights if weights is not None else tuple([1.0] * len(points)))


def test_non_uniform_grid_is_accepted():
    g = make_grid([0.0, 0.1, 0.6, 1.0])
    assert not g.is_uniform()
    assert g.weights == (1.0, 0.5, 0.5, 1.0)
    out = synthesize(const_field([1.0, -2.0]), np.zeros((1, 2)), g)
    np.testing.assert_allclose(out, [[1.0, -2.0]], rtol=1e-15)


@pytest.mark.parametrize("n", [1, 2, 3, 8])
def test_constant_field_forward_is_exact(n):
    states = forward_rollout(const_field([1.0, 1.0]), np.zeros((1, 2)), uniform_grid(n))
    assert len(states) == n + 1
    np.testing.assert_allclose(states[-1].data, [[1.0, 1.0]], atol=1e-15)


@pytest.mark.parametrize("n", [1, 2, 3, 8])
def test_constant_field_backward_is_exact(n):
    states = backward_rollout(const_field([1.0, 1.0]), np.ones((1, 2)), uniform_grid(n))
    assert len(states) == n + 1
    np.testing.assert_array_equal(states[-1].data, [[1.0, 1.0]])
    np.testing.assert_allclose(states[0].data, [[0.0, 0.0]], atol=1e-15)


def test_euler_bias_forward_hand_value():
    # u = 2t: 0 + 0.5*0 + 0.5*1 = 0.5 (exact integral would be 1)
    out = forward_rollout(scalar_field(lambda t: 2 * t), np.zeros((1, 1)), uniform_grid(2))
    assert out[-1].data[0, 0] == 0.5


def test_euler_bias_backward_hand_value():
    # u = 2t: 0 - 0.5*2 - 0.5*1 = -1.5
    out = backward_rollout(scalar_field(lambda t: 2 * t), np.zeros((1, 1)), uniform_grid(2))
    assert out[0].data[0, 0] == -1.5


def test_zero_field_is_a_fixed_point():
    f = const_field([0.0, 0.0])
    x = np.random.default_rng(0).normal(size=(4, 2))
    for s in forward_rollout(f, x, uniform_grid(3)) + backward_rollout(f, x, uniform_grid(3)):
        np.testing.assert_array_equal(s.data, x)


def test_endpoints_are_pinned():
    f = init_field(2, 8, 8, FieldInit(seed=1, final_scale=1.0))
    x = np.random.default_rng(1).normal(size=(3, 2))
    g = uniform_grid(4)
    assert np.array_equal(forward_rollout(f, x, g)[0].data, x)
    assert np.array_equal(backward_rollout(f, x, g)[-1].data, x)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2), st.integers(1, 12),
       st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_constant_field_round_trip(c, n, x):
    f = const_field(c)
    g = uniform_grid(n)
    x = np.array([x])
    y = synthesize(f, x, g, "forward")
    np.testing.assert_allclose(y, x + np.array(c), atol=1e-12)
    np.testing.assert_allclose(synthesize(f, y, g, "backward"), x, atol=1e-12)


def test_synthesize_constant_directions():
    f = const_field([0.5, -1.0])
    x = np.random.default_rng(2).normal(size=(5, 2))
    np.testing.assert_allclose(synthesize(f, x, uniform_grid(3), "forward"), x + [0.5, -1.0], atol=1e-15)
    np.testing.assert_allclose(synthesize(f, x, uniform_grid(3), "backward"), x - [0.5, -1.0], atol=1e-15)


def test_synthesize_rejects_bad_direction_and_dimension():
    f = const_field([0.5, -1.0])
    with pytest.raises(GridError):
        synthesize(f, np.zeros((1, 2)), uniform_grid(2), "sideways")
    with pytest.raises(GridError):
        forward_rollout(f, np.zeros((1, 3)), uniform_grid(2))
    with pytest.raises(GridError):
        backward_rollout(f, np.zeros(2), uniform_grid(2))


def test_synthesize_does_not_touch_input():
    f = init_field(2, 8, 8, FieldInit(seed=1, final_scale=1.0))
    x = np.random.default_rng(1).normal(size=(3, 2))
    before = x.copy()
    synthesize(f, x, uniform_grid(3))
    assert np.array_equal(x, before)
