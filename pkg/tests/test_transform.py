import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from vid2ode._jax import jax, jnp
from vid2ode.dynamics import central_diff
from vid2ode.transform import TransformParams, initial_transform, rotation, to_physical, to_spatial

pts = arrays(float, (12, 2), elements=st.floats(0, 64))
params = st.tuples(st.floats(-4, 1), arrays(float, (2,), elements=st.floats(-40, 40)), st.floats(-np.pi, np.pi))


@given(pts, params)
def test_round_trip(x, prm):
    ls, t, a = prm
    np.testing.assert_allclose(to_spatial(to_physical(x, ls, t, a), ls, t, a), x, atol=1e-9)


def test_initial_transform_centres_and_normalises():
    P = np.random.default_rng(0).uniform(10, 50, (3, 40, 2))
    tp = initial_transform(P)
    xp = to_physical(P.reshape(-1, 2), tp.log_scale, tp.shift)
    np.testing.assert_allclose(xp.mean(axis=0), 0, atol=1e-12)
    assert np.sqrt(np.mean(np.sum(xp ** 2, axis=1))) == pytest.approx(1.0)


def test_initial_transform_rejects_single_point():
    with pytest.raises(ValueError):
        initial_transform(np.ones((5, 2)))


def test_params_dict_round_trip():
    tp = TransformParams.from_scale(0.05, [32.0, 30.0], 0.1)
    back = TransformParams.from_dict(tp.as_dict())
    assert back.scale == pytest.approx(0.05) and back.angle == 0.1
    with pytest.raises(ValueError):
        TransformParams.from_scale(-1.0, [0, 0])


def test_jax_and_numpy_paths_agree():
    x = np.random.default_rng(1).uniform(0, 64, (7, 2))
    a = to_physical(x, -2.0, np.array([30.0, 31.0]), 0.2)
    b = to_physical(jnp.asarray(x), jnp.asarray(-2.0), jnp.asarray([30.0, 31.0]), jnp.asarray(0.2))
    np.testing.assert_allclose(np.asarray(b), a, atol=1e-13)


def test_scale_and_shift_gradients_match_finite_difference():
    rng = np.random.default_rng(2)
    x = jnp.asarray(rng.uniform(0, 64, (20, 2)))
    w = jnp.asarray(rng.normal(size=(20, 2)))
    loss = lambda ls, t: jnp.sum(w * to_physical(x, ls, t, 0.0) ** 2)
    ls, t = jnp.asarray(-2.5), jnp.asarray([31.0, 29.0])
    g_ls, g_t = jax.grad(loss, argnums=(0, 1))(ls, t)
    h = 1e-6
    fd = (loss(ls + h, t) - loss(ls - h, t)) / (2 * h)
    assert abs(fd - g_ls) <= 1e-6 * abs(g_ls)
    for i in range(2):
        e = jnp.zeros(2).at[i].set(h)
        fd = (loss(ls, t + e) - loss(ls, t - e)) / (2 * h)
        assert abs(fd - g_t[i]) <= 1e-6 * abs(g_t[i])


# --- invariants ---------------------------------------------------------------

@pytest.mark.invariant
def test_both_directions_read_one_parameter_set():
    tp = TransformParams(-2.0, np.array([30.0, 30.0]), 0.0)
    x = np.array([[40.0, 20.0]])
    before = to_spatial(to_physical(x, **tp.as_dict()), **tp.as_dict())
    tp.shift[:] = [10.0, 5.0]
    tp.log_scale = -1.0
    xp = to_physical(x, **tp.as_dict())
    np.testing.assert_allclose(xp, np.exp(-1.0) * (x - [10.0, 5.0]))
    np.testing.assert_allclose(to_spatial(xp, **tp.as_dict()), before)


@pytest.mark.invariant
@given(pts, pts, st.floats(0, 1), params)
def test_transform_is_affine(a, b, lam, prm):
    ls, t, ang = prm
    lhs = to_physical(lam * a + (1 - lam) * b, ls, t, ang)
    rhs = lam * to_physical(a, ls, t, ang) + (1 - lam) * to_physical(b, ls, t, ang)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * (1 + np.abs(lhs).max())


@pytest.mark.invariant
@given(params)
def test_derivatives_transform_with_scale_and_rotation(prm):
    ls, t, ang = prm
    dt = 0.05
    tt = np.arange(50) * dt
    xs = np.c_[32 + 10 * np.sin(tt), 30 + 8 * np.cos(0.7 * tt)]
    d_phys = central_diff(to_physical(xs, ls, t, ang), dt)
    expected = np.exp(ls) * central_diff(xs, dt) @ rotation(ang).T
    assert np.max(np.abs(d_phys - expected)) <= 1e-9 * (1 + np.abs(expected).max())
