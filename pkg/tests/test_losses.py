import numpy as np
import pytest

from vid2ode._jax import jnp
from vid2ode.discovery import estimate_background, rescale_coefficients
from vid2ode.diagnostics import decoder_fit
from vid2ode.dynamics import get_system, simulate
from vid2ode.video import make_dataset
from vid2ode.library import build_library
from vid2ode.losses import (FrameData, anchor_range, batch_losses, frame_sse, loss_reg, loss_xdot_single,
                            rollout)
from vid2ode.sprite import DecoderParams, decode, init_decoder

LIB = build_library(2, 3)


def true_xi(name):
    return jnp.asarray(get_system(name).true_coefficients.effective())


def test_windowed_sse_equals_full_frame_sse(small_duffing):
    ds = small_duffing
    rng = np.random.default_rng(0)
    S = 12
    dec = DecoderParams(jnp.asarray(rng.normal(size=(S, S, 3))), jnp.asarray(rng.normal(size=(S, S, 1))),
                        jnp.asarray(rng.normal(size=(64, 64, 3))))
    data = FrameData.from_frames(ds.frames, S)
    xs = jnp.asarray(ds.ground_truth.pixel[1, :6] + rng.uniform(-3, 3, (6, 2)))
    xs = xs.at[0].set(jnp.asarray([-4.0, 30.0]))  # partly outside the frame
    fidx = jnp.arange(6)
    fast = np.asarray(frame_sse(xs, fidx, 1, dec, data))
    frames = ds.video(1)
    full = [float(jnp.sum((decode(xs[a], dec) - frames[a]) ** 2)) for a in range(6)]
    np.testing.assert_allclose(fast, full, rtol=1e-11)


def test_anchor_range():
    np.testing.assert_array_equal(anchor_range(10, 3), [3, 4, 5, 6])


def test_rollout_clips_runaway_states():
    xi = jnp.zeros((LIB.n_terms, 2)).at[LIB.index("x^3"), 0].set(50.0)
    traj, hit = rollout(jnp.asarray([[3.0, 0.0], [0.01, 0.0]]), xi, LIB, 0.5, 3)
    assert bool(hit[0]) and not bool(hit[1])
    assert np.all(np.isfinite(np.asarray(traj)))


def test_reg_counts_only_free_entries():
    xi = jnp.full((9, 2), 0.25)
    free = jnp.zeros((9, 2), bool).at[0, 0].set(True)
    assert float(loss_reg(xi, free)) == pytest.approx(0.5 / 18)


def test_xdot_loss_of_exact_second_order_data_is_small():
    sys = get_system("oscillator2d")
    tr = simulate(sys, [0.5, -0.3, 0.2, 0.1], 200, 0.05, substeps=10)
    val = float(loss_xdot_single(jnp.asarray(tr.states[:, :2]), jnp.asarray(sys.true_coefficients.effective()),
                                 sys.library(), 0.05, 2))
    assert val < 1e-8


def test_xdot_loss_with_zero_xi_is_mean_squared_rate():
    X = jnp.asarray(np.c_[np.sin(np.arange(30) * 0.1), np.arange(30) * 0.1])
    d = (X[2:] - X[:-2]) / 0.2
    val = float(loss_xdot_single(X, jnp.zeros((9, 2)), LIB, 0.1, 1))
    assert val == pytest.approx(float(jnp.mean(jnp.sum(d * d, axis=1))))


def test_integration_loss_bounded_by_reconstruction_with_true_dynamics():
    ds = make_dataset("duffing", 4, 100, seed=0)
    fit = decoder_fit(ds, steps=2000)
    dec = fit["decoder"]
    S = dec.sprite_size
    k = ds.render_config.pixels_per_unit
    p = {"coords": jnp.asarray(ds.ground_truth.pixel), "content": dec.content, "mask": dec.mask,
         "background": dec.background, "log_scale": jnp.asarray(-np.log(k)), "shift": jnp.asarray([32.0, 32.0]),
         "angle": jnp.asarray(0.0),
         "xi": jnp.asarray(rescale_coefficients(get_system("duffing").true_coefficients.effective(), LIB, 1.0,
                                                np.array([1.0, -1.0])))}
    args = (jnp.arange(4), FrameData.from_frames(ds.frames, S), jnp.ones((9, 2), bool), jnp.zeros((9, 2)),
            jnp.asarray([1e-3, 1.0, 5e-3]))
    _, parts = batch_losses(p, *args, lib=LIB, dt=ds.dt, q=3, order=1, terms=("recon", "int"))
    assert float(parts["int"]) <= 2 * float(parts["recon"])


# --- invariants ---------------------------------------------------------------

@pytest.mark.invariant
def test_physics_residuals_shrink_with_dt_to_the_fourth():
    sys = get_system("duffing")
    xdot, integ = [], []
    for dt in (0.04, 0.02):
        tr = simulate(sys, [0.9, 0.2], int(round(4.0 / dt)), dt, substeps=20)
        X = jnp.asarray(tr.states)
        xdot.append(float(loss_xdot_single(X, true_xi("duffing"), LIB, dt, 1)))
        roll, _ = rollout(X[:-3], true_xi("duffing"), LIB, dt, 3)
        target = jnp.stack([X[k:len(X) - 3 + k] for k in (1, 2, 3)])
        integ.append(float(jnp.mean(jnp.sum((roll - target) ** 2, axis=-1))))
    assert 14 < xdot[0] / xdot[1] < 18
    assert integ[0] / integ[1] > 14


@pytest.mark.invariant
def test_true_dynamics_beat_zero_dynamics(small_duffing):
    ds = small_duffing
    S = 12
    data = FrameData.from_frames(ds.frames, S)
    dec = init_decoder(64, S, estimate_background(ds.frames))
    pix = ds.ground_truth.pixel
    k = ds.render_config.pixels_per_unit
    # physical coordinates are the simulated states with y flipped (rows grow downward)
    p = {"coords": jnp.asarray(pix), "content": dec.content, "mask": dec.mask, "background": dec.background,
         "log_scale": jnp.asarray(-np.log(k)), "shift": jnp.asarray([32.0, 32.0]), "angle": jnp.asarray(0.0)}
    flip = np.array([1.0, -1.0])
    kw = dict(lib=LIB, dt=ds.dt, q=3, order=1, terms=("recon", "xdot", "int", "reg"))
    xi_true = get_system("duffing").true_coefficients.effective()
    xi_pix = rescale_coefficients(xi_true, LIB, 1.0, flip)
    args = (jnp.arange(2), data, jnp.ones((9, 2), bool), jnp.zeros((9, 2)), jnp.asarray([1e-3, 1.0, 5e-3]))
    t_true, parts = batch_losses(dict(p, xi=jnp.asarray(xi_pix)), *args, **kw)
    t_zero, _ = batch_losses(dict(p, xi=jnp.zeros((9, 2))), *args, **kw)
    assert float(parts["xdot"]) < 1e-3
    assert float(t_true) <= float(t_zero)
