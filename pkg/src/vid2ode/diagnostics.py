"""Finite-difference verification of every loss term on a small synthetic problem."""
from __future__ import annotations

import numpy as np

from ._jax import jax, jnp
from .discovery import TrainConfig, estimate_background, initial_xi, library_for
from .grad import grad_check
from .losses import FrameData, batch_losses, decoder_of
from .sprite import init_decoder
from .transform import initial_transform
from .video import make_dataset

TERMS = ("recon", "xdot", "int", "reg")
# paths that never touch bilinear sampling are held to a tighter bound
SMOOTH_TERMS = ("xdot", "reg")


def gradcheck_problem(system: str = "duffing", n_videos: int = 2, n_frames: int = 16, seed: int = 0):
    """Random but well-conditioned parameters away from sampling kinks."""
    order = 2 if system in ("oscillator2d", "magnetic", "quartic") else 1
    cfg = TrainConfig(model_order=order, library_degree=2 if order == 2 else 3, q=2, sprite_size=8)
    ds = make_dataset(system, n_videos, n_frames, seed=seed)
    rng = np.random.default_rng(seed)
    H, S = ds.resolution, cfg.sprite_size
    dec = init_decoder(H, S, estimate_background(ds.frames))
    pix = ds.ground_truth.pixel
    # keep fractional parts in [0.25, 0.75] so coordinate probes do not cross a cell edge
    coords = np.floor(pix) + rng.uniform(0.25, 0.75, pix.shape)
    lib = library_for(cfg)
    xi = initial_xi(lib, order, 0.0)
    vals = rng.choice([-1.0, 1.0], xi.shape) * rng.uniform(0.15, 0.6, xi.shape)
    xi = xi.with_values(np.where(xi.free, vals, xi.values))
    tp = initial_transform(coords)
    params = {
        "coords": coords,
        "content": rng.normal(size=(S, S, 3)),
        "mask": rng.normal(size=(S, S, 1)),
        "background": np.asarray(dec.background) + 0.1 * rng.normal(size=dec.background.shape),
        "log_scale": np.asarray(tp.log_scale), "shift": tp.shift, "angle": np.asarray(0.05),
        "xi": xi.values,
    }
    data = FrameData.from_frames(ds.frames, S)
    args = (jnp.arange(n_videos), data, jnp.asarray(xi.free),
            jnp.asarray(np.where(xi.pinned, xi.values, 0.0)), jnp.asarray([1.0, 1.0, 1.0]))
    return cfg, lib, params, args


def pipeline_gradcheck(system: str = "duffing", probe_count: int = 6, h: float = 1e-5, seed: int = 0) -> dict:
    """{term: {group: max relative error}} for each loss term in isolation and the total.

    Groups the term does not depend on are omitted; groups with an exactly
    vanishing gradient (the transform inside the reconstruction round trip)
    pass when the finite difference vanishes too.
    """
    cfg, lib, params, args = gradcheck_problem(system, seed=seed)
    names = (*TERMS, "total")
    kw = dict(lib=lib, dt=cfg.dt, q=cfg.q, order=cfg.model_order, terms=TERMS)

    # one compiled function per system; a one-hot weight picks the term
    def weighted(p, w):
        _, parts = batch_losses(p, *args, **kw)
        return sum(w[i] * parts[n] for i, n in enumerate(names))

    f = jax.jit(weighted)
    vg = jax.jit(jax.value_and_grad(weighted))
    out = {}
    for i, term in enumerate(names):
        w = jnp.asarray(np.eye(len(names))[i])
        rep = grad_check(lambda p, w=w: f({k: jnp.asarray(v) for k, v in p.items()}, w), params,
                         probe_count=probe_count, h=h, seed=seed, grad_fn=lambda p, w=w: vg(p, w))
        out[term] = {g: r["max_rel_err"] for g, r in rep.items()
                     if r["probes"] or (term == "recon" and g in ("log_scale", "shift", "angle"))}
    return out


def tolerance_for(term: str) -> float:
    return 1e-6 if term in SMOOTH_TERMS else 1e-4


def decoder_fit(ds, steps: int = 2000, holdout: float = 0.2, sprite_size: int = 12, lr: float = 0.02,
                seed: int = 0) -> dict:
    """Fit only the decoder with coordinates fixed at the manifest pixels.

    A random ``holdout`` share of all frames is kept out of training; returns
    per-pixel MSE on both splits after ``steps`` full-batch Adam steps.
    """
    from .grad import AdamState, ParamSet, adam_step, value_and_grad

    frames = ds.frames.reshape(-1, *ds.frames.shape[2:])
    pix = ds.ground_truth.pixel.reshape(-1, 2)
    rng = np.random.default_rng(seed)
    test = np.zeros(len(frames), bool)
    test[rng.choice(len(frames), int(round(holdout * len(frames))), replace=False)] = True
    H = ds.resolution
    dec = init_decoder(H, sprite_size, estimate_background(ds.frames))
    lib = library_for(TrainConfig())
    fixed = {"log_scale": jnp.asarray(0.0), "shift": jnp.zeros(2), "angle": jnp.asarray(0.0),
             "xi": jnp.zeros((lib.n_terms, 2))}
    mask = (jnp.zeros((lib.n_terms, 2), bool), jnp.zeros((lib.n_terms, 2)), jnp.asarray([0.0, 0.0, 0.0]))
    kw = dict(lib=lib, dt=0.05, q=1, order=1, terms=("recon",))

    def split(sel):
        return FrameData.from_frames(frames[sel][None], sprite_size), jnp.asarray(pix[sel][None])

    train, held = split(~test), split(test)

    def mse(p, part):
        data, coords = part
        _, parts = batch_losses({**fixed, **p, "coords": coords}, jnp.arange(1), data, *mask, **kw)
        return parts["recon_mse"]

    grad_fn = jax.jit(jax.value_and_grad(lambda p: mse(p, train)))
    params = ParamSet({"content": dec.content, "mask": dec.mask, "background": dec.background})
    state = AdamState()
    for _ in range(steps):
        _, g = value_and_grad(None, params.arrays, jit_fn=lambda p: grad_fn(p))
        adam_step(params, g, state, lr)
    p = {k: jnp.asarray(v) for k, v in params.arrays.items()}
    return {"train_mse": float(mse(p, train)), "heldout_mse": float(mse(p, held)),
            "decoder": decoder_of(p), "steps": steps,
            "train_frames": int((~test).sum()), "heldout_frames": int(test.sum())}
