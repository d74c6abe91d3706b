"""The four training losses, evaluated exactly on sprite-sized windows.

Outside the sprite support the decoded frame is ``(1 - PAD_WEIGHT) * background``,
so each frame's squared error is a per-frame constant ``E_j`` (computed from
running sums over the whole frame) plus a correction over an (S+1)^2 window.
Image losses are squared 2-norms per frame (summed over pixels and channels),
averaged over frames; ``*_mse`` companions report the per-pixel mean.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import partial

import numpy as np

from ._jax import jax, jnp
from .dynamics import central_diff, rk4_step
from .library import L_HALF_EPS, LibrarySpec, evaluate
from .sprite import (PAD_WEIGHT, DecoderParams, clamp_coords, object_weight,
                     padded_sprite, sprite_window, squash)
from .transform import to_physical, to_spatial

# rollout states are clipped here so an unstable early Xi cannot overflow
ROLLOUT_CLIP = 1e3
TERM_CLAMP = 1e6


@dataclass
class FrameData:
    """Device-side copy of a dataset's frames in the layout the losses need."""
    padded: jnp.ndarray  # (n, m, H+2P, H+2P, 3) uint8
    flat: jnp.ndarray  # (n, m, H*H*3) uint8
    sq: jnp.ndarray  # (n, m) sum of squared intensities
    valid: jnp.ndarray  # (H+2P, H+2P, 1) 1 inside the frame
    pad: int

    @classmethod
    def from_frames(cls, frames: np.ndarray, sprite_size: int) -> "FrameData":
        frames = np.asarray(frames, np.uint8)
        n, m, H = frames.shape[:3]
        P = 2 * sprite_size
        padded = np.pad(frames, ((0, 0), (0, 0), (P, P), (P, P), (0, 0)))
        valid = np.pad(np.ones((H, H, 1)), ((P, P), (P, P), (0, 0)))
        f = frames.reshape(n, m, -1).astype(float) / 255.0
        return cls(jnp.asarray(padded), jnp.asarray(frames.reshape(n, m, -1)),
                   jnp.asarray(np.einsum("nmd,nmd->nm", f, f)), jnp.asarray(valid), P)

    @property
    def resolution(self) -> int:
        return self.padded.shape[2] - 2 * self.pad

    @property
    def n_pixels(self) -> int:
        return self.flat.shape[2]


jax.tree_util.register_pytree_node(
    FrameData,
    lambda d: ((d.padded, d.flat, d.sq, d.valid), d.pad),
    lambda pad, leaves: FrameData(*leaves, pad),
)


def decoder_of(p) -> DecoderParams:
    return DecoderParams(p["content"], p["mask"], p["background"])


def base_errors(vid, dec: DecoderParams, data: FrameData):
    """E_j: squared error of every frame of video ``vid`` against the sprite-free frame."""
    base = (1.0 - PAD_WEIGHT) * squash(dec.background).reshape(-1)
    F = data.flat[vid].astype(float) / 255.0
    return data.sq[vid] - 2.0 * (F @ base) + base @ base


def window_corrections(xs, fidx, vid, dec: DecoderParams, data: FrameData):
    """Per-point error change caused by placing the sprite at ``xs[a]`` over frame ``fidx[a]``."""
    H, S, P = data.resolution, dec.sprite_size, data.pad
    c_pad, m_pad = padded_sprite(dec)
    bg_pad = jnp.pad(squash(dec.background), ((P, P), (P, P), (0, 0)))

    def one(x, j):
        r0, c0, c, m = sprite_window(clamp_coords(x, H, S), c_pad, m_pad)
        r, cc = r0 + P, c0 + P
        img = jax.lax.dynamic_slice(data.padded, (vid, j, r, cc, 0), (1, 1, S + 1, S + 1, 3))[0, 0] / 255.0
        b = jax.lax.dynamic_slice(bg_pad, (r, cc, 0), (S + 1, S + 1, 3))
        v = jax.lax.dynamic_slice(data.valid, (r, cc, 0), (S + 1, S + 1, 1))
        w = object_weight(m)
        pred = w * c + (1.0 - w) * b
        base = (1.0 - PAD_WEIGHT) * b
        return jnp.sum(v * ((img - pred) ** 2 - (img - base) ** 2))

    return jax.vmap(one)(xs, fidx)


def frame_sse(xs, fidx, vid, dec, data, E=None):
    """Exact sum of squared pixel errors of decode(xs[a]) against frame fidx[a]."""
    if E is None:
        E = base_errors(vid, dec, data)
    return jnp.minimum(E[fidx] + window_corrections(xs, fidx, vid, dec, data), TERM_CLAMP)


# --- physics ---------------------------------------------------------------

def effective_xi(xi, free, pinned_values):
    return jnp.where(free, xi, 0.0) + pinned_values


def lifted_states(xp, dt):
    """(x, y, vx, vy) on frames 1..m-2, velocities by central differences."""
    return jnp.concatenate([xp[1:-1], central_diff(xp, dt)], axis=1)


def loss_xdot_single(xp, xi_eff, lib: LibrarySpec, dt, order):
    if order == 1:
        r = central_diff(xp, dt) - evaluate(lib, xp[1:-1]) @ xi_eff
    else:
        acc = (xp[2:] - 2.0 * xp[1:-1] + xp[:-2]) / dt ** 2
        r = acc - evaluate(lib, lifted_states(xp, dt)) @ xi_eff[:, 2:]
    return jnp.mean(jnp.sum(r * r, axis=1))


def rollout(z0, xi_eff, lib, h, steps):
    """States after 1..steps RK4 steps of size h, shape (steps, A, d), and a clip flag."""
    f = lambda z: evaluate(lib, z) @ xi_eff  # noqa: E731
    out, hit = [], jnp.zeros(z0.shape[0], bool)
    z = z0
    for _ in range(steps):
        z = rk4_step(f, z, h)
        bad = ~jnp.all(jnp.isfinite(z) & (jnp.abs(z) < ROLLOUT_CLIP), axis=1)
        hit = hit | bad
        z = jnp.clip(jnp.nan_to_num(z, nan=0.0), -ROLLOUT_CLIP, ROLLOUT_CLIP)
        out.append(z)
    return jnp.stack(out), hit


def anchor_range(m, q):
    return np.arange(q, m - q)


# --- per-video evaluation ----------------------------------------------------

def video_losses(p, xs, vid, data, lib, dt, q, order, terms, xi_free, xi_pinned):
    """Loss terms for one video; ``terms`` is a static tuple of names to evaluate."""
    dec = decoder_of(p)
    D = data.n_pixels
    m = xs.shape[0]
    xp = to_physical(xs, p["log_scale"], p["shift"], p["angle"])
    out = {}
    E = base_errors(vid, dec, data)
    need_recon = "recon" in terms or "int" in terms
    if need_recon:
        xs_rec = to_spatial(xp, p["log_scale"], p["shift"], p["angle"])
        sse = frame_sse(xs_rec, jnp.arange(m), vid, dec, data, E)
        out["recon"] = jnp.mean(sse)
        out["recon_mse"] = out["recon"] / D
    xi_eff = effective_xi(p["xi"], xi_free, xi_pinned)
    if "xdot" in terms:
        out["xdot"] = loss_xdot_single(xp, xi_eff, lib, dt, order)
    if "int" in terms:
        k = anchor_range(m, q)
        z0 = xp[k] if order == 1 else lifted_states(xp, dt)[k - 1]
        total = jnp.sum(sse[k])
        diverged = jnp.zeros(k.size, bool)
        for sign in (1.0, -1.0):
            traj, hit = rollout(z0, xi_eff, lib, sign * dt, q)
            diverged = diverged | hit
            pos = to_spatial(traj[..., :2], p["log_scale"], p["shift"], p["angle"])
            offs = np.arange(1, q + 1)[:, None] * int(sign)
            fidx = jnp.asarray(k[None, :] + offs)
            err = frame_sse(pos.reshape(-1, 2), fidx.reshape(-1), vid, dec, data, E)
            total = total + jnp.sum(err)
        out["int"] = total / (k.size * (2 * q + 1))
        out["int_mse"] = out["int"] / D
        out["int_diverged"] = jnp.sum(diverged)
    return out


@jax.custom_vjp
def l_half_sum(v):
    return jnp.sum(jnp.sqrt(jnp.abs(v)))


def _l_half_fwd(v):
    return l_half_sum(v), v


def _l_half_bwd(v, g):
    return (g * jnp.sign(v) / (2.0 * jnp.sqrt(jnp.maximum(jnp.abs(v), L_HALF_EPS))),)


l_half_sum.defvjp(_l_half_fwd, _l_half_bwd)


def loss_reg(xi, xi_free):
    """(1/2n) * sum |xi|^(1/2) over free entries, n = number of library terms."""
    return l_half_sum(jnp.where(xi_free, xi, 0.0)) / (2.0 * xi.shape[0])


@partial(jax.jit, static_argnames=("lib", "order", "q", "terms"))
def batch_losses(p, vids, data, xi_free, xi_pinned, lam, *, lib, dt, q, order, terms):
    """Batch-averaged loss terms and the weighted total.

    ``p['coords']`` holds the (B, m, 2) coordinates of videos ``vids``;
    ``lam`` = (lambda1, lambda2, lambda3).
    """
    shared = {k: v for k, v in p.items() if k != "coords"}
    per = jax.vmap(lambda xs, vid: video_losses(shared, xs, vid, data, lib, dt, q, order,
                                                 terms, xi_free, xi_pinned))(p["coords"], vids)
    parts = {k: jnp.mean(v) if k != "int_diverged" else jnp.sum(v) for k, v in per.items()}
    if "reg" in terms:
        parts["reg"] = loss_reg(p["xi"], xi_free)
    total = parts.get("recon", 0.0) if "recon" in terms else 0.0
    total = total + lam[0] * parts.get("xdot", 0.0) + lam[1] * parts.get("int", 0.0) \
        + lam[2] * parts.get("reg", 0.0)
    parts["total"] = total
    return total, parts


@partial(jax.jit, static_argnames=("lib", "order", "q", "terms"))
def batch_value_and_grad(p, vids, data, xi_free, xi_pinned, lam, *, lib, dt, q, order, terms):
    return jax.value_and_grad(
        lambda pp: batch_losses(pp, vids, data, xi_free, xi_pinned, lam,
                                lib=lib, dt=dt, q=q, order=order, terms=terms),
        has_aux=True)(p)
