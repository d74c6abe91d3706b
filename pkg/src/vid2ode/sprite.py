"""Coordinate-consistent decoder: a learnable sprite placed over a learnable background.

The sprite (content + mask logits) is moved with an inverse-parameterized affine
sampler so that its centre lands exactly on the requested pixel coordinate.
Coordinates are (column, row) in [0, H]; pixel ``i`` covers [i, i + 1].
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ._jax import jax, jnp

# mask logit of the object-absent padding, and the constant background mask
PAD_MASK_LOGIT = -10.0
BACKGROUND_MASK_LOGIT = 1.0


class DecoderParams(NamedTuple):
    content: jnp.ndarray  # (S, S, 3) logits
    mask: jnp.ndarray  # (S, S, 1) logits
    background: jnp.ndarray  # (H, H, 3) logits

    @property
    def sprite_size(self) -> int:
        return self.content.shape[0]

    @property
    def resolution(self) -> int:
        return self.background.shape[0]


def squash(z):
    return 0.5 * (jnp.tanh(z) + 1.0)


def unsquash(x, eps=1e-3):
    return np.arctanh(np.clip(2.0 * np.asarray(x, float) - 1.0, -1 + eps, 1 - eps))


def object_weight(m):
    """Object share of the two-way softmax over (m, background mask)."""
    return jax.nn.sigmoid(m - BACKGROUND_MASK_LOGIT)


PAD_WEIGHT = float(1.0 / (1.0 + np.exp(BACKGROUND_MASK_LOGIT - PAD_MASK_LOGIT)))


def init_decoder(resolution: int, sprite_size: int, background=None, mask_logit: float = -2.0) -> DecoderParams:
    S, H = sprite_size, resolution
    if S % 2 or (H - S) % 2 or S > H:
        raise ValueError("sprite size must be even, <= resolution, with even margin")
    bg = np.zeros((H, H, 3)) if background is None else unsquash(background)
    return DecoderParams(jnp.zeros((S, S, 3)), jnp.full((S, S, 1), mask_logit), jnp.asarray(bg))


def affine_inverse_params(x_s, resolution: int, scale=1.0, angle=0.0):
    """2x3 sampler matrix mapping output to source coordinates in [-1, 1] units.

    The forward placement is ``out = scale * R(angle) @ src + t`` with ``t`` the
    normalised position of ``x_s``; this returns its inverse.
    """
    x_s = jnp.asarray(x_s)
    t = 2.0 * x_s / resolution - 1.0
    c, s = jnp.cos(angle), jnp.sin(angle)
    tx, ty = t[0], t[1]
    return jnp.stack([
        jnp.stack([c, -s, -tx * c + ty * s]),
        jnp.stack([s, c, -tx * s - ty * c]),
    ]) / scale


def affine_forward_params(x_s, resolution: int, scale=1.0, angle=0.0):
    x_s = jnp.asarray(x_s)
    t = 2.0 * x_s / resolution - 1.0
    c, s = jnp.cos(angle), jnp.sin(angle)
    return jnp.stack([
        jnp.stack([scale * c, scale * s, t[0]]),
        jnp.stack([-scale * s, scale * c, t[1]]),
    ])


def st_sample(image, params, pad_value=0.0):
    """Bilinear sampling of ``image`` on the grid transformed by ``params`` (2x3).

    Output has the input's size; source points outside the image read ``pad_value``.
    """
    Hs, Ws = image.shape[:2]
    ys = 2.0 * (jnp.arange(Hs) + 0.5) / Hs - 1.0
    xs = 2.0 * (jnp.arange(Ws) + 0.5) / Ws - 1.0
    gx, gy = jnp.meshgrid(xs, ys)
    sx = params[0, 0] * gx + params[0, 1] * gy + params[0, 2]
    sy = params[1, 0] * gx + params[1, 1] * gy + params[1, 2]
    # continuous index space of the source, then shift by 1 for the pad ring
    u = (sx + 1.0) * Ws / 2.0 - 0.5
    v = (sy + 1.0) * Hs / 2.0 - 0.5
    padded = jnp.pad(image, ((1, 1), (1, 1), (0, 0)), constant_values=pad_value)
    u0 = jnp.floor(u)
    v0 = jnp.floor(v)
    fu = (u - u0)[..., None]
    fv = (v - v0)[..., None]

    def idx(a, n):
        return jnp.clip(a.astype(int) + 1, 0, n + 1)

    u0i, u1i = idx(u0, Ws), idx(u0 + 1, Ws)
    v0i, v1i = idx(v0, Hs), idx(v0 + 1, Hs)
    return ((1 - fu) * (1 - fv) * padded[v0i, u0i] + fu * (1 - fv) * padded[v0i, u1i]
            + (1 - fu) * fv * padded[v1i, u0i] + fu * fv * padded[v1i, u1i])


def composite(c_hat, m_hat, background_content):
    w = object_weight(m_hat)
    return (1.0 - w) * background_content + w * c_hat


def sprite_canvas(params: DecoderParams):
    """Sprite embedded in an H x H canvas of object-absent padding."""
    H, S = params.resolution, params.sprite_size
    p = (H - S) // 2
    c = jnp.pad(squash(params.content), ((p, p), (p, p), (0, 0)))
    m = jnp.pad(params.mask, ((p, p), (p, p), (0, 0)), constant_values=PAD_MASK_LOGIT)
    return c, m


def decode(x_s, params: DecoderParams, scale=1.0, angle=0.0):
    """Full H x H x 3 frame with the sprite centred at pixel coordinate ``x_s``."""
    c, m = sprite_canvas(params)
    A = affine_inverse_params(x_s, params.resolution, scale, angle)
    return composite(st_sample(c, A, 0.0), st_sample(m, A, PAD_MASK_LOGIT), squash(params.background))


# --- exact windowed evaluation (translation-only placement) -----------------
#
# Outside the sprite's S x S support every sampled value is padding, so the
# decoded frame there equals (1 - PAD_WEIGHT) * background exactly. Only an
# (S+1) x (S+1) window around the sprite has to be rendered.

def padded_sprite(params: DecoderParams):
    c = jnp.pad(squash(params.content), ((1, 1), (1, 1), (0, 0)))
    m = jnp.pad(params.mask, ((1, 1), (1, 1), (0, 0)), constant_values=PAD_MASK_LOGIT)
    return c, m


def clamp_coords(x_s, resolution: int, sprite_size: int):
    """Beyond this range the sprite no longer touches the frame."""
    return jnp.clip(x_s, -sprite_size, resolution + sprite_size)


def sprite_window(x_s, c_pad, m_pad):
    """Sprite resampled on the (S+1)^2 frame pixels it can touch.

    Returns integer top-left (row, col) of the window in frame pixels and the
    sampled content and mask logits.
    """
    S = c_pad.shape[0] - 2
    ox = x_s[0] - S / 2
    oy = x_s[1] - S / 2
    ix = jnp.floor(ox)
    iy = jnp.floor(oy)
    fx = ox - ix
    fy = oy - iy

    def interp(a):
        r = (1 - fy) * a[1:, :] + fy * a[:-1, :]
        return (1 - fx) * r[:, 1:] + fx * r[:, :-1]

    return iy.astype(int), ix.astype(int), interp(c_pad), interp(m_pad)


def decode_windowed(x_s, params: DecoderParams):
    """Same frame as :func:`decode` (unit scale, zero angle) via the window path."""
    H, S = params.resolution, params.sprite_size
    P = 2 * S
    x_s = clamp_coords(jnp.asarray(x_s), H, S)
    c_pad, m_pad = padded_sprite(params)
    r0, c0, c, m = sprite_window(x_s, c_pad, m_pad)
    bg = squash(params.background)
    bg_pad = jnp.pad(bg, ((P, P), (P, P), (0, 0)))
    b = jax.lax.dynamic_slice(bg_pad, (r0 + P, c0 + P, 0), (S + 1, S + 1, 3))
    w = object_weight(m)
    win = w * c + (1 - w) * b
    frame = jnp.pad((1 - PAD_WEIGHT) * bg, ((P, P), (P, P), (0, 0)))
    frame = jax.lax.dynamic_update_slice(frame, win, (r0 + P, c0 + P, 0))
    return frame[P:P + H, P:P + H]
