"""Learnable spatial <-> physical coordinate transformation.

physical = s * (Q(angle) @ spatial - t),  Q = [[cos, sin], [-sin, cos]]

Both directions read the same parameters. ``s`` is stored as ``log_scale``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _xp(*arrays):
    for a in arrays:
        if not (isinstance(a, (np.ndarray, float, int)) or np.isscalar(a)):
            import jax.numpy as jnp
            return jnp
    return np


@dataclass
class TransformParams:
    log_scale: float
    shift: np.ndarray  # pixel units
    angle: float = 0.0

    @property
    def scale(self) -> float:
        return float(np.exp(self.log_scale))

    @classmethod
    def from_scale(cls, scale: float, shift, angle: float = 0.0) -> "TransformParams":
        if scale <= 0:
            raise ValueError("scale must be positive")
        return cls(float(np.log(scale)), np.asarray(shift, float), float(angle))

    def as_dict(self) -> dict:
        return {"log_scale": np.asarray(self.log_scale, float),
                "shift": np.asarray(self.shift, float),
                "angle": np.asarray(self.angle, float)}

    @classmethod
    def from_dict(cls, d) -> "TransformParams":
        return cls(float(d["log_scale"]), np.asarray(d["shift"], float), float(d["angle"]))


def rotation(angle, xp=np):
    c, s = xp.cos(angle), xp.sin(angle)
    return xp.stack([xp.stack([c, s]), xp.stack([-s, c])])


def to_physical(x_s, log_scale, shift, angle=0.0):
    """Rows of pixel coordinates -> physical states."""
    xp = _xp(x_s, log_scale, shift, angle)
    Q = rotation(xp.asarray(angle, dtype=float), xp)
    return xp.exp(log_scale) * (x_s @ Q.T - shift)


def to_spatial(x_p, log_scale, shift, angle=0.0):
    """Exact inverse of :func:`to_physical`."""
    xp = _xp(x_p, log_scale, shift, angle)
    Q = rotation(xp.asarray(angle, dtype=float), xp)
    return (x_p * xp.exp(-log_scale) + shift) @ Q


def initial_transform(pixel_coords) -> TransformParams:
    """Origin at the centroid of the pixel cloud, scaled to unit RMS radius."""
    P = np.asarray(pixel_coords, float).reshape(-1, 2)
    centre = P.mean(axis=0)
    rms = np.sqrt(np.mean(np.sum((P - centre) ** 2, axis=1)))
    if rms == 0:
        raise ValueError("pixel trajectory cloud is a single point")
    return TransformParams(float(-np.log(rms)), centre, 0.0)
