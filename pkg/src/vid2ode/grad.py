"""Reverse-mode gradients (via jax), Adam, and finite-difference verification."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._jax import jax, jnp


class DivergedLoss(FloatingPointError):
    def __init__(self, term: str, value=None):
        self.term = term
        super().__init__(f"non-finite value or gradient in loss term {term!r} (value={value})")


def group_of(name: str) -> str:
    return name.split("/", 1)[0]


class ParamSet:
    """Named trainable arrays with per-group learning-rate multipliers and freeze flags.

    Names may carry a ``group/index`` form (``coords/3``); multipliers and freeze
    flags apply per group.
    """

    def __init__(self, arrays: dict, lr_mult: dict | None = None, frozen=()):
        self.arrays = {k: np.array(v, dtype=float) for k, v in arrays.items()}
        self.lr_mult = dict(lr_mult or {})
        self.frozen = set(frozen)

    def __getitem__(self, name):
        return self.arrays[name]

    def __setitem__(self, name, value):
        self.arrays[name] = np.array(value, dtype=float)

    def __contains__(self, name):
        return name in self.arrays

    def names(self, group: str | None = None) -> list[str]:
        return [k for k in self.arrays if group is None or group_of(k) == group]

    def is_frozen(self, name: str) -> bool:
        return name in self.frozen or group_of(name) in self.frozen

    def multiplier(self, name: str) -> float:
        return self.lr_mult.get(name, self.lr_mult.get(group_of(name), 1.0))

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def to_vector(self, names=None) -> np.ndarray:
        names = list(self.arrays) if names is None else names
        return np.concatenate([self.arrays[k].ravel() for k in names]) if names else np.zeros(0)

    def from_vector(self, vec, names=None):
        names = list(self.arrays) if names is None else names
        i = 0
        for k in names:
            n = self.arrays[k].size
            self.arrays[k] = np.asarray(vec[i:i + n], float).reshape(self.arrays[k].shape)
            i += n

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self.arrays.items()}, self.lr_mult, self.frozen)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def reset(self, name: str):
        self.m.pop(name, None)
        self.v.pop(name, None)
        self.counts.pop(name, None)


def adam_step(params: ParamSet, grads: dict, state: AdamState, lr: float) -> tuple[ParamSet, AdamState]:
    """Bias-corrected Adam update of every non-frozen name present in ``grads``.

    Names absent from ``grads`` keep their moments untouched (lazy update), so
    per-video variables only move when their video is in the batch.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    state.step += 1
    for name, g in grads.items():
        if params.is_frozen(name):
            continue
        g = np.asarray(g, float)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        t = state.counts.get(name, 0) + 1
        state.counts[name] = t
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        mhat = m / (1 - state.beta1 ** t)
        vhat = v / (1 - state.beta2 ** t)
        params.arrays[name] = params.arrays[name] - lr * params.multiplier(name) * mhat / (np.sqrt(vhat) + state.eps)
    return params, state


def value_and_grad(loss_fn, params: dict, *args, has_aux: bool = False, jit_fn=None):
    """Value and exact reverse-mode gradient of ``loss_fn(params, *args)``.

    ``loss_fn`` returns a scalar, or ``(scalar, parts)`` with ``has_aux`` where
    ``parts`` names the individual loss terms (used in divergence errors).
    """
    fn = jit_fn if jit_fn is not None else jax.value_and_grad(loss_fn, has_aux=has_aux)
    out, grads = fn({k: jnp.asarray(v) for k, v in params.items()}, *args)
    value, parts = out if has_aux else (out, {})
    value = float(value)
    grads = {k: np.asarray(g) for k, g in grads.items()}
    if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        bad = [k for k, v in parts.items() if not np.isfinite(float(v))]
        raise DivergedLoss(bad[0] if bad else "total", value)
    return (value, {k: float(v) for k, v in parts.items()}, grads) if has_aux else (value, grads)


def finite_difference(f, params: dict, name: str, index, h: float) -> float:
    p = {k: np.array(v, float) for k, v in params.items()}
    base = p[name][index]
    p[name][index] = base + h
    fp = float(f(p))
    p[name][index] = base - h
    fm = float(f(p))
    return (fp - fm) / (2 * h)


def grad_check(loss_fn, params: dict, probe_count: int = 8, h: float = 1e-5, seed: int = 0,
               groups=None, min_rel_grad: float = 1e-3, steps: dict | None = None,
               zero_tol: float = 1e-9, fd_zero_tol: float = 1e-6, grad_fn=None) -> dict:
    """Max relative error between reverse-mode and central differences per group.

    Probes are drawn among coordinates whose gradient is at least
    ``min_rel_grad`` of the group's largest, so ratios are meaningful.
    A group whose reverse-mode gradient is below ``zero_tol`` everywhere is
    checked for a vanishing finite difference instead (``zero`` in the report).
    ``steps`` overrides ``h`` per group; ``grad_fn`` is an optional precompiled
    value-and-gradient of ``loss_fn``.
    """
    rng = np.random.default_rng(seed)
    p = {k: np.array(v, float) for k, v in params.items()}
    _, grads = value_and_grad(loss_fn, p, jit_fn=grad_fn)
    report = {}
    for name in (groups or list(p)):
        g = grads[name]
        hh = (steps or {}).get(name, h)
        gmax = float(np.max(np.abs(g))) if g.size else 0.0
        if gmax < zero_tol:
            picks = rng.choice(g.size, size=min(probe_count, g.size), replace=False) if g.size else []
            fd = [abs(finite_difference(loss_fn, p, name, np.unravel_index(f, g.shape), hh)) for f in picks]
            worst = max(fd, default=0.0)
            report[name] = {"max_rel_err": 0.0 if worst < fd_zero_tol else float("inf"),
                            "probes": 0, "zero": True, "max_abs_fd": worst}
            continue
        candidates = np.flatnonzero(np.abs(g).ravel() >= min_rel_grad * gmax)
        picks = rng.choice(candidates, size=min(probe_count, candidates.size), replace=False)
        worst = 0.0
        for flat in picks:
            idx = np.unravel_index(flat, g.shape)
            fd = finite_difference(loss_fn, p, name, idx, hh)
            ad = g[idx]
            worst = max(worst, abs(ad - fd) / max(abs(ad), abs(fd), 1e-300))
        report[name] = {"max_rel_err": float(worst), "probes": int(picks.size), "zero": False}
    return report
