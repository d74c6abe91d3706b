"""Benchmark ODE systems, fixed-step RK4 simulation and finite differences."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .library import CoefficientMatrix, LibrarySpec, build_library


class IntegrationDiverged(FloatingPointError):
    def __init__(self, step: int, msg: str = ""):
        self.step = step
        super().__init__(msg or f"non-finite state at integration step {step}")


class ConfigurationError(ValueError):
    pass


def rk4_step(f, x, h):
    """One classical RK4 step; ``h`` may be negative for backward integration.

    Works on numpy and jax arrays alike. Numpy inputs are checked for finiteness.
    """
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if isinstance(out, np.ndarray) and not np.all(np.isfinite(out)):
        raise IntegrationDiverged(-1)
    return out


@dataclass
class Trajectory:
    states: np.ndarray
    dt: float
    derivative: np.ndarray | None = None

    def __post_init__(self):
        self.states = np.asarray(self.states, float)
        if self.states.ndim != 2 or self.states.shape[0] < 3:
            raise ValueError("trajectory needs at least 3 samples")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.derivative is not None:
            self.derivative = np.asarray(self.derivative, float)
            if self.derivative.shape != self.states.shape:
                raise ValueError("derivative must match states in shape")

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.states)) * self.dt

    def to_csv(self, path):
        d = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *[f"x{i + 1}" for i in range(d)]])
            for t, row in zip(self.times, self.states):
                w.writerow([repr(float(t)), *[repr(float(v)) for v in row]])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
        t = data[:, 0]
        dt = float(np.mean(np.diff(t)))
        return cls(data[:, 1:], dt)


@dataclass(frozen=True)
class SystemSpec:
    """A benchmark system in first-order form (second-order systems are lifted).

    ``coefficients`` maps equation index -> {term name: coefficient} over the
    library of ``n_state`` variables and ``library_degree``.
    """
    name: str
    order: int
    rhs: Callable[[np.ndarray], np.ndarray]
    library_degree: int
    coefficients: dict
    ic_low: tuple
    ic_high: tuple
    reject: Callable[[np.ndarray], bool] | None = None
    params: dict = field(default_factory=dict)

    @property
    def n_state(self) -> int:
        return 2 * self.order

    def library(self) -> LibrarySpec:
        return build_library(self.n_state, self.library_degree)

    @property
    def true_coefficients(self) -> CoefficientMatrix:
        lib = self.library()
        names = lib.term_names()
        values = np.zeros((lib.n_terms, self.n_state))
        for eq, terms in self.coefficients.items():
            for term, c in terms.items():
                values[names.index(term), eq] = c
        pinned = np.zeros(values.shape, bool)
        if self.order == 2:
            pinned[:, :2] = True
        return CoefficientMatrix(values, (values != 0) & ~pinned, pinned)

    def known_equations(self) -> list[int]:
        """Equations given a priori (x' = vx, y' = vy for lifted systems)."""
        return [0, 1] if self.order == 2 else []


def _duffing(p1=0.1, p2=1.0, p3=2.0):
    def f(s):
        x, y = s[..., 0], s[..., 1]
        return np.stack([y, -p1 * y - p2 * x - p3 * x ** 3], axis=-1)
    return f


def _cubic(p1=-0.1, p2=2.0, p3=-2.0, p4=-0.1):
    def f(s):
        x, y = s[..., 0], s[..., 1]
        return np.stack([p1 * x ** 3 + p2 * y ** 3, p3 * x ** 3 + p4 * y ** 3], axis=-1)
    return f


def _vanderpol(mu=0.2):
    def f(s):
        x, y = s[..., 0], s[..., 1]
        return np.stack([y, mu * (1 - x ** 2) * y - x], axis=-1)
    return f


def _oscillator2d():
    def f(s):
        x, y, vx, vy = (s[..., i] for i in range(4))
        return np.stack([vx, vy, -4.0 / 9.0 * x, -1.0 / 9.0 * y], axis=-1)
    return f


def _magnetic():
    def f(s):
        vx, vy = s[..., 2], s[..., 3]
        return np.stack([vx, vy, vy, -vx], axis=-1)
    return f


def _quartic(mu=1.0):
    def f(s):
        x, y, vx, vy = (s[..., i] for i in range(4))
        return np.stack([vx, vy, -mu * (x ** 3 + x * y ** 2), -mu * (x ** 2 * y + y ** 3)], axis=-1)
    return f


def _lifted(f_terms, g_terms):
    return {0: {"vx": 1.0}, 1: {"vy": 1.0}, 2: f_terms, 3: g_terms}


SYSTEMS: dict[str, SystemSpec] = {
    "duffing": SystemSpec(
        "duffing", 1, _duffing(), 3,
        {0: {"y": 1.0}, 1: {"y": -0.1, "x": -1.0, "x^3": -2.0}},
        (-0.8, -0.8), (0.8, 0.8),
        reject=lambda s: abs(s[0]) < 0.75 and abs(s[1]) < 0.5,
        params={"p1": 0.1, "p2": 1.0, "p3": 2.0},
    ),
    "cubic": SystemSpec(
        "cubic", 1, _cubic(), 3,
        {0: {"x^3": -0.1, "y^3": 2.0}, 1: {"x^3": -2.0, "y^3": -0.1}},
        (-1.2, -1.2), (1.2, 1.2),
        reject=lambda s: max(abs(s[0]), abs(s[1])) < 1.1,
        params={"p1": -0.1, "p2": 2.0, "p3": -2.0, "p4": -0.1},
    ),
    "vanderpol": SystemSpec(
        "vanderpol", 1, _vanderpol(), 3,
        {0: {"y": 1.0}, 1: {"x": -1.0, "y": 0.2, "x^2*y": -0.2}},
        (-0.5, -0.5), (0.5, 0.5),
        params={"mu": 0.2},
    ),
    "oscillator2d": SystemSpec(
        "oscillator2d", 2, _oscillator2d(), 2,
        _lifted({"x": -4.0 / 9.0}, {"y": -1.0 / 9.0}),
        (-1.0,) * 4, (1.0,) * 4,
    ),
    "magnetic": SystemSpec(
        "magnetic", 2, _magnetic(), 2,
        _lifted({"vy": 1.0}, {"vx": -1.0}),
        (-0.5,) * 4, (0.5,) * 4,
    ),
    # cubic right-hand sides need a degree-3 library
    "quartic": SystemSpec(
        "quartic", 2, _quartic(), 3,
        _lifted({"x^3": -1.0, "x*y^2": -1.0}, {"x^2*y": -1.0, "y^3": -1.0}),
        (-0.5,) * 4, (0.5,) * 4,
        params={"mu": 1.0},
    ),
}


def get_system(name: str) -> SystemSpec:
    try:
        return SYSTEMS[name]
    except KeyError:
        raise ConfigurationError(f"unknown system {name!r}; choose from {sorted(SYSTEMS)}") from None


def simulate(system, x0, n_steps: int, dt: float, substeps: int = 1) -> Trajectory:
    """Fixed-step RK4 trajectory of ``n_steps`` samples spaced ``dt`` apart.

    ``substeps`` RK4 steps of ``dt / substeps`` are taken between samples.
    The returned derivative column is the exact vector field at each sample.
    """
    f = system.rhs if isinstance(system, SystemSpec) else system
    if n_steps < 3:
        raise ValueError("n_steps must be >= 3")
    x = np.asarray(x0, float).copy()
    if not np.all(np.isfinite(x)):
        raise IntegrationDiverged(0, "initial condition is not finite")
    h = dt / substeps
    out = np.empty((n_steps, x.size))
    out[0] = x
    for k in range(1, n_steps):
        for _ in range(substeps):
            try:
                x = rk4_step(f, x, h)
            except IntegrationDiverged:
                raise IntegrationDiverged(k) from None
        out[k] = x
    return Trajectory(out, dt, np.asarray(f(out)))


def sample_initial_conditions(system: SystemSpec, count: int, seed: int,
                              max_consecutive_rejections: int = 10_000) -> list[np.ndarray]:
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(system.ic_low), np.asarray(system.ic_high)
    out: list[np.ndarray] = []
    misses = 0
    while len(out) < count:
        x0 = rng.uniform(lo, hi)
        if system.reject is not None and system.reject(x0):
            misses += 1
            if misses > max_consecutive_rejections:
                raise ConfigurationError(f"{system.name}: initial-condition rejection never accepts")
            continue
        misses = 0
        out.append(x0)
    return out


def central_diff(X, dt):
    """Interior central differences (rows 1..m-2) of an m x d array (numpy or jax)."""
    if X.shape[0] < 3:
        raise ValueError("central differences need at least 3 samples")
    return (X[2:] - X[:-2]) / (2.0 * dt)


def central_difference(traj: Trajectory) -> np.ndarray:
    """(m-2) x d derivative estimates aligned with samples 1..m-2."""
    return central_diff(traj.states, traj.dt)
