"""Polynomial candidate library, sparse coefficient matrices and the STLSQ solver."""
from __future__ import annotations

import csv
import itertools
import warnings
from dataclasses import dataclass, field, replace
from math import comb
from pathlib import Path

import numpy as np

L_HALF_EPS = 1e-4


class ShapeError(ValueError):
    pass


class DegenerateEquationWarning(UserWarning):
    pass


def _xp(a):
    """numpy for plain arrays, jax.numpy for jax arrays and tracers."""
    if isinstance(a, np.ndarray) or np.isscalar(a):
        return np
    import jax.numpy as jnp
    return jnp


@dataclass(frozen=True)
class LibrarySpec:
    n_vars: int
    max_degree: int
    terms: tuple[tuple[int, ...], ...]
    var_names: tuple[str, ...]

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    def term_names(self) -> list[str]:
        return [term_name(t, self.var_names) for t in self.terms]

    def degrees(self) -> np.ndarray:
        return np.array([sum(t) for t in self.terms])

    def index(self, name: str) -> int:
        return self.term_names().index(name)


def default_var_names(n_vars: int) -> tuple[str, ...]:
    if n_vars == 2:
        return ("x", "y")
    if n_vars == 4:
        return ("x", "y", "vx", "vy")
    return tuple(f"x{i + 1}" for i in range(n_vars))


def term_name(exps, var_names) -> str:
    parts = []
    for e, v in zip(exps, var_names):
        if e == 1:
            parts.append(v)
        elif e > 1:
            parts.append(f"{v}^{e}")
    return "*".join(parts) if parts else "1"


def build_library(n_vars: int, max_degree: int, var_names=None) -> LibrarySpec:
    """All monomials of total degree 1..max_degree in graded-lex order (no constant)."""
    if n_vars < 1 or max_degree < 1:
        raise ValueError("n_vars and max_degree must be >= 1")
    terms = []
    for deg in range(1, max_degree + 1):
        block = [e for e in itertools.product(range(deg + 1), repeat=n_vars) if sum(e) == deg]
        # descending lex: x^2 before x*y before y^2
        terms.extend(sorted(block, reverse=True))
    assert len(terms) == comb(n_vars + max_degree, max_degree) - 1
    names = tuple(var_names) if var_names is not None else default_var_names(n_vars)
    return LibrarySpec(n_vars, max_degree, tuple(terms), names)


def evaluate(lib: LibrarySpec, X):
    """Theta(X): m x n_vars states -> m x n_terms monomial values.

    Accepts numpy or jax arrays; a 1-D state is treated as a single row.
    """
    xp = _xp(X)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[-1] != lib.n_vars:
        raise ShapeError(f"expected {lib.n_vars} state columns, got {X.shape[-1]}")
    # powers[v][e] = X[:, v] ** e, built by repeated multiplication so columns are
    # exactly products of lower-degree columns
    powers = []
    for v in range(lib.n_vars):
        col = X[:, v]
        pv = [None, col]
        for _ in range(2, lib.max_degree + 1):
            pv.append(pv[-1] * col)
        powers.append(pv)
    cols = []
    for exps in lib.terms:
        val = None
        for v, e in enumerate(exps):
            if e:
                val = powers[v][e] if val is None else val * powers[v][e]
        cols.append(val)
    theta = xp.stack(cols, axis=-1)
    return theta[0] if single else theta


@dataclass
class CoefficientMatrix:
    """Xi with an active-term mask and optional pinned (known) entries.

    ``values`` holds the pinned values at pinned positions; inactive entries are 0.
    """
    values: np.ndarray
    active: np.ndarray
    pinned: np.ndarray
    notes: tuple[str, ...] = field(default=())

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.active = np.asarray(self.active, dtype=bool)
        self.pinned = np.asarray(self.pinned, dtype=bool)
        if not (self.values.shape == self.active.shape == self.pinned.shape):
            raise ShapeError("values, active and pinned must share a shape")
        self.values = np.where(self.active | self.pinned, self.values, 0.0)

    @classmethod
    def dense(cls, values, pinned=None):
        values = np.asarray(values, dtype=float)
        pinned = np.zeros(values.shape, bool) if pinned is None else np.asarray(pinned, bool)
        return cls(values, ~pinned, pinned)

    @classmethod
    def full(cls, n_terms: int, n_eqs: int, fill: float = 0.1, pinned_values=None):
        """Every unpinned entry active and set to ``fill``."""
        values = np.full((n_terms, n_eqs), fill)
        pinned = np.zeros((n_terms, n_eqs), bool)
        if pinned_values is not None:
            pv = np.asarray(pinned_values, float)
            pinned_cols = ~np.isnan(pv).all(axis=0)
            pinned[:, pinned_cols] = True
            values[:, pinned_cols] = np.nan_to_num(pv[:, pinned_cols])
        return cls(values, ~pinned, pinned)

    @property
    def shape(self):
        return self.values.shape

    @property
    def free(self) -> np.ndarray:
        """Entries the optimizer may change."""
        return self.active & ~self.pinned

    def effective(self) -> np.ndarray:
        return np.where(self.active | self.pinned, self.values, 0.0)

    def support(self) -> np.ndarray:
        """Active, unpinned, nonzero entries."""
        return self.free & (self.values != 0)

    def with_values(self, values) -> "CoefficientMatrix":
        values = np.where(self.pinned, self.values, np.asarray(values, float))
        return replace(self, values=values)

    def copy(self) -> "CoefficientMatrix":
        return CoefficientMatrix(self.values.copy(), self.active.copy(), self.pinned.copy(), self.notes)


def rhs(lib: LibrarySpec, xi: CoefficientMatrix, x):
    """Theta(x) @ Xi for a single state or a batch of states."""
    theta = evaluate(lib, x)
    coeffs = xi.effective() if isinstance(xi, CoefficientMatrix) else xi
    if coeffs.shape[0] != lib.n_terms:
        raise ShapeError(f"Xi has {coeffs.shape[0]} rows, library has {lib.n_terms} terms")
    return theta @ coeffs


def l_half(xi: CoefficientMatrix, eps: float = L_HALF_EPS):
    """(1/2n) sum |xi|^(1/2) over free entries, and its clamped subgradient."""
    n = xi.shape[0]
    v = np.where(xi.free, xi.values, 0.0)
    value = np.sum(np.sqrt(np.abs(v))) / (2 * n)
    grad = np.sign(v) / (4 * n * np.sqrt(np.maximum(np.abs(v), eps)))
    return float(value), grad


def threshold(xi: CoefficientMatrix, tau: float) -> CoefficientMatrix:
    """Permanently deactivate free entries with |xi| < tau."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    small = xi.free & (np.abs(xi.values) < tau)
    active = xi.active & ~small
    values = np.where(small, 0.0, xi.values)
    notes = list(xi.notes)
    for j in range(xi.shape[1]):
        if not xi.pinned[:, j].any() and not active[:, j].any():
            msg = f"equation {j} has no active terms"
            warnings.warn(msg, DegenerateEquationWarning, stacklevel=2)
            if msg not in notes:
                notes.append(msg)
    return CoefficientMatrix(values, active, xi.pinned.copy(), tuple(notes))


def _lstsq(A, b):
    sol, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    return sol, rank < A.shape[1]


def stlsq(X, Xdot, lib: LibrarySpec, tau: float, max_iter: int = 10, theta=None) -> CoefficientMatrix:
    """Sequential thresholded least squares on Theta(X) Xi = Xdot."""
    theta = evaluate(lib, np.asarray(X, float)) if theta is None else theta
    Xdot = np.asarray(Xdot, float)
    if theta.shape[0] < lib.n_terms:
        raise ShapeError("need at least as many samples as library terms")
    n_eqs = Xdot.shape[1]
    values = np.zeros((lib.n_terms, n_eqs))
    active = np.ones((lib.n_terms, n_eqs), bool)
    notes = []
    for j in range(n_eqs):
        keep = np.ones(lib.n_terms, bool)
        for _ in range(max_iter):
            coef = np.zeros(lib.n_terms)
            if keep.any():
                coef[keep], deficient = _lstsq(theta[:, keep], Xdot[:, j])
                if deficient:
                    notes.append(f"rank-deficient design in equation {j}")
            new_keep = keep & (np.abs(coef) >= tau)
            if np.array_equal(new_keep, keep):
                break
            keep = new_keep
        else:
            notes.append(f"equation {j} did not reach a fixed point in {max_iter} iterations")
        # entries that fell below tau on the last fit are dropped without a refit
        keep &= np.abs(coef) >= tau
        values[:, j] = np.where(keep, coef, 0.0)
        active[:, j] = keep
    return CoefficientMatrix(values, active, np.zeros_like(active), tuple(dict.fromkeys(notes)))


def write_coefficients_csv(path, lib: LibrarySpec, xi: CoefficientMatrix, eq_names=None):
    """Coefficient table plus an ``<stem>_mask.csv`` sidecar of active flags."""
    path = Path(path)
    eq_names = list(eq_names) if eq_names is not None else [f"d{v}" for v in lib.var_names[: xi.shape[1]]]
    names = lib.term_names()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["term", *eq_names])
        for i, name in enumerate(names):
            w.writerow([name, *[repr(float(v)) for v in xi.effective()[i]]])
    mask_path = path.with_name(path.stem + "_mask.csv")
    with open(mask_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["term", *eq_names])
        for i, name in enumerate(names):
            w.writerow([name, *[int(a) + 2 * int(p) for a, p in zip(xi.active[i], xi.pinned[i])]])
    return path, mask_path


def read_coefficients_csv(path) -> tuple[list[str], list[str], CoefficientMatrix]:
    path = Path(path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    eqs = rows[0][1:]
    terms = [r[0] for r in rows[1:]]
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    mask_path = path.with_name(path.stem + "_mask.csv")
    if mask_path.exists():
        with open(mask_path) as fh:
            mrows = list(csv.reader(fh))[1:]
        codes = np.array([[int(v) for v in r[1:]] for r in mrows])
        active, pinned = (codes & 1).astype(bool), (codes & 2).astype(bool)
    else:
        active, pinned = values != 0, np.zeros(values.shape, bool)
    return terms, eqs, CoefficientMatrix(values, active, pinned)
