"""Two-step baseline (extract coordinates, then regress) and ablation modes."""
from __future__ import annotations

import csv
import dataclasses
import time
from enum import Enum

import numpy as np

from .discovery import (LOSS_AUDIT, DiscoveryReport, Trainer, TrainConfig, equation_names,
                        estimate_background, initial_xi, library_for, localize, run_discovery)
from .dynamics import central_diff
from .library import CoefficientMatrix, LibrarySpec, evaluate
from .transform import TransformParams, to_physical


class AblationMode(str, Enum):
    TWO_STEP = "two_step"
    NO_TRANSFORM = "no_transform"
    NO_INT_LOSS = "no_int_loss"
    FULL = "full"


def _ridge_solve(A, b, lam):
    if lam > 0:
        return np.linalg.lstsq(A.T @ A + lam * np.eye(A.shape[1]), A.T @ b, rcond=None)
    return np.linalg.lstsq(A, b, rcond=None)


def stridge_column(theta, y, tol, ridge_lambda, normalize, max_iter=10):
    """Sequential thresholded ridge regression for one target column.

    Columns of ``theta`` are scaled to unit ``normalize``-norm before fitting and
    thresholding; ``normalize=0`` disables scaling. Returns (coefficients, notes).
    """
    n, d = theta.shape
    notes = []
    if normalize:
        norms = np.linalg.norm(theta, ord=normalize, axis=0)
        scale = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 0.0)
    else:
        scale = np.ones(d)
    X = theta * scale
    w = _ridge_solve(X, y, ridge_lambda)[0]
    if np.linalg.matrix_rank(X) < d:
        notes.append("normalised design is rank deficient; minimum-norm solution used")
    big = np.abs(w) >= tol
    for _ in range(max_iter):
        if not big.any():
            break
        w = np.zeros(d)
        w[big] = _ridge_solve(X[:, big], y, ridge_lambda)[0]
        new_big = big & (np.abs(w) >= tol)
        if np.array_equal(new_big, big):
            break
        big = new_big
    else:
        notes.append(f"thresholding did not reach a fixed point in {max_iter} iterations")
    w = np.zeros(d)
    if big.any():
        w[big] = np.linalg.lstsq(X[:, big], y, rcond=None)[0]
    return w * scale, big, notes


def stridge(X, Xdot, lib: LibrarySpec, tol: float = 0.05, ridge_lambda: float = 1e-12,
            normalize: float = 1.0, max_iter: int = 10, pinned: CoefficientMatrix | None = None,
            theta=None) -> CoefficientMatrix:
    """STRidge on every equation; pinned columns of ``pinned`` are copied through."""
    X = np.asarray(X, float)
    Xdot = np.asarray(Xdot, float)
    if X.shape[0] < lib.n_terms:
        raise ValueError("need at least as many samples as library terms")
    theta = evaluate(lib, X) if theta is None else theta
    n_eqs = Xdot.shape[1] if pinned is None else pinned.shape[1]
    values = np.zeros((lib.n_terms, n_eqs))
    active = np.zeros_like(values, bool)
    pin = np.zeros_like(values, bool) if pinned is None else pinned.pinned.copy()
    notes = []
    col = 0
    for i in range(n_eqs):
        if pin[:, i].any():
            values[:, i] = pinned.values[:, i]
            continue
        w, big, nt = stridge_column(theta, Xdot[:, col], tol, ridge_lambda, normalize, max_iter)
        col += 1
        values[:, i], active[:, i] = w, big
        notes += [f"equation {i}: {t}" for t in nt]
    return CoefficientMatrix(values, active, pin, tuple(notes))


def regression_data(xp: np.ndarray, dt: float, order: int):
    """Stacked (states, targets) from per-video physical positions (n, m, 2)."""
    Xs, Ys = [], []
    for p in xp:
        if order == 1:
            Xs.append(p[1:-1])
            Ys.append(central_diff(p, dt))
        else:
            Xs.append(np.concatenate([p[1:-1], central_diff(p, dt)], axis=1))
            Ys.append((p[2:] - 2.0 * p[1:-1] + p[:-2]) / dt ** 2)
    return np.concatenate(Xs), np.concatenate(Ys)


def run_two_step(ds, cfg: TrainConfig, *, pixel_coords=None, pixels_per_unit: float = 20.0,
                 tol: float = 0.05, ridge_lambda: float = 1e-12, normalize: float = 1.0,
                 log=None) -> DiscoveryReport:
    """Coordinates from reconstruction-only training, fixed transform, then STRidge.

    ``pixel_coords`` bypasses extraction (e.g. to feed ground-truth pixels).
    The physical frame puts the origin at the frame centre with a fixed scale.
    """
    ds = ds.without_ground_truth()
    t0 = time.time()
    lib = library_for(cfg)
    trace, flagged, stage_losses = [], [], {}
    audit_before = dict(LOSS_AUDIT)
    if pixel_coords is None:
        bg = estimate_background(ds.frames)
        loc = localize(ds, bg)
        tr = Trainer(ds, cfg, loc.coords, bg, log=log)
        tr.run_stage("pretrain", cfg.epochs("pretrain"), ("recon",))
        coords, trace, flagged = tr.coords(), tr.trace, loc.flagged
        decoder = tr.decoder()
        stage_losses["pretrain"] = {"end": tr.evaluate(("recon",))}
    else:
        coords = np.asarray(pixel_coords, float)
        decoder = None
    for term in ("xdot", "int"):
        if LOSS_AUDIT.get(term, 0) != audit_before.get(term, 0):
            raise AssertionError(f"two-step extraction evaluated the {term} loss")
    H = ds.resolution
    tf = TransformParams(float(np.log(1.0 / pixels_per_unit)), np.full(2, H / 2.0))
    phys = np.asarray(to_physical(coords, tf.log_scale, tf.shift))
    X, Y = regression_data(phys, ds.dt, cfg.model_order)
    template = initial_xi(lib, cfg.model_order, 0.0)
    xi = stridge(X, Y, lib, tol, ridge_lambda, normalize, pinned=template if cfg.model_order == 2 else None)
    cfg_d = dataclasses.asdict(cfg)
    cfg_d.update(two_step={"pixels_per_unit": pixels_per_unit, "tol": tol,
                           "ridge_lambda": ridge_lambda, "normalize": normalize})
    return DiscoveryReport(
        system_name=ds.system_name, mode=AblationMode.TWO_STEP.value, config=cfg_d, lib=lib, xi=xi,
        xi_stages={"regression": xi}, transform=tf, coords=coords, physical=phys, decoder=decoder,
        loss_trace=trace, stage_losses=stage_losses, final_losses={}, wall_clock=time.time() - t0,
        flagged_frames=flagged)


def run_ablation(ds, cfg: TrainConfig, mode, log=None) -> DiscoveryReport:
    mode = AblationMode(mode)
    if mode is AblationMode.TWO_STEP:
        return run_two_step(ds, cfg, log=log)
    if mode is AblationMode.NO_TRANSFORM:
        return run_discovery(ds, cfg, no_transform=True, mode=mode.value, log=log, tolerate_divergence=True)
    if mode is AblationMode.NO_INT_LOSS:
        return run_discovery(ds, dataclasses.replace(cfg, lambda2=0.0), mode=mode.value, log=log,
                             tolerate_divergence=True)
    return run_discovery(ds, cfg, mode=mode.value, log=log)


def write_comparison_csv(path, reports: dict, system):
    """One row per method with TPT / FPT per unknown equation, plus the reference counts."""
    names = [n for i, n in enumerate(equation_names(system.order)) if i not in system.known_equations()]
    truth = system.true_coefficients.support()
    eq_idx = [equation_names(system.order).index(n) for n in names]
    header = ["method"] + [f"{n}_{k}" for n in names for k in ("tpt", "fpt")] + ["diverged", "L_int"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerow(["reference"] + [v for i in eq_idx for v in (int(truth[:, i].sum()), 0)] + ["", ""])
        for mode, rep in reports.items():
            ev = rep.evaluation or {}
            sc = ev.get("scores", {})
            row = [mode] + [sc.get(n, {}).get(k, "") for n in names for k in ("tpt", "fpt")]
            row += [rep.diverged, rep.final_losses.get("int", "")]
            w.writerow(row)
    return path
