"""End-to-end equation discovery from pixels.

Per-frame pixel coordinates (initialised by background-subtraction
localisation), a spatial-physical transform, a sprite decoder and a sparse
coefficient matrix are optimised jointly in four stages: pretrain, total,
threshold and refine.
"""
from __future__ import annotations

import dataclasses
import json
import time
import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ._jax import jax, jnp
from .grad import AdamState, DivergedLoss, ParamSet, adam_step, value_and_grad
from .library import CoefficientMatrix, LibrarySpec, ShapeError, build_library, threshold
from .losses import FrameData, batch_losses, batch_value_and_grad
from .sprite import DecoderParams, init_decoder, squash
from .transform import TransformParams, initial_transform, to_physical
from .video import VideoDataset

STAGES = ("pretrain", "total", "threshold", "refine")
ALL_TERMS = ("recon", "xdot", "int", "reg")

# every evaluation of a loss term is counted here (keys: term names)
LOSS_AUDIT: Counter = Counter()


class StageDiverged(RuntimeError):
    def __init__(self, stage: str, term: str, last_losses: dict):
        self.stage, self.term, self.last_losses = stage, term, last_losses
        super().__init__(f"stage {stage!r} diverged in loss term {term!r}; last finite losses: {last_losses}")


class DegenerateTrajectoryError(ValueError):
    pass


# --- localisation ------------------------------------------------------------

@dataclass
class LatentCoords:
    coords: np.ndarray  # (n_videos, n_frames, 2) pixel (col, row)
    flagged: list = field(default_factory=list)  # (video, frame) with empty foreground


def estimate_background(frames: np.ndarray, max_frames: int = 4000) -> np.ndarray:
    """Per-pixel median over the frames of every video, in [0, 1]."""
    flat = frames.reshape(-1, *frames.shape[-3:])
    if flat.shape[0] > max_frames:
        flat = flat[np.linspace(0, flat.shape[0] - 1, max_frames).astype(int)]
    return np.median(flat, axis=0) / 255.0


def localize(ds: VideoDataset, background: np.ndarray | None = None) -> LatentCoords:
    """Foreground-weighted centroid per frame.

    The foreground weight is the channel-summed absolute difference to the
    median background, kept where it exceeds 3x its per-frame median.
    """
    if ds.n_frames < 3:
        raise ValueError("localisation needs at least 3 frames per video")
    bg = estimate_background(ds.frames) if background is None else background
    H = ds.resolution
    centres = np.arange(H) + 0.5
    coords = np.zeros((ds.n_videos, ds.n_frames, 2))
    flagged = []
    for v in range(ds.n_videos):
        w = np.abs(ds.frames[v] / 255.0 - bg).sum(axis=-1)  # (m, H, H)
        cut = 3.0 * np.median(w.reshape(ds.n_frames, -1), axis=1)
        w = np.where(w > cut[:, None, None], w, 0.0)
        mass = w.sum(axis=(1, 2))
        ok = mass > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            coords[v, :, 0] = (w.sum(axis=1) @ centres) / mass
            coords[v, :, 1] = (w.sum(axis=2) @ centres) / mass
        if not ok.all():
            good = np.flatnonzero(ok)
            for j in np.flatnonzero(~ok):
                flagged.append((v, int(j)))
                if good.size:
                    coords[v, j] = coords[v, good[np.argmin(np.abs(good - j))]]
                else:
                    coords[v, j] = H / 2.0
    return LatentCoords(np.clip(coords, 0.0, H), flagged)


# --- configuration -----------------------------------------------------------

@dataclass
class TrainConfig:
    lambda1: float = 1e-3
    lambda2: float = 1.0
    lambda3: float = 5e-3
    q: int = 3
    dt: float = 0.05
    threshold: float = 0.05
    threshold_interval: int = 100
    epochs_pretrain: int = 300
    epochs_total: int = 300
    epochs_threshold: int = 300
    epochs_refine: int = 200
    lr: float = 1e-3
    model_order: int = 1
    library_degree: int = 3
    batch_size: int = 1
    seed: int = 0
    desk_scale: float = 1.0
    sprite_size: int = 12
    xi_init: float = 0.1
    mask_init: float = -2.0
    lr_coords: float = 20.0
    lr_decoder: float = 20.0
    lr_transform: float = 5.0
    lr_xi: float = 5.0
    learn_rotation: bool = False
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("q must be >= 1")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.model_order not in (1, 2):
            raise ValueError("model_order must be 1 or 2")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.batch_size < 1 or self.desk_scale <= 0:
            raise ValueError("batch_size and desk_scale must be positive")

    def epochs(self, stage: str) -> int:
        n = getattr(self, f"epochs_{stage}")
        return 0 if n == 0 else max(1, int(round(n * self.desk_scale)))

    @property
    def scaled_threshold_interval(self) -> int:
        return max(1, int(round(self.threshold_interval * self.desk_scale)))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise KeyError(f"unknown config keys: {unknown}")
        return cls(**d)

    @classmethod
    def preset(cls, system: str, **overrides) -> "TrainConfig":
        base = dict(PRESETS[system])
        base.update(overrides)
        return cls(**base)


# Per-system hyperparameters; epochs are full-scale counts, shrunk by desk_scale.
PRESETS = {
    "duffing": dict(model_order=1, library_degree=3, batch_size=1, lambda3=5e-3,
                    epochs_pretrain=100, epochs_total=500, epochs_threshold=300),
    "cubic": dict(model_order=1, library_degree=3, batch_size=2, lambda3=2e-3, epochs_total=300),
    "vanderpol": dict(model_order=1, library_degree=3, batch_size=2, lambda3=5e-3,
                      epochs_pretrain=300, epochs_total=300),
    "oscillator2d": dict(model_order=2, library_degree=2, batch_size=2, lambda3=5e-3, epochs_pretrain=300),
    "magnetic": dict(model_order=2, library_degree=2, batch_size=8, lambda3=5e-3,
                     epochs_pretrain=300, epochs_total=500),
    "quartic": dict(model_order=2, library_degree=3, batch_size=2, lambda3=5e-3, epochs_pretrain=300),
}


def desk_preset(system: str, **overrides) -> "TrainConfig":
    """Reduced schedule for a handful of videos: one video per Adam step, 1/5 of the epochs."""
    base = dict(desk_scale=0.2, batch_size=1)
    base.update(overrides)
    return TrainConfig.preset(system, **base)


def library_for(cfg: TrainConfig) -> LibrarySpec:
    return build_library(2 * cfg.model_order, cfg.library_degree)


def initial_xi(lib: LibrarySpec, order: int, fill: float) -> CoefficientMatrix:
    n_eqs = 2 * order
    if order == 1:
        return CoefficientMatrix.full(lib.n_terms, n_eqs, fill)
    pv = np.full((lib.n_terms, n_eqs), np.nan)
    pv[:, :2] = 0.0
    pv[lib.index("vx"), 0] = 1.0
    pv[lib.index("vy"), 1] = 1.0
    return CoefficientMatrix.full(lib.n_terms, n_eqs, fill, pinned_values=pv)


def equation_names(order: int) -> list[str]:
    return ["x", "y"] if order == 1 else ["x", "y", "vx", "vy"]


# --- report ------------------------------------------------------------------

@dataclass
class DiscoveryReport:
    system_name: str
    mode: str
    config: dict
    lib: LibrarySpec
    xi: CoefficientMatrix
    xi_stages: dict
    transform: TransformParams
    coords: np.ndarray  # spatial (n, m, 2)
    physical: np.ndarray  # (n, m, 2)
    decoder: DecoderParams
    loss_trace: list
    stage_losses: dict
    final_losses: dict
    wall_clock: float
    flagged_frames: list = field(default_factory=list)
    int_diverged: int = 0
    notes: list = field(default_factory=list)
    evaluation: dict | None = None

    @property
    def order(self) -> int:
        return self.xi.shape[1] // 2

    @property
    def diverged(self) -> bool:
        return self.int_diverged > 0 or not all(np.isfinite(v) for v in self.final_losses.values())

    def evaluate(self, system, ground_truth=None, translate: bool | None = None) -> dict:
        """Rescale against ground truth (or unit RMS) and score against ``system``."""
        translate = system.name == "magnetic" if translate is None else translate
        ref = None if ground_truth is None else ground_truth.physical[..., :2].reshape(-1, 2)
        rs = rescale(self.xi, self.lib, self.physical.reshape(-1, 2), ref, translate=translate)
        sc = score(rs.xi, system, self.lib)
        names = equation_names(self.order)
        self.evaluation = {
            "alpha": rs.alpha, "signs": rs.signs.tolist(), "translation": rs.translation.tolist(),
            "xi_rescaled": rs.xi.values.tolist(),
            "equations": equation_strings(rs.xi, self.lib, names),
            "scores": sc,
            "tpt": [sc[n]["tpt"] for n in sc], "fpt": [sc[n]["fpt"] for n in sc],
        }
        return self.evaluation

    def to_json(self) -> dict:
        names = equation_names(self.order)
        return {
            "system": self.system_name,
            "mode": self.mode,
            "config": self.config,
            "terms": self.lib.term_names(),
            "equation_names": names,
            "xi": self.xi.values.tolist(),
            "active": self.xi.active.tolist(),
            "pinned": self.xi.pinned.tolist(),
            "xi_stages": {k: v.values.tolist() for k, v in self.xi_stages.items()},
            "equations_learned": equation_strings(self.xi, self.lib, names),
            "transform": {"scale": self.transform.scale, "shift": self.transform.shift.tolist(),
                          "angle": self.transform.angle},
            "stage_losses": self.stage_losses,
            "final_losses": self.final_losses,
            "wall_clock_s": self.wall_clock,
            "flagged_frames": [list(f) for f in self.flagged_frames],
            "int_diverged": self.int_diverged,
            "diverged": self.diverged,
            "notes": list(self.notes) + list(self.xi.notes),
            "evaluation": self.evaluation,
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)


def equation_strings(xi: CoefficientMatrix, lib: LibrarySpec, names, digits: int = 3) -> list[str]:
    terms = lib.term_names()
    out = []
    for i, name in enumerate(names):
        parts = []
        for j in np.flatnonzero((xi.active[:, i] | xi.pinned[:, i]) & (xi.values[:, i] != 0)):
            c = xi.values[j, i]
            mag = f"{abs(c):.{digits}g}"
            body = terms[j] if mag == "1" and xi.pinned[j, i] else f"{mag} {terms[j]}"
            parts.append(("- " if c < 0 else "+ ") + body)
        rhs = " ".join(parts).lstrip("+ ") if parts else "0"
        if rhs.startswith("- "):
            rhs = "-" + rhs[2:]
        out.append(f"d{name}/dt = {rhs}")
    return out


# --- rescaling and scoring ---------------------------------------------------

@dataclass
class RescaleResult:
    alpha: float
    signs: np.ndarray
    translation: np.ndarray
    xi: CoefficientMatrix


def rescale_coefficients(values, lib: LibrarySpec, alpha: float, signs=None) -> np.ndarray:
    """Coefficients for true = alpha * signs * learned: xi' = xi * s / alpha^(d-1).

    ``s`` is the product of the axis signs raised to each variable's exponent,
    times the sign of the equation's axis. Velocities share their position's sign.
    """
    values = np.asarray(values, float)
    n_eqs = values.shape[1]
    signs = np.ones(2) if signs is None else np.asarray(signs, float)
    var_sign = np.array([signs[i % 2] for i in range(lib.n_vars)])
    eq_sign = np.array([signs[i % 2] for i in range(n_eqs)])
    deg = np.asarray(lib.degrees())
    term_sign = np.prod(var_sign[None, :] ** np.asarray(lib.terms), axis=1)
    factor = term_sign[:, None] * eq_sign[None, :] / alpha ** (deg[:, None] - 1.0)
    return values * factor


def _rms(P):
    return float(np.sqrt(np.mean(np.sum(P * P, axis=1))))


def rescale(xi: CoefficientMatrix, lib: LibrarySpec, learned, reference=None,
            translate: bool = False) -> RescaleResult:
    """Map learned coefficients to the reference coordinate scale.

    ``alpha`` is the RMS ratio reference / learned (RMS radius about the origin,
    or about the means when ``translate``). Without a reference the learned
    trajectory is normalised to unit RMS. Axis signs come from correlations.
    """
    u = np.asarray(learned, float).reshape(-1, 2)
    uc = u - u.mean(axis=0) if translate else u
    if _rms(uc) == 0:
        raise DegenerateTrajectoryError("learned trajectory has zero RMS")
    if reference is None:
        alpha, signs, xc = 1.0 / _rms(uc), np.ones(2), None
    else:
        x = np.asarray(reference, float).reshape(-1, 2)
        xc = x - x.mean(axis=0) if translate else x
        alpha = _rms(xc) / _rms(uc)
        corr = np.sum(uc * xc, axis=0)
        signs = np.where(corr < 0, -1.0, 1.0)
    translation = np.zeros(2)
    if translate and reference is not None:
        translation = x.mean(axis=0) - alpha * signs * u.mean(axis=0)
    values = rescale_coefficients(xi.values, lib, alpha, signs)
    new = CoefficientMatrix(np.where(xi.pinned, xi.values, values), xi.active, xi.pinned, xi.notes)
    return RescaleResult(float(alpha), signs, translation, new)


def score(xi: CoefficientMatrix, system, lib: LibrarySpec | None = None) -> dict:
    """TPT / FPT per unknown equation against ``system``'s true coefficients."""
    truth = system.true_coefficients
    if xi.shape != truth.shape or (lib is not None and lib.n_terms != truth.shape[0]):
        raise ShapeError(f"coefficient shape {xi.shape} does not match system {truth.shape}")
    names = equation_names(system.order)
    found = xi.support()
    out = {}
    for i, name in enumerate(names):
        if i in system.known_equations():
            continue
        true_i = truth.support()[:, i]
        out[name] = {"tpt": int(np.sum(found[:, i] & true_i)),
                     "fpt": int(np.sum(found[:, i] & ~true_i)),
                     "true_terms": int(np.sum(true_i))}
    return out


# --- training ----------------------------------------------------------------

DECODER_GROUPS = ("content", "mask", "background")
TRANSFORM_GROUPS = ("log_scale", "shift", "angle")


class Trainer:
    """Holds all trainables and runs epochs of batched Adam steps."""

    def __init__(self, ds: VideoDataset, cfg: TrainConfig, coords0: np.ndarray,
                 background: np.ndarray, no_transform: bool = False, log=None):
        self.cfg = cfg
        self.lib = library_for(cfg)
        self.H = ds.resolution
        self.n_videos, self.m = ds.n_videos, ds.n_frames
        self.data = FrameData.from_frames(ds.frames, cfg.sprite_size)
        self.log = log or (lambda msg: None)
        self.no_transform = no_transform
        dec = init_decoder(self.H, cfg.sprite_size, background, cfg.mask_init)
        tp = TransformParams(0.0, np.zeros(2)) if no_transform else initial_transform(coords0)
        self.xi = initial_xi(self.lib, cfg.model_order, cfg.xi_init)
        arrays = {f"coords/{i}": coords0[i] for i in range(self.n_videos)}
        arrays.update(content=dec.content, mask=dec.mask, background=dec.background,
                      log_scale=tp.log_scale, shift=tp.shift, angle=tp.angle, xi=self.xi.values)
        mult = {"coords": cfg.lr_coords, "content": cfg.lr_decoder, "mask": cfg.lr_decoder,
                "background": cfg.lr_decoder, "log_scale": cfg.lr_transform,
                "shift": cfg.lr_transform, "angle": cfg.lr_transform, "xi": cfg.lr_xi}
        self.params = ParamSet(arrays, mult)
        self.adam = AdamState(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        self.rng = np.random.default_rng(cfg.seed)
        self.lam = jnp.asarray([cfg.lambda1, cfg.lambda2, cfg.lambda3])
        self.trace: list[dict] = []
        self.int_diverged = 0

    # parameter plumbing
    def batch_params(self, vids) -> dict:
        p = {k: jnp.asarray(self.params[k]) for k in
             (*DECODER_GROUPS, *TRANSFORM_GROUPS, "xi")}
        p["coords"] = jnp.asarray(np.stack([self.params[f"coords/{v}"] for v in vids]))
        return p

    def _kw(self, terms):
        return dict(lib=self.lib, dt=float(self.cfg.dt), q=self.cfg.q,
                    order=self.cfg.model_order, terms=tuple(terms))

    def _masks(self):
        free = jnp.asarray(self.xi.free)
        pinned = jnp.asarray(np.where(self.xi.pinned, self.xi.values, 0.0))
        return free, pinned

    def trainable(self, stage: str) -> set:
        if stage == "pretrain":
            groups = {"coords", *DECODER_GROUPS}
        elif stage == "refine":
            groups = {"xi"}
        else:
            groups = {"coords", *DECODER_GROUPS, "xi"}
            if not self.no_transform:
                groups |= {"log_scale", "shift"}
                if self.cfg.learn_rotation:
                    groups.add("angle")
        return groups

    def batches(self):
        B = min(self.cfg.batch_size, self.n_videos)
        perm = self.rng.permutation(self.n_videos)
        for i in range(0, self.n_videos, B):
            b = perm[i:i + B]
            if b.size < B:
                b = np.concatenate([b, perm[:B - b.size]])
            yield b

    def step(self, vids, terms, groups) -> dict:
        for t in terms:
            LOSS_AUDIT[t] += 1
        free, pinned = self._masks()
        kw = self._kw(terms)
        fn = lambda p, *a: batch_value_and_grad(p, *a, **kw)  # noqa: E731
        _, parts, grads = value_and_grad(None, self.batch_params(vids), jnp.asarray(vids), self.data,
                                         free, pinned, self.lam, has_aux=True, jit_fn=fn)
        named = {}
        for g in groups:
            if g == "coords":
                for k, v in enumerate(vids):
                    name = f"coords/{v}"
                    named[name] = named.get(name, 0.0) + grads["coords"][k]
            else:
                named[g] = grads[g]
        self.params.frozen = {g for g in ("coords", *DECODER_GROUPS, *TRANSFORM_GROUPS, "xi")
                              if g not in groups}
        adam_step(self.params, named, self.adam, self.cfg.lr)
        for v in set(int(v) for v in vids):
            name = f"coords/{v}"
            self.params[name] = np.clip(self.params[name], 0.0, self.H)
        if "xi" in groups:
            self.params["xi"] = np.where(self.xi.free, self.params["xi"], self.xi.values)
        self.int_diverged += int(parts.get("int_diverged", 0))
        return parts

    def evaluate(self, terms=ALL_TERMS) -> dict:
        """Loss terms averaged over all videos, without updating anything."""
        for t in terms:
            LOSS_AUDIT[t] += 1
        free, pinned = self._masks()
        acc: dict = {}
        n = 0
        B = min(self.cfg.batch_size, self.n_videos)
        order = np.arange(self.n_videos)
        for i in range(0, self.n_videos, B):
            vids = order[i:i + B]
            _, parts = batch_losses(self.batch_params(vids), jnp.asarray(vids), self.data, free, pinned,
                                    self.lam, **self._kw(terms))
            for k, v in parts.items():
                acc[k] = acc.get(k, 0.0) + float(v) * (len(vids) if k != "int_diverged" else 1)
            n += len(vids)
        return {k: (v / n if k != "int_diverged" else v) for k, v in acc.items()}

    def run_stage(self, stage: str, epochs: int, terms, on_epoch=None):
        groups = self.trainable(stage)
        last = {}
        t0 = time.time()
        for e in range(epochs):
            sums: dict = {}
            count = 0
            for vids in self.batches():
                try:
                    parts = self.step(vids, terms, groups)
                except DivergedLoss as err:
                    raise StageDiverged(stage, err.term, last) from err
                for k, v in parts.items():
                    sums[k] = sums.get(k, 0.0) + v
                count += 1
            last = {k: v / count for k, v in sums.items()}
            self.trace.append({"stage": stage, "epoch": e + 1, **last, "time_s": time.time() - t0})
            if on_epoch is not None:
                on_epoch(e + 1)
            if (e + 1) % max(1, epochs // 10) == 0 or e + 1 == epochs:
                self.log(f"[{stage}] epoch {e + 1}/{epochs} " +
                         " ".join(f"{k}={v:.3g}" for k, v in last.items()))
        return last

    def apply_threshold(self):
        current = self.xi.with_values(np.where(self.xi.pinned, self.xi.values, self.params["xi"]))
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            self.xi = threshold(current, self.cfg.threshold)
        self.params["xi"] = self.xi.values

    def current_xi(self) -> CoefficientMatrix:
        return self.xi.with_values(np.where(self.xi.pinned, self.xi.values, self.params["xi"]))

    def transform(self) -> TransformParams:
        return TransformParams(float(self.params["log_scale"]), np.array(self.params["shift"]),
                               float(self.params["angle"]))

    def decoder(self) -> DecoderParams:
        return DecoderParams(self.params["content"], self.params["mask"], self.params["background"])

    def coords(self) -> np.ndarray:
        return np.stack([self.params[f"coords/{i}"] for i in range(self.n_videos)])

    def snapshot(self, groups) -> dict:
        return {k: self.params[k].copy() for k in self.params.names() if k.split("/")[0] in groups}


def _assert_unchanged(before: dict, trainer: Trainer, stage: str):
    for k, v in before.items():
        if not np.array_equal(v, trainer.params[k]):
            raise AssertionError(f"stage {stage!r} modified frozen parameter {k!r}")


def run_discovery(ds: VideoDataset, cfg: TrainConfig, *, no_transform: bool = False,
                  mode: str = "full", log=None, stages=STAGES,
                  tolerate_divergence: bool = False) -> DiscoveryReport:
    """Four-stage joint optimisation; ground truth in ``ds`` is never read.

    With ``tolerate_divergence`` a diverging stage ends training early and the
    report records it instead of raising.
    """
    ds = ds.without_ground_truth()
    t0 = time.time()
    bg = estimate_background(ds.frames)
    loc = localize(ds, bg)
    tr = Trainer(ds, cfg, loc.coords, bg, no_transform=no_transform, log=log)
    physics_terms = tuple(t for t in ALL_TERMS if not (t == "int" and cfg.lambda2 == 0))
    stage_losses, xi_stages = {}, {}
    notes = []
    try:
        if "pretrain" in stages:
            frozen = tr.snapshot({"xi", *TRANSFORM_GROUPS})
            tr.run_stage("pretrain", cfg.epochs("pretrain"), ("recon",))
            _assert_unchanged(frozen, tr, "pretrain")
        for stage in ("total", "threshold", "refine"):
            if stage not in stages:
                continue
            start = tr.evaluate(physics_terms)
            frozen = tr.snapshot({"coords", *DECODER_GROUPS, *TRANSFORM_GROUPS}) if stage == "refine" else {}
            if stage == "threshold":
                interval, n = cfg.scaled_threshold_interval, cfg.epochs("threshold")

                def hook(e, interval=interval, n=n):
                    if e % interval == 0 or e == n:
                        tr.apply_threshold()
                tr.run_stage(stage, n, physics_terms, on_epoch=hook)
                if n == 0:
                    tr.apply_threshold()
            else:
                tr.run_stage(stage, cfg.epochs(stage), physics_terms)
            _assert_unchanged(frozen, tr, stage)
            stage_losses[stage] = {"start": start, "end": tr.evaluate(physics_terms)}
            xi_stages[stage] = tr.current_xi()
    except StageDiverged as err:
        if not tolerate_divergence:
            raise
        notes.append(f"diverged: {err}")
        tr.int_diverged = max(tr.int_diverged, 1)

    try:
        final = tr.evaluate(ALL_TERMS)
    except FloatingPointError:
        final = {t: float("nan") for t in ALL_TERMS}
    tf = tr.transform()
    coords = tr.coords()
    phys = np.asarray(to_physical(coords, tf.log_scale, tf.shift, tf.angle))
    if tr.int_diverged:
        notes.append(f"{tr.int_diverged} integration rollouts hit the state clip")
    if loc.flagged:
        notes.append(f"{len(loc.flagged)} frames had empty foreground during localisation")
    return DiscoveryReport(
        system_name=ds.system_name, mode=mode, config=cfg.to_dict(), lib=tr.lib,
        xi=tr.current_xi(), xi_stages=xi_stages, transform=tf, coords=coords, physical=phys,
        decoder=tr.decoder(), loss_trace=tr.trace, stage_losses=stage_losses,
        final_losses=final, wall_clock=time.time() - t0, flagged_frames=loc.flagged,
        int_diverged=tr.int_diverged, notes=notes)


def decoder_images(dec: DecoderParams):
    """Sprite content, object weight and background as float images in [0, 1]."""
    from .sprite import object_weight
    return (np.asarray(squash(jnp.asarray(dec.content))),
            np.asarray(object_weight(jnp.asarray(dec.mask)))[..., 0],
            np.asarray(squash(jnp.asarray(dec.background))))
