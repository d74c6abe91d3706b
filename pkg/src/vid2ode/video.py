"""Synthetic benchmark videos: a circle marker moving over a fixed background."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .dynamics import SystemSpec, get_system, sample_initial_conditions, simulate

FORMAT_NAME = "vid2ode-dataset"
FORMAT_VERSION = 1


class OutOfFrameError(ValueError):
    def __init__(self, frames):
        self.frames = list(frames)
        shown = self.frames[:10]
        super().__init__(f"trajectory leaves world bounds at frames {shown}{'...' if len(self.frames) > 10 else ''}")


class DatasetFormatError(ValueError):
    def __init__(self, field_name: str, msg: str = ""):
        self.field = field_name
        super().__init__(msg or f"dataset manifest: missing or invalid field {field_name!r}")


@dataclass
class RenderConfig:
    background: np.ndarray
    world_bounds: tuple[float, float, float, float]  # xmin, xmax, ymin, ymax
    marker_color: tuple[float, float, float] = (1.0, 0.1, 0.1)
    marker_radius_px: float = 8.0
    supersample_resolution: int = 256
    output_resolution: int = 64
    hard_replace: bool = False

    def __post_init__(self):
        if self.supersample_resolution % self.output_resolution:
            raise ValueError("supersample resolution must be a multiple of the output resolution")
        self.background = np.asarray(self.background, float)
        H = self.output_resolution
        if self.background.shape != (H, H, 3):
            raise ValueError(f"background must be {H}x{H}x3")

    @property
    def factor(self) -> int:
        return self.supersample_resolution // self.output_resolution

    @property
    def margin(self) -> float:
        """Marker radius in output pixels."""
        return self.marker_radius_px / self.factor

    @property
    def pixels_per_unit(self) -> float:
        xmin, xmax, ymin, ymax = self.world_bounds
        return (self.output_resolution - 2 * self.margin) / max(xmax - xmin, ymax - ymin)

    def to_json(self) -> dict:
        return {
            "world_bounds": [float(v) for v in self.world_bounds],
            "marker": {
                "color": [float(c) for c in self.marker_color],
                "radius_px": float(self.marker_radius_px),
                "hard_replace": bool(self.hard_replace),
            },
            "supersample_resolution": self.supersample_resolution,
            "resolution": self.output_resolution,
        }


def default_background(size: int = 64, seed: int = 0) -> np.ndarray:
    """Smooth procedural colour texture in [0.15, 0.75]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((size, size, 3))
    for c in range(3):
        acc = np.zeros((size, size))
        for _ in range(6):
            fx, fy = rng.uniform(0.5, 3.0, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            acc += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
        acc = (acc - acc.min()) / (np.ptp(acc) + 1e-12)
        img[..., c] = 0.15 + 0.6 * acc
    # mild tint so channels differ
    img *= rng.uniform(0.8, 1.0, size=3)
    return img


def load_background(path, size: int = 64) -> np.ndarray:
    img = Image.open(path).convert("RGB").resize((size, size), Image.BILINEAR)
    return np.asarray(img, float) / 255.0


def contrasting_color(background: np.ndarray) -> tuple[float, float, float]:
    """RGB cube corner with the largest minimum distance to any background pixel."""
    corners = np.array([[r, g, b] for r in (0, 1) for g in (0, 1) for b in (0, 1)], float)
    px = background.reshape(-1, 3)
    d = np.linalg.norm(px[None, :, :] - corners[:, None, :], axis=-1).min(axis=1)
    return tuple(float(v) for v in corners[int(np.argmax(d))])


def origin_centred_bounds(positions: np.ndarray, pad: float = 0.1) -> tuple[float, float, float, float]:
    """Smallest origin-centred square holding every position, grown by ``pad``."""
    r = float(np.max(np.abs(positions))) * (1 + pad)
    r = r if r > 0 else 1.0
    return (-r, r, -r, r)


def world_to_pixel(positions, cfg: RenderConfig) -> np.ndarray:
    """World (x, y) -> pixel (column, row); rows grow downward."""
    P = positions.states if hasattr(positions, "states") else positions
    P = np.asarray(P, float)[..., :2]
    xmin, xmax, ymin, ymax = cfg.world_bounds
    tol = 1e-9 * max(xmax - xmin, ymax - ymin)
    bad = ((P[..., 0] < xmin - tol) | (P[..., 0] > xmax + tol)
           | (P[..., 1] < ymin - tol) | (P[..., 1] > ymax + tol))
    if np.any(bad):
        raise OutOfFrameError(np.flatnonzero(bad.reshape(-1)))
    H = cfg.output_resolution
    k = cfg.pixels_per_unit
    xc, yc = 0.5 * (xmin + xmax), 0.5 * (ymin + ymax)
    col = H / 2 + (P[..., 0] - xc) * k
    row = H / 2 - (P[..., 1] - yc) * k
    return np.stack([col, row], axis=-1)


def pixel_to_world(pixels, cfg: RenderConfig) -> np.ndarray:
    P = np.asarray(pixels, float)
    xmin, xmax, ymin, ymax = cfg.world_bounds
    H = cfg.output_resolution
    k = cfg.pixels_per_unit
    xc, yc = 0.5 * (xmin + xmax), 0.5 * (ymin + ymax)
    return np.stack([xc + (P[..., 0] - H / 2) / k, yc - (P[..., 1] - H / 2) / k], axis=-1)


def marker_coverage(coord, cfg: RenderConfig):
    """Coverage of the marker at output resolution as (alpha window, row0, col0)."""
    f = cfg.factor
    H = cfg.output_resolution
    r = cfg.marker_radius_px
    cx, cy = coord[0] * f, coord[1] * f
    # output-pixel window holding the marker plus a one-pixel rim
    c0 = max(int(np.floor((cx - r) / f)) - 1, 0)
    c1 = min(int(np.ceil((cx + r) / f)) + 1, H)
    r0 = max(int(np.floor((cy - r) / f)) - 1, 0)
    r1 = min(int(np.ceil((cy + r) / f)) + 1, H)
    if c1 <= c0 or r1 <= r0:
        return np.zeros((0, 0)), 0, 0
    ys = (np.arange(r0 * f, r1 * f) + 0.5)[:, None]
    xs = (np.arange(c0 * f, c1 * f) + 0.5)[None, :]
    dist = np.sqrt((xs - cx) ** 2 + (ys - cy) ** 2)
    hi = np.clip(r - dist + 0.5, 0.0, 1.0)
    alpha = hi.reshape(r1 - r0, f, c1 - c0, f).mean(axis=(1, 3))
    if cfg.hard_replace:
        alpha = (alpha >= 0.5).astype(float)
    return alpha, r0, c0


def render_frame(coord, cfg: RenderConfig) -> np.ndarray:
    frame = cfg.background.copy()
    alpha, r0, c0 = marker_coverage(coord, cfg)
    if alpha.size:
        a = alpha[..., None]
        win = frame[r0:r0 + alpha.shape[0], c0:c0 + alpha.shape[1]]
        frame[r0:r0 + alpha.shape[0], c0:c0 + alpha.shape[1]] = a * np.asarray(cfg.marker_color) + (1 - a) * win
    return frame


def render_video(pixel_coords, cfg: RenderConfig) -> np.ndarray:
    """Frames (m, H, H, 3) in [0, 1] for a sequence of pixel coordinates."""
    return np.stack([render_frame(c, cfg) for c in np.asarray(pixel_coords, float)])


def quantize(frames) -> np.ndarray:
    return np.clip(np.rint(np.asarray(frames) * 255.0), 0, 255).astype(np.uint8)


@dataclass
class GroundTruth:
    """Evaluation-only arrays; never handed to the discovery path."""
    physical: np.ndarray  # (n_videos, n_frames, n_state)
    pixel: np.ndarray  # (n_videos, n_frames, 2)


@dataclass
class VideoDataset:
    frames: np.ndarray  # uint8 (n_videos, n_frames, H, H, 3)
    dt: float
    render_config: RenderConfig
    system_name: str
    seed: int | None = None
    ground_truth: GroundTruth | None = field(default=None, repr=False)

    @property
    def n_videos(self) -> int:
        return self.frames.shape[0]

    @property
    def n_frames(self) -> int:
        return self.frames.shape[1]

    @property
    def resolution(self) -> int:
        return self.frames.shape[2]

    def video(self, i: int) -> np.ndarray:
        return self.frames[i].astype(float) / 255.0

    def without_ground_truth(self) -> "VideoDataset":
        return replace(self, ground_truth=None)

    def subset(self, videos=None, frames=None) -> "VideoDataset":
        vsl = slice(None) if videos is None else videos
        fsl = slice(None) if frames is None else frames
        gt = self.ground_truth
        if gt is not None:
            gt = GroundTruth(gt.physical[vsl][:, fsl], gt.pixel[vsl][:, fsl])
        return replace(self, frames=self.frames[vsl][:, fsl], ground_truth=gt)


def make_dataset(system: SystemSpec | str, n_videos: int, n_frames: int, seed: int = 0,
                 dt: float = 0.05, background=None, world_bounds=None,
                 marker_color=None, hard_replace: bool = False, substeps: int = 10) -> VideoDataset:
    system = get_system(system) if isinstance(system, str) else system
    ics = sample_initial_conditions(system, n_videos, seed)
    phys = np.stack([simulate(system, x0, n_frames, dt, substeps=substeps).states for x0 in ics])
    bg = default_background(seed=seed) if background is None else np.asarray(background, float)
    bounds = origin_centred_bounds(phys[..., :2]) if world_bounds is None else tuple(world_bounds)
    color = contrasting_color(bg) if marker_color is None else tuple(marker_color)
    cfg = RenderConfig(bg, bounds, color, hard_replace=hard_replace)
    pix = np.stack([world_to_pixel(p, cfg) for p in phys])
    frames = np.stack([quantize(render_video(p, cfg)) for p in pix])
    return VideoDataset(frames, dt, cfg, system.name, seed, GroundTruth(phys, pix))


def _video_dir(i: int) -> str:
    return f"video_{i:03d}"


def write_dataset(ds: VideoDataset, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    Image.fromarray(quantize(ds.render_config.background)).save(d / "background.png")
    videos = []
    for i in range(ds.n_videos):
        vd = d / _video_dir(i)
        vd.mkdir(exist_ok=True)
        for k in range(ds.n_frames):
            Image.fromarray(ds.frames[i, k]).save(vd / f"frame_{k:05d}.png")
        videos.append({"dir": _video_dir(i), "n_frames": int(ds.n_frames)})
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "system": ds.system_name,
        "seed": ds.seed,
        "dt": float(ds.dt),
        **ds.render_config.to_json(),
        "background": "background.png",
        "videos": videos,
    }
    if ds.ground_truth is not None:
        manifest["ground_truth"] = {
            "physical": ds.ground_truth.physical.tolist(),
            "pixel": ds.ground_truth.pixel.tolist(),
        }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return d


def _load_manifest(d: Path) -> dict:
    path = d / "manifest.json"
    if not path.exists():
        raise DatasetFormatError("manifest.json", f"no manifest.json in {d}")
    try:
        m = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DatasetFormatError("manifest.json", f"corrupt manifest: {e}") from None
    if m.get("format") != FORMAT_NAME:
        raise DatasetFormatError("format")
    for key in ("dt", "resolution", "world_bounds", "marker", "system", "videos"):
        if key not in m:
            raise DatasetFormatError(key)
    if not (isinstance(m["dt"], (int, float)) and m["dt"] > 0):
        raise DatasetFormatError("dt")
    if len(m["world_bounds"]) != 4:
        raise DatasetFormatError("world_bounds")
    return m


def read_dataset(directory, with_ground_truth: bool = False) -> VideoDataset:
    """Load frames and render metadata. Ground truth only on explicit request."""
    d = Path(directory)
    m = _load_manifest(d)
    H = int(m["resolution"])
    bg_path = d / m.get("background", "background.png")
    bg = np.asarray(Image.open(bg_path).convert("RGB"), float) / 255.0 if bg_path.exists() else np.zeros((H, H, 3))
    mk = m["marker"]
    cfg = RenderConfig(bg, tuple(m["world_bounds"]), tuple(mk["color"]), mk["radius_px"],
                       int(m.get("supersample_resolution", 256)), H, bool(mk.get("hard_replace", False)))
    counts = {v["n_frames"] for v in m["videos"]}
    if len(counts) != 1:
        raise DatasetFormatError("videos", "all videos must have the same frame count")
    n_frames = counts.pop()
    frames = np.empty((len(m["videos"]), n_frames, H, H, 3), np.uint8)
    for i, v in enumerate(m["videos"]):
        for k in range(n_frames):
            p = d / v["dir"] / f"frame_{k:05d}.png"
            if not p.exists():
                raise DatasetFormatError("videos", f"missing frame {p}")
            frames[i, k] = np.asarray(Image.open(p).convert("RGB"))
    gt = None
    if with_ground_truth:
        g = m.get("ground_truth")
        if g is None:
            raise DatasetFormatError("ground_truth")
        gt = GroundTruth(np.asarray(g["physical"], float), np.asarray(g["pixel"], float))
    return VideoDataset(frames, float(m["dt"]), cfg, m["system"], m.get("seed"), gt)


def read_ground_truth(directory) -> GroundTruth:
    m = _load_manifest(Path(directory))
    g = m.get("ground_truth")
    if g is None:
        raise DatasetFormatError("ground_truth")
    return GroundTruth(np.asarray(g["physical"], float), np.asarray(g["pixel"], float))
