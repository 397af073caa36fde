"""Synthetic rain: streak-layer rendering and the three composition models.

Rainy scenes are built from a clean background plus one or more streak
layers. The simple model adds streaks directly (O = B + R, or a sum of
layers); the generalized model blends background, global atmospheric
light and brightness-weighted streak layers under the constraint that the
coefficients are non-negative and sum to at most one.

Streak rendering itself: sparse seed points dilated by an oriented line
kernel (angle measured from vertical), lightly Gaussian-smoothed and
peak-normalized. Deterministic given the layer seed.
"""

import os
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage, signal

__all__ = [
    "RainLayerSpec", "RainSceneSpec", "SynthPair", "SceneConstraintError",
    "gen_streak_layer", "compose_eq1", "compose_eq2", "compose_eq3",
    "random_background",
    "DatasetSpec", "make_dataset", "load_manifest", "regenerate",
    "render_record",
    "read_pair", "load_pairs",
    "encode_image_png", "decode_image_png",
    "encode_residual_png", "decode_residual_png",
]


class SceneConstraintError(ValueError):
    """A scene spec violates the blending-coefficient constraints."""


@dataclass
class RainLayerSpec:
    angle: float = 0.0        # degrees from vertical
    length: float = 9.0       # pixels
    thickness: float = 1.5    # pixels
    density: float = 2.0      # streak seeds per 1000 px^2
    brightness: float = 1.0   # blending coefficient of this layer
    seed: int = 0

    def validate(self):
        if self.brightness < 0:
            raise SceneConstraintError(
                f"layer brightness must be >= 0, got {self.brightness}")
        if self.density < 0:
            raise ValueError(f"density must be >= 0, got {self.density}")
        if self.length < 1:
            raise ValueError(f"length must be >= 1, got {self.length}")


@dataclass
class RainSceneSpec:
    background: np.ndarray    # (H, W, 3) in [0, 1]
    atmos: float = 1.0        # global atmospheric light (gray level)
    alpha0: float = 0.0       # scene transmission coefficient
    layers: list = field(default_factory=list)

    def validate(self):
        if self.alpha0 < 0:
            raise SceneConstraintError(
                f"scene transmission alpha0 must be >= 0, got {self.alpha0}")
        for lay in self.layers:
            lay.validate()
        total = self.alpha0 + sum(l.brightness for l in self.layers)
        if total > 1.0 + 1e-12:
            raise SceneConstraintError(
                f"blending coefficients must sum to <= 1, got {total:g}")
        if self.background.min() < 0 or self.background.max() > 1:
            raise ValueError("background values must lie in [0, 1]")


@dataclass
class SynthPair:
    rainy: np.ndarray         # O, raw (may exceed [0,1] before export clip)
    clean: np.ndarray         # B
    residual: np.ndarray      # O - B: what the network must predict
    layer_maps: list = field(default_factory=list)


# -- streak rendering -------------------------------------------------------

def _line_kernel(angle, length, thickness):
    """Binary oriented line segment; angle in degrees from vertical."""
    rad = np.deg2rad(angle)
    dy, dx = np.cos(rad), np.sin(rad)
    half = max(int(np.ceil(length / 2)) + 1, 1)
    size = 2 * half + 1
    yy, xx = np.mgrid[-half:half + 1, -half:half + 1].astype(float)
    along = yy * dy + xx * dx
    perp = -yy * dx + xx * dy
    k = ((np.abs(along) <= length / 2) &
         (np.abs(perp) <= thickness / 2)).astype(float)
    if k.sum() == 0:
        k[half, half] = 1.0
    return k


def gen_streak_layer(spec: RainLayerSpec, height, width):
    """Single-channel streak map in [0, 1], deterministic in spec.seed."""
    if height < 1 or width < 1:
        raise ValueError(f"degenerate layer dims {height}x{width}")
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n_seeds = int(round(spec.density * height * width / 1000.0))
    layer = np.zeros((height, width))
    if n_seeds == 0:
        return layer
    ys = rng.integers(0, height, n_seeds)
    xs = rng.integers(0, width, n_seeds)
    amp = rng.uniform(0.5, 1.0, n_seeds)
    np.add.at(layer, (ys, xs), amp)
    kernel = _line_kernel(spec.angle, spec.length, spec.thickness)
    layer = signal.fftconvolve(layer, kernel, mode="same")
    layer = ndimage.gaussian_filter(layer, 0.5)
    peak = layer.max()
    if peak > 0:
        layer /= peak
    return np.clip(layer, 0.0, 1.0)


# -- composition ------------------------------------------------------------

def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def compose_eq1(background, streaks):
    """Additive model: rainy = background + streaks, raw (no clipping)."""
    _check_same_shape(background, streaks)
    return background + streaks


def compose_eq2(background, layer_maps):
    """Multi-layer additive model: rainy = background + sum of layers."""
    total = np.zeros_like(background)
    for lm in layer_maps:
        _check_same_shape(background, lm)
        total = total + lm
    return background + total


def compose_eq3(scene: RainSceneSpec) -> SynthPair:
    """Generalized model with atmospheric light and per-layer brightness.

    rainy = (1 - sum(alpha)) * B + alpha0 * A + sum(alpha_i * layer_i).
    The stored residual is rainy - B, the exact quantity whose subtraction
    recovers the clean image.
    """
    scene.validate()
    bg = scene.background
    h, w = bg.shape[:2]
    total_alpha = scene.alpha0 + sum(l.brightness for l in scene.layers)
    rainy = (1.0 - total_alpha) * bg + scene.alpha0 * scene.atmos
    maps = []
    for lay in scene.layers:
        lm = gen_streak_layer(lay, h, w)
        maps.append(lm)
        rainy = rainy + lay.brightness * lm[..., None]
    return SynthPair(rainy, bg, rainy - bg, maps)


def random_background(seed, height, width, cells=5):
    """Smooth random RGB background in [0, 1] (low-res noise, upsampled)."""
    rng = np.random.default_rng(seed)
    coarse = rng.uniform(0.1, 0.9, (cells, cells, 3))
    zy, zx = height / cells, width / cells
    img = ndimage.zoom(coarse, (zy, zx, 1), order=3, mode="nearest",
                       grid_mode=True)
    return np.clip(img[:height, :width], 0.0, 1.0)


# -- PNG encoding -----------------------------------------------------------

def encode_image_png(arr, path):
    q = np.clip(np.round(np.clip(arr, 0.0, 1.0) * 255.0), 0, 255)
    Image.fromarray(q.astype(np.uint8)).save(path)


def decode_image_png(path):
    return np.asarray(Image.open(path), dtype=np.float64) / 255.0


def encode_residual_png(arr, path):
    """Residuals span [-1, 1]; stored as v = round((r + 1)/2 * 255)."""
    r = np.clip(arr, -1.0, 1.0)
    q = np.clip(np.round((r + 1.0) / 2.0 * 255.0), 0, 255)
    Image.fromarray(q.astype(np.uint8)).save(path)


def decode_residual_png(path):
    v = np.asarray(Image.open(path), dtype=np.float64)
    return v / 255.0 * 2.0 - 1.0


# -- dataset generation -----------------------------------------------------

@dataclass
class DatasetSpec:
    count: int = 25
    size: int = 64
    model: str = "eq3"                    # eq1 | eq2 | eq3
    seed: int = 0
    angles: tuple = (-30.0, -15.0, 0.0, 15.0, 30.0)
    length_range: tuple = (7.0, 13.0)
    thickness_range: tuple = (1.0, 2.2)
    density_range: tuple = (1.0, 3.0)
    layers_per_scene: int = 3
    alpha0_range: tuple = (0.0, 0.15)     # eq3 only
    layer_alpha_range: tuple = (0.08, 0.25)

    def validate(self):
        if self.model not in ("eq1", "eq2", "eq3"):
            raise ValueError(f"unknown rain model {self.model!r}")
        if self.count < 0 or self.size < 8:
            raise ValueError("count must be >= 0 and size >= 8")


@dataclass
class PairRecord:
    index: int
    rainy: str
    clean: str
    residual: str
    model: str
    size: int
    bg_seed: int
    atmos: float
    alpha0: float
    layers: list   # of RainLayerSpec


def _sample_record(spec: DatasetSpec, idx):
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, idx)))
    bg_seed = int(rng.integers(2 ** 31))
    n_layers = spec.layers_per_scene
    layers = []
    if spec.model == "eq1":
        n_layers = 1
    alphas = None
    if spec.model == "eq3":
        # sample then renormalize if the draw would break the sum constraint
        alpha0 = float(rng.uniform(*spec.alpha0_range))
        alphas = rng.uniform(*spec.layer_alpha_range, n_layers)
        total = alpha0 + alphas.sum()
        if total > 0.95:
            scl = 0.95 / total
            alpha0 *= scl
            alphas *= scl
        atmos = float(rng.uniform(0.8, 1.0))
    else:
        alpha0 = 0.0
        atmos = 1.0
    for i in range(n_layers):
        bright = float(alphas[i]) if alphas is not None \
            else float(rng.uniform(0.15, 0.45))
        layers.append(RainLayerSpec(
            angle=float(rng.choice(spec.angles)),
            length=float(np.round(rng.uniform(*spec.length_range), 3)),
            thickness=float(np.round(rng.uniform(*spec.thickness_range), 3)),
            density=float(np.round(rng.uniform(*spec.density_range), 3)),
            brightness=bright,
            seed=int(rng.integers(2 ** 31)),
        ))
    stem = f"pair{idx:05d}"
    return PairRecord(idx, f"{stem}_rain.png", f"{stem}_clean.png",
                      f"{stem}_res.png", spec.model, spec.size,
                      bg_seed, atmos, alpha0, layers)


def render_record(rec: PairRecord) -> SynthPair:
    bg = random_background(rec.bg_seed, rec.size, rec.size)
    if rec.model == "eq3":
        scene = RainSceneSpec(bg, rec.atmos, rec.alpha0, rec.layers)
        return compose_eq3(scene)
    maps = [gen_streak_layer(l, rec.size, rec.size) for l in rec.layers]
    scaled = [np.repeat(l.brightness * m[..., None], 3, axis=2)
              for l, m in zip(rec.layers, maps)]
    if rec.model == "eq1":
        rainy = compose_eq1(bg, scaled[0])
    else:
        rainy = compose_eq2(bg, scaled)
    return SynthPair(rainy, bg, rainy - bg, maps)


def _layer_token(lay: RainLayerSpec):
    return "|".join(f"{k}:{v!r}" for k, v in asdict(lay).items())


def _parse_layer(token):
    kv = {}
    for part in token.split("|"):
        k, _, v = part.partition(":")
        kv[k] = int(v) if k == "seed" else float(v)
    return RainLayerSpec(**kv)


def _record_line(rec: PairRecord):
    layers = ";".join(_layer_token(l) for l in rec.layers)
    return (f"pair={rec.index} rainy={rec.rainy} clean={rec.clean} "
            f"residual={rec.residual} model={rec.model} size={rec.size} "
            f"bg_seed={rec.bg_seed} atmos={rec.atmos!r} "
            f"alpha0={rec.alpha0!r} layers={layers}")


def _parse_record(line):
    kv = dict(tok.split("=", 1) for tok in line.split())
    layers = []
    if kv.get("layers"):
        layers = [_parse_layer(t) for t in kv["layers"].split(";")]
    return PairRecord(int(kv["pair"]), kv["rainy"], kv["clean"],
                      kv["residual"], kv["model"], int(kv["size"]),
                      int(kv["bg_seed"]), float(kv["atmos"]),
                      float(kv["alpha0"]), layers)


def make_dataset(spec: DatasetSpec, out_dir):
    """Write `count` PNG triples plus a manifest; reproducible from it."""
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = [_sample_record(spec, i) for i in range(spec.count)]
    for rec in records:
        _write_pair(rec, out)
    manifest = out / "manifest.txt"
    with open(manifest, "w") as f:
        f.write(f"# rain dataset model={spec.model} count={spec.count} "
                f"size={spec.size} seed={spec.seed}\n")
        for rec in records:
            f.write(_record_line(rec) + "\n")
    return manifest


def _write_pair(rec: PairRecord, out_dir: Path):
    pair = render_record(rec)
    encode_image_png(pair.rainy, out_dir / rec.rainy)
    encode_image_png(pair.clean, out_dir / rec.clean)
    encode_residual_png(pair.residual, out_dir / rec.residual)


def load_manifest(path):
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            records.append(_parse_record(line))
    return records


def regenerate(manifest_path, out_dir):
    """Rebuild every PNG triple from the manifest records alone."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = load_manifest(manifest_path)
    for rec in records:
        _write_pair(rec, out)
    return records


def read_pair(dataset_dir, rec: PairRecord):
    """Load one pair as float arrays in image (H, W, 3) layout.

    The residual is recomputed as rainy - clean from the quantized PNGs so
    the subtraction identity holds exactly on what the trainer sees.
    """
    d = Path(dataset_dir)
    rainy = decode_image_png(d / rec.rainy)
    clean = decode_image_png(d / rec.clean)
    return rainy, clean, rainy - clean


def load_pairs(dataset_dir):
    d = Path(dataset_dir)
    manifest = d / "manifest.txt"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.txt in {os.fspath(d)}")
    return [read_pair(d, rec) for rec in load_manifest(manifest)]
