"""Datasets: loading, stratified splitting, augmentation, synthesis.

The synthetic generator produces skin-toned images with one lesion-like blob
per image; the eight classes differ by documented generative recipes (shape
regularity, border fuzziness, color family, internal texture, satellite
dots, radial streaks) chosen so that color histograms alone do not separate
them but a small ViT can.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import DataError, InvalidArgumentError

CLASS_NAMES = (
    "Melanoma",
    "Melanocytic nevus",
    "Basal cell carcinoma",
    "Actinic keratosis",
    "Benign keratosis",
    "Dermatofibroma",
    "Vascular lesion",
    "Squamous cell carcinoma",
)

MALIGNANT_NAMES = frozenset({"Melanoma", "Basal cell carcinoma", "Squamous cell carcinoma"})


@dataclass(frozen=True)
class ClassTaxonomy:
    names: Tuple[str, ...] = CLASS_NAMES
    malignant: frozenset = MALIGNANT_NAMES

    def validate(self) -> "ClassTaxonomy":
        if len(self.names) != 8:
            raise InvalidArgumentError(f"expected 8 classes, got {len(self.names)}")
        unknown = self.malignant - set(self.names)
        if unknown:
            raise InvalidArgumentError(f"malignant classes not in taxonomy: {sorted(unknown)}")
        return self

    def label_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown class name {name!r}") from None

    def malignant_mask(self) -> np.ndarray:
        return np.array([n in self.malignant for n in self.names], dtype=bool)


def default_taxonomy() -> ClassTaxonomy:
    return ClassTaxonomy().validate()


@dataclass
class Sample:
    image: np.ndarray  # [3, H, W] float32 in [0, 1]
    label: int
    source_id: str


def _resize_bilinear(image: np.ndarray, out_size: int) -> np.ndarray:
    """Channelwise bilinear resample of a [C, H, W] float image."""
    c, h, w = image.shape
    rows = (np.arange(out_size, dtype=np.float64) + 0.5) * (h / out_size) - 0.5
    cols = (np.arange(out_size, dtype=np.float64) + 0.5) * (w / out_size) - 0.5
    grid_r, grid_c = np.meshgrid(rows, cols, indexing="ij")
    coords = np.stack([grid_r.ravel(), grid_c.ravel()])
    out = np.empty((c, out_size, out_size), dtype=np.float32)
    for ch in range(c):
        out[ch] = ndimage.map_coordinates(
            image[ch], coords, order=1, mode="nearest").reshape(out_size, out_size)
    return out


def load_image_dataset(image_dir, labels_csv, image_size: int,
                       taxonomy: Optional[ClassTaxonomy] = None) -> List[Sample]:
    """Read PNGs listed in a `filename,label_name` CSV, resized to image_size."""
    from PIL import Image, UnidentifiedImageError

    taxonomy = taxonomy or default_taxonomy()
    image_dir = Path(image_dir)
    rows: List[Tuple[str, str]] = []
    with open(labels_csv, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if [h.strip() for h in header] != ["filename", "label_name"]:
            raise DataError(f"{labels_csv}: expected header 'filename,label_name', got {header}")
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"{labels_csv}: row {i} has {len(row)} fields, expected 2")
            rows.append((row[0].strip(), row[1].strip()))
    rows.sort(key=lambda r: r[0])

    samples: List[Sample] = []
    for filename, label_name in rows:
        if label_name not in taxonomy.names:
            raise DataError(f"{labels_csv}: unknown label {label_name!r} for file {filename!r}")
        path = image_dir / filename
        try:
            with Image.open(path) as im:
                im = im.convert("RGB").resize((image_size, image_size), Image.BILINEAR)
                arr = np.asarray(im, dtype=np.float32) / 255.0
        except (FileNotFoundError, UnidentifiedImageError, OSError) as exc:
            raise DataError(f"cannot decode image {path}: {exc}") from exc
        img = np.clip(arr.transpose(2, 0, 1), 0.0, 1.0)
        samples.append(Sample(np.ascontiguousarray(img), taxonomy.label_of(label_name), filename))
    return samples


def save_image_dataset(samples: Sequence[Sample], out_dir,
                       taxonomy: Optional[ClassTaxonomy] = None) -> None:
    """Write samples as PNGs plus a labels.csv in the loadable format."""
    from PIL import Image

    taxonomy = taxonomy or default_taxonomy()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "label_name"])
        for s in samples:
            filename = f"{s.source_id}.png"
            arr = np.clip(s.image * 255.0 + 0.5, 0, 255).astype(np.uint8).transpose(1, 2, 0)
            Image.fromarray(arr).save(out_dir / filename)
            writer.writerow([filename, taxonomy.names[s.label]])


def stratified_split(samples: Sequence[Sample], train_fraction: float = 0.8,
                     seed: int = 0) -> Tuple[List[Sample], List[Sample]]:
    """Per-class shuffled split with floor(n_c * fraction) (at least 1) in train."""
    by_class: Dict[int, List[int]] = {}
    for i, s in enumerate(samples):
        by_class.setdefault(s.label, []).append(i)
    for label, idxs in sorted(by_class.items()):
        if len(idxs) < 2:
            raise DataError(f"class {label} has {len(idxs)} sample(s); need at least 2 to split")
    train: List[Sample] = []
    test: List[Sample] = []
    for label, idxs in sorted(by_class.items()):
        rng = np.random.default_rng([seed, label])
        order = rng.permutation(len(idxs))
        n_train = max(1, int(math.floor(len(idxs) * train_fraction)))
        for j, k in enumerate(order):
            (train if j < n_train else test).append(samples[idxs[k]])
    return train, test


@dataclass
class AugConfig:
    """Photometric and spatial augmentation magnitudes and probabilities."""

    crop_fraction: float = 0.875   # smallest retained side fraction
    max_shift: float = 0.1         # fraction of the image side
    max_scale_delta: float = 0.1
    max_rotate: float = 30.0       # degrees
    rgb_shift_max: float = 0.08
    brightness_delta: float = 0.2
    contrast_delta: float = 0.2
    p_crop: float = 0.5
    p_shift: float = 0.5
    p_scale: float = 0.5
    p_rotate: float = 0.5
    p_rgb_shift: float = 0.5
    p_brightness: float = 0.5
    p_contrast: float = 0.5

    def validate(self) -> "AugConfig":
        if not 0.75 <= self.crop_fraction <= 1.0:
            raise InvalidArgumentError(
                f"crop_fraction must be in [0.75, 1] so the lesion stays in frame, "
                f"got {self.crop_fraction}")
        for name in ("p_crop", "p_shift", "p_scale", "p_rotate", "p_rgb_shift",
                     "p_brightness", "p_contrast"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidArgumentError(f"{name} must be in [0, 1], got {v}")
        return self


def identity_aug() -> AugConfig:
    return AugConfig(p_crop=0, p_shift=0, p_scale=0, p_rotate=0,
                     p_rgb_shift=0, p_brightness=0, p_contrast=0)


def sample_rng(seed: int, epoch: int, sample_index: int) -> np.random.Generator:
    """Per-sample augmentation stream derived from (seed, epoch, index)."""
    return np.random.default_rng([seed, epoch, sample_index])


def augment(image: np.ndarray, cfg: AugConfig, rng: np.random.Generator) -> np.ndarray:
    """Apply the configured transforms, each with its probability.

    Order: sub-window crop + resize back, one combined shift/scale/rotate
    warp with reflected borders, additive per-channel RGB shift, additive
    brightness, contrast about the image mean.  Output is clamped to [0, 1].
    """
    cfg.validate()
    c, h, w = image.shape
    out = image.astype(np.float32, copy=True)

    if cfg.p_crop > 0 and rng.random() < cfg.p_crop:
        side = int(round(h * rng.uniform(cfg.crop_fraction, 1.0)))
        side = max(1, min(side, h))
        if side < h:
            top = int(rng.integers(0, h - side + 1))
            left = int(rng.integers(0, w - side + 1))
            out = _resize_bilinear(out[:, top:top + side, left:left + side], h)

    shift = np.zeros(2)
    scale = 1.0
    angle = 0.0
    warp = False
    if cfg.p_shift > 0 and rng.random() < cfg.p_shift:
        shift = rng.uniform(-cfg.max_shift, cfg.max_shift, size=2) * h
        warp = True
    if cfg.p_scale > 0 and rng.random() < cfg.p_scale:
        scale = 1.0 + rng.uniform(-cfg.max_scale_delta, cfg.max_scale_delta)
        warp = True
    if cfg.p_rotate > 0 and rng.random() < cfg.p_rotate:
        angle = math.radians(rng.uniform(-cfg.max_rotate, cfg.max_rotate))
        warp = True
    if warp and (np.any(shift != 0) or scale != 1.0 or angle != 0.0):
        cos_a, sin_a = math.cos(angle), math.sin(angle)
        # output -> input mapping: rotate by -angle, divide by scale
        inv = np.array([[cos_a, sin_a], [-sin_a, cos_a]]) / scale
        center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
        offset = center - inv @ (center + shift)
        warped = np.empty_like(out)
        for ch in range(c):
            warped[ch] = ndimage.affine_transform(
                out[ch], inv, offset=offset, order=1, mode="reflect")
        out = warped

    if cfg.p_rgb_shift > 0 and rng.random() < cfg.p_rgb_shift:
        deltas = rng.uniform(-cfg.rgb_shift_max, cfg.rgb_shift_max, size=c)
        out = out + deltas[:, None, None].astype(np.float32)
    if cfg.p_brightness > 0 and rng.random() < cfg.p_brightness:
        out = out + np.float32(rng.uniform(-cfg.brightness_delta, cfg.brightness_delta))
    if cfg.p_contrast > 0 and rng.random() < cfg.p_contrast:
        factor = 1.0 + rng.uniform(-cfg.contrast_delta, cfg.contrast_delta)
        mean = out.mean()
        out = mean + (out - mean) * np.float32(factor)

    return np.clip(out, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# synthetic lesion generator
# ---------------------------------------------------------------------------

def _smooth_noise(rng: np.random.Generator, size: int, coarse: int) -> np.ndarray:
    """Low-frequency noise field in roughly [-1, 1]."""
    field_ = rng.normal(size=(coarse, coarse)).astype(np.float32)
    up = _resize_bilinear(field_[None, :, :], size)[0]
    return up / max(1e-6, float(np.abs(up).max()))


def _skin_background(rng: np.random.Generator, size: int) -> np.ndarray:
    r = rng.uniform(0.82, 0.90)
    g = r - rng.uniform(0.13, 0.17)
    b = g - rng.uniform(0.08, 0.12)
    img = np.empty((3, size, size), dtype=np.float32)
    img[0], img[1], img[2] = r, g, b
    # mild illumination ramp in a random direction
    theta = rng.uniform(0, 2 * math.pi)
    yy, xx = np.meshgrid(np.linspace(-1, 1, size), np.linspace(-1, 1, size), indexing="ij")
    ramp = (yy * math.sin(theta) + xx * math.cos(theta)) * rng.uniform(0.0, 0.02)
    img += ramp.astype(np.float32)
    img += rng.normal(0, 0.008, size=img.shape).astype(np.float32)
    return img


def _blob_fields(rng: np.random.Generator, size: int, radius_frac: Tuple[float, float],
                 irregularity: float, axis_ratio: float = 1.0):
    """Distance/angle fields plus the lumpy boundary radius R(theta)."""
    cy = size / 2.0 + rng.uniform(-0.09, 0.09) * size
    cx = size / 2.0 + rng.uniform(-0.09, 0.09) * size
    r0 = rng.uniform(*radius_frac) * size
    orient = rng.uniform(0, math.pi)
    yy, xx = np.meshgrid(np.arange(size, dtype=np.float32),
                         np.arange(size, dtype=np.float32), indexing="ij")
    dy, dx = yy - cy, xx - cx
    if axis_ratio != 1.0:
        cos_o, sin_o = math.cos(orient), math.sin(orient)
        du = dy * cos_o + dx * sin_o
        dv = -dy * sin_o + dx * cos_o
        dy, dx = du * axis_ratio, dv
    dist = np.sqrt(dy * dy + dx * dx)
    theta = np.arctan2(dy, dx)
    boundary = np.ones_like(theta)
    if irregularity > 0:
        for k in range(2, 7):
            amp = irregularity * rng.uniform(0.2, 1.0) / (k - 1)
            phase = rng.uniform(0, 2 * math.pi)
            boundary = boundary + amp * np.cos(k * theta + phase).astype(np.float32)
    radius = r0 * boundary
    return dist, theta, radius, (cy, cx), r0


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _stamp_dot(img: np.ndarray, cy: float, cx: float, radius: float,
               color: np.ndarray, softness: float = 0.8) -> None:
    size = img.shape[1]
    yy, xx = np.meshgrid(np.arange(size, dtype=np.float32),
                         np.arange(size, dtype=np.float32), indexing="ij")
    d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    a = _sigmoid((radius - d) / softness).astype(np.float32)
    img *= (1 - a)
    img += a * color[:, None, None]


def synth_sample(class_id: int, rng: np.random.Generator,
                 size: int) -> Tuple[np.ndarray, np.ndarray]:
    """One synthetic lesion image plus its boolean blob mask.

    Recipes (colors are RGB in [0,1], radii are fractions of the side):
      0 Melanoma: very irregular dark-brown blob, sharp border, dark
        variegated patches inside.
      1 Melanocytic nevus: regular medium-brown disc, uniform interior.
      2 Basal cell carcinoma: pinkish disc with short dark-red streaks
        radiating from the center.
      3 Actinic keratosis: reddish patch with a very fuzzy border and strong
        high-frequency speckle.
      4 Benign keratosis: sharp brown oval with concentric light/dark rings.
      5 Dermatofibroma: small regular blob, light center fading to a darker
        brown rim.
      6 Vascular lesion: regular red-purple disc with a soft glossy
        highlight.
      7 Squamous cell carcinoma: irregular pink blob with a bright crust
        center and small satellite dots around it.
    """
    if not 0 <= class_id < len(CLASS_NAMES):
        raise InvalidArgumentError(f"class_id must be in [0, 8), got {class_id}")
    s = size / 32.0
    img = _skin_background(rng, size)

    def jitter(color, amount=0.03):
        return np.array(color, dtype=np.float32) + rng.uniform(-amount, amount, 3).astype(np.float32)

    if class_id == 0:  # Melanoma
        dist, _, radius, center, r0 = _blob_fields(rng, size, (0.26, 0.34), 0.50)
        alpha = _sigmoid((radius - dist) / (0.8 * s)).astype(np.float32)
        color = jitter((0.26, 0.16, 0.10))
        lesion = np.empty_like(img)
        lesion[:] = color[:, None, None]
        blotch = _smooth_noise(rng, size, 6)
        dark = (blotch > 0.2).astype(np.float32) * 0.85
        dark_color = np.array((0.07, 0.04, 0.03), dtype=np.float32)
        lesion = lesion * (1 - dark) + dark_color[:, None, None] * dark
    elif class_id == 1:  # Melanocytic nevus
        dist, _, radius, center, r0 = _blob_fields(rng, size, (0.24, 0.32), 0.04)
        alpha = _sigmoid((radius - dist) / (1.0 * s)).astype(np.float32)
        color = jitter((0.55, 0.35, 0.20), 0.02)
        lesion = np.empty_like(img)
        lesion[:] = color[:, None, None]
        lesion += rng.normal(0, 0.01, size=img.shape).astype(np.float32)
    elif class_id == 2:  # Basal cell carcinoma
        dist, _, radius, center, r0 = _blob_fields(rng, size, (0.24, 0.32), 0.08)
        alpha = _sigmoid((radius - dist) / (1.2 * s)).astype(np.float32)
        color = jitter((0.88, 0.62, 0.58), 0.02)
        lesion = np.empty_like(img)
        lesion[:] = color[:, None, None]
    elif class_id == 3:  # Actinic keratosis
        dist, _, radius, center, r0 = _blob_fields(rng, size, (0.26, 0.34), 0.18)
        alpha = _sigmoid((radius - dist) / (2.5 * s)).astype(np.float32)
        color = jitter((0.80, 0.45, 0.30), 0.02)
        lesion = np.empty_like(img)
        lesion[:] = color[:, None, None]
        lesion += rng.uniform(-0.11, 0.11, size=img.shape).astype(np.float32)
    elif class_id == 4:  # Benign keratosis: same color family as nevus,
        # distinguished by the oval shape and concentric rings
        ratio = rng.uniform(1.4, 1.7)
        dist, _, radius, center, r0 = _blob_fields(rng, size, (0.24, 0.32), 0.05, axis_ratio=ratio)
        alpha = _sigmoid((radius - dist) / (0.6 * s)).astype(np.float32)
        color = jitter((0.55, 0.35, 0.20), 0.02)
        period = rng.uniform(0.11, 0.14) * size
        rings = 1.0 + 0.22 * np.cos(2 * math.pi * dist / period)
        lesion = color[:, None, None] * rings[None, :, :].astype(np.float32)
    elif class_id == 5:  # Dermatofibroma
        dist, _, radius, center, r0 = _blob_fields(rng, size, (0.13, 0.18), 0.03)
        alpha = _sigmoid((radius - dist) / (0.8 * s)).astype(np.float32)
        rim = jitter((0.42, 0.25, 0.16), 0.02)
        core = jitter((0.78, 0.56, 0.48), 0.02)
        t = np.clip(dist / np.maximum(radius, 1e-6), 0, 1) ** 1.5
        lesion = core[:, None, None] * (1 - t)[None] + rim[:, None, None] * t[None]
        lesion = lesion.astype(np.float32)
    elif class_id == 6:  # Vascular lesion
        dist, _, radius, center, r0 = _blob_fields(rng, size, (0.22, 0.30), 0.05)
        alpha = _sigmoid((radius - dist) / (1.0 * s)).astype(np.float32)
        color = jitter((0.48, 0.12, 0.38), 0.02)
        lesion = np.empty_like(img)
        lesion[:] = color[:, None, None]
        hy = center[0] + rng.uniform(-0.2, 0.2) * r0
        hx = center[1] + rng.uniform(-0.2, 0.2) * r0
        yy, xx = np.meshgrid(np.arange(size, dtype=np.float32),
                             np.arange(size, dtype=np.float32), indexing="ij")
        d2 = ((yy - hy) ** 2 + (xx - hx) ** 2) / (0.35 * r0) ** 2
        lesion += (0.15 * np.exp(-d2)).astype(np.float32)[None]
    else:  # Squamous cell carcinoma
        dist, _, radius, center, r0 = _blob_fields(rng, size, (0.24, 0.32), 0.45)
        alpha = _sigmoid((radius - dist) / (1.2 * s)).astype(np.float32)
        base = jitter((0.84, 0.56, 0.50), 0.02)
        crust = np.array((0.95, 0.90, 0.62), dtype=np.float32)
        noise = _smooth_noise(rng, size, 5)
        inner = _sigmoid((0.55 * radius + 0.1 * r0 * noise - dist) / (0.8 * s)).astype(np.float32)
        lesion = base[:, None, None] * (1 - inner)[None] + crust[:, None, None] * inner[None]

    img = img * (1 - alpha)[None] + lesion * alpha[None]

    if class_id == 2:  # telangiectasia-like streaks
        streak_color = np.array((0.55, 0.12, 0.12), dtype=np.float32)
        for _ in range(int(rng.integers(3, 7))):
            ang = rng.uniform(0, 2 * math.pi)
            length = rng.uniform(0.45, 0.9) * r0
            for t in np.linspace(0.15, 1.0, max(4, int(length))):
                py = center[0] + math.sin(ang) * length * t
                px = center[1] + math.cos(ang) * length * t
                _stamp_dot(img, py, px, 0.55 * s, streak_color, softness=0.5 * s)
    if class_id == 7:  # satellite dots
        dot_color = np.array((0.70, 0.42, 0.38), dtype=np.float32)
        for _ in range(int(rng.integers(4, 8))):
            ang = rng.uniform(0, 2 * math.pi)
            rad = rng.uniform(1.15, 1.5) * r0
            py = center[0] + math.sin(ang) * rad
            px = center[1] + math.cos(ang) * rad
            _stamp_dot(img, py, px, rng.uniform(0.8, 1.6) * s, dot_color)

    mask = alpha > 0.5
    return np.clip(img, 0.0, 1.0).astype(np.float32), mask


def synth_lesions(n_per_class: int, image_size: int = 32, seed: int = 0,
                  imbalance: Optional[Sequence[float]] = None) -> List[Sample]:
    """Deterministic synthetic dataset; labels follow the default taxonomy."""
    if n_per_class < 1:
        raise InvalidArgumentError(f"n_per_class must be >= 1, got {n_per_class}")
    if imbalance is not None and len(imbalance) != len(CLASS_NAMES):
        raise InvalidArgumentError(
            f"imbalance needs {len(CLASS_NAMES)} multipliers, got {len(imbalance)}")
    samples: List[Sample] = []
    for class_id in range(len(CLASS_NAMES)):
        mult = 1.0 if imbalance is None else float(imbalance[class_id])
        count = max(1, int(round(n_per_class * mult)))
        for i in range(count):
            rng = np.random.default_rng([seed, class_id, i])
            img, _ = synth_sample(class_id, rng, image_size)
            samples.append(Sample(img, class_id, f"synth_c{class_id}_{i:04d}"))
    return samples
