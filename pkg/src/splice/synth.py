"""Seeded synthetic corpus generator for end-to-end testing.

Images are white-background rasters with elliptical "tissue" blobs filled
with Gaussian color noise around a class mean, modulated by low-frequency
value noise. Class means are forced far enough apart that histogram
features separate the classes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidInput, IoError

MIN_CLASS_SEPARATION = 60.0
TISSUE_FRACTION_RANGE = (0.1, 0.9)


@dataclass(frozen=True)
class SynthClass:
    name: str
    mean_rgb: tuple[int, int, int]
    jitter: float = 12.0
    blob_range: tuple[int, int] = (2, 4)


@dataclass(frozen=True)
class SynthSpec:
    classes: tuple[SynthClass, ...]
    image_size: int = 1024
    per_class: int = 12
    seed: int = 0
    base_magnification: float = 2.5
    background: tuple[int, int, int] = (255, 255, 255)

    def __post_init__(self):
        if self.per_class < 2:
            raise InvalidInput("per_class must be >= 2 (leave-one-out needs a same-class neighbor)")
        if self.image_size < 64:
            raise InvalidInput(f"image_size must be >= 64, got {self.image_size}")
        if len(self.classes) < 2:
            raise InvalidInput("need at least two classes")
        for i, a in enumerate(self.classes):
            for b in self.classes[i + 1:]:
                gap = float(np.linalg.norm(np.subtract(a.mean_rgb, b.mean_rgb)))
                if gap < MIN_CLASS_SEPARATION:
                    raise InvalidInput(
                        f"classes {a.name!r} and {b.name!r} are only {gap:.1f} apart "
                        f"in RGB (need >= {MIN_CLASS_SEPARATION})"
                    )


def default_spec(seed: int = 0, per_class: int = 12, image_size: int = 1024) -> SynthSpec:
    """Three well-separated stain-like classes."""
    return SynthSpec(
        classes=(
            SynthClass("eosin", (200, 120, 160)),
            SynthClass("hematoxylin", (120, 140, 200)),
            SynthClass("stroma", (170, 190, 120)),
        ),
        image_size=image_size,
        per_class=per_class,
        seed=seed,
    )


def _value_noise(rng: np.random.Generator, size: int, lattice: int = 8, amplitude: float = 20.0) -> np.ndarray:
    """Low-frequency noise: a coarse random lattice upsampled bilinearly."""
    coarse = rng.uniform(-amplitude, amplitude, size=(lattice + 1, lattice + 1))
    xs = np.linspace(0, lattice, size)
    i = np.clip(xs.astype(int), 0, lattice - 1)
    f = xs - i
    rows = coarse[i, :] * (1 - f[:, None]) + coarse[i + 1, :] * f[:, None]
    cols = rows[:, i] * (1 - f[None, :]) + rows[:, i + 1] * f[None, :]
    return cols


def _ellipse_mask(size: int, cx: float, cy: float, rx: float, ry: float, angle: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    x = xx - cx
    y = yy - cy
    ca, sa = np.cos(angle), np.sin(angle)
    u = (x * ca + y * sa) / rx
    v = (-x * sa + y * ca) / ry
    return u * u + v * v <= 1.0


def _render_image(cls: SynthClass, spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    size = spec.image_size
    mask = np.zeros((size, size), dtype=bool)
    lo, hi = cls.blob_range
    n_blobs = int(rng.integers(lo, hi + 1))
    low, high = TISSUE_FRACTION_RANGE

    def add_blob():
        cx = rng.uniform(0.2 * size, 0.8 * size)
        cy = rng.uniform(0.2 * size, 0.8 * size)
        rx = rng.uniform(0.15 * size, 0.25 * size)
        ry = rng.uniform(0.15 * size, 0.25 * size)
        angle = rng.uniform(0, np.pi)
        return _ellipse_mask(size, cx, cy, rx, ry, angle)

    for _ in range(n_blobs):
        mask |= add_blob()
    # Blob placement can undershoot the target fill; keep adding until the
    # tissue fraction is usable. Deterministic: same rng stream.
    attempts = 0
    while mask.mean() < low and attempts < 32:
        mask |= add_blob()
        attempts += 1

    image = np.empty((size, size, 3), dtype=np.float64)
    image[:] = spec.background
    noise = rng.normal(0.0, cls.jitter, size=(size, size, 3))
    modulation = _value_noise(rng, size)
    tissue = np.array(cls.mean_rgb, dtype=np.float64) + noise + modulation[:, :, None]
    image[mask] = tissue[mask]
    return np.clip(np.rint(image), 0, 255).astype(np.uint8), mask


def generate_corpus(spec: SynthSpec, out_dir: str | Path) -> Path:
    """Write PNGs plus a manifest CSV; returns the manifest path.

    Fully deterministic: image i of class c draws from a PRNG stream keyed
    by (seed, class index, image index), so the same spec and seed always
    produce byte-identical files.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out_dir}: {exc}") from exc
    manifest_path = out_dir / "manifest.csv"
    rows = []
    for ci, cls in enumerate(spec.classes):
        for ii in range(spec.per_class):
            rng = np.random.default_rng([spec.seed, ci, ii])
            pixels, mask = _render_image(cls, spec, rng)
            frac = float(mask.mean())
            assert TISSUE_FRACTION_RANGE[0] <= frac <= TISSUE_FRACTION_RANGE[1], (
                f"tissue fraction {frac:.3f} out of range for {cls.name}_{ii:03d}"
            )
            image_id = f"{cls.name}_{ii:03d}"
            path = out_dir / f"{image_id}.png"
            try:
                Image.fromarray(pixels).save(path, format="PNG")
            except OSError as exc:
                raise IoError(f"cannot write {path}: {exc}") from exc
            rows.append((str(path), image_id, cls.name, spec.base_magnification))
    try:
        with open(manifest_path, "w", newline="\n", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["path", "id", "label", "base_magnification"])
            writer.writerows(rows)
    except OSError as exc:
        raise IoError(f"cannot write manifest {manifest_path}: {exc}") from exc
    return manifest_path
