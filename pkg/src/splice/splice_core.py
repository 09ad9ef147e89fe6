"""Color descriptors and sequential collage selection.

The selection scans tissue patches in raster order. Each pass promotes the
first undecided patch to a reference, computes color-descriptor distances
from it to every still-undecided patch, and excludes those closer than the
k-th percentile of that pass's distances. The surviving references form the
collage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInput
from .pyramid import PatchRef, map_patch

DEFAULT_BINS_PER_CHANNEL = 8
DEFAULT_PERCENTILE = 30.0
DEFAULT_PATCH_SIZE = 32
DEFAULT_MAGNIFICATION = 0.625
DEFAULT_DUP_EPSILON = 1e-12


@dataclass(frozen=True)
class ColorDescriptor:
    """Per-channel histogram concatenated with per-channel std deviations.

    ``values`` has length 3B + 3: R-histogram, G-histogram, B-histogram
    (each L1-normalized), then (std_R, std_G, std_B) / 255.
    """

    values: np.ndarray

    @property
    def histogram(self) -> np.ndarray:
        return self.values[:-3]

    @property
    def stds(self) -> np.ndarray:
        return self.values[-3:]


@dataclass(frozen=True)
class SpliceConfig:
    percentile_k: float = DEFAULT_PERCENTILE
    patch_size: int = DEFAULT_PATCH_SIZE
    magnification: float = DEFAULT_MAGNIFICATION
    bins_per_channel: int = DEFAULT_BINS_PER_CHANNEL
    dup_epsilon: float = DEFAULT_DUP_EPSILON

    def __post_init__(self):
        if not 0.0 < self.percentile_k < 100.0:
            raise InvalidInput(f"percentile must be in (0, 100), got {self.percentile_k}")
        if self.patch_size < 1:
            raise InvalidInput(f"patch size must be >= 1, got {self.patch_size}")
        if self.magnification <= 0:
            raise InvalidInput(f"magnification must be positive, got {self.magnification}")
        if self.bins_per_channel < 1:
            raise InvalidInput(f"bins per channel must be >= 1, got {self.bins_per_channel}")
        if self.dup_epsilon < 0:
            raise InvalidInput(f"dup epsilon must be non-negative, got {self.dup_epsilon}")

    def to_dict(self) -> dict:
        return {
            "percentile_k": self.percentile_k,
            "patch_size": self.patch_size,
            "magnification": self.magnification,
            "bins_per_channel": self.bins_per_channel,
            "dup_epsilon": self.dup_epsilon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpliceConfig":
        return cls(**d)


@dataclass(frozen=True)
class CollageEntry:
    patch: PatchRef
    pass_index: int
    n_excluded: int


@dataclass
class Collage:
    wsi_id: str
    entries: list[CollageEntry]
    config: SpliceConfig

    @property
    def patches(self) -> list[PatchRef]:
        return [e.patch for e in self.entries]

    def to_dict(self) -> dict:
        return {
            "wsi_id": self.wsi_id,
            "config": self.config.to_dict(),
            "entries": [
                {**e.patch.to_dict(), "pass_index": e.pass_index, "n_excluded": e.n_excluded}
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Collage":
        entries = [
            CollageEntry(
                patch=PatchRef.from_dict(e),
                pass_index=int(e["pass_index"]),
                n_excluded=int(e["n_excluded"]),
            )
            for e in d["entries"]
        ]
        return cls(wsi_id=d["wsi_id"], entries=entries, config=SpliceConfig.from_dict(d["config"]))


def color_descriptor(pixels: np.ndarray, bins_per_channel: int = DEFAULT_BINS_PER_CHANNEL) -> ColorDescriptor:
    """Quantify a patch's color distribution and spread.

    Histogram bin i covers intensities [floor(256*i/B), floor(256*(i+1)/B));
    each channel's block is L1-normalized. Standard deviations are
    population deviations scaled to [0, 1].
    """
    if pixels.size == 0:
        raise InvalidInput("cannot describe an empty raster")
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise InvalidInput(f"expected an RGB raster, got shape {pixels.shape}")
    b = bins_per_channel
    flat = pixels.reshape(-1, 3).astype(np.int64)
    n = flat.shape[0]
    parts = []
    for ch in range(3):
        idx = (flat[:, ch] * b) // 256
        hist = np.bincount(idx, minlength=b).astype(np.float64) / n
        parts.append(hist)
    stds = flat.std(axis=0) / 255.0
    return ColorDescriptor(values=np.concatenate(parts + [stds]))


def descriptor_distance(a: ColorDescriptor, b: ColorDescriptor) -> float:
    """Euclidean distance over the full histogram-plus-stds vector."""
    if a.values.shape != b.values.shape:
        raise InvalidInput(
            f"descriptor length mismatch: {a.values.shape} vs {b.values.shape}"
        )
    return float(np.linalg.norm(a.values - b.values))


def percentile(values, k: float) -> float:
    """Linear-interpolation percentile (rank r = (n-1) * k / 100)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise InvalidInput("percentile of an empty list is undefined")
    return float(np.percentile(values, k))


def splice_select(
    descriptors: list[tuple[PatchRef, ColorDescriptor]],
    cfg: SpliceConfig,
    wsi_id: str = "",
) -> Collage:
    """Run the sequential selection over raster-ordered patch descriptors.

    Every input patch ends up either a reference (one per pass) or excluded
    by exactly one pass; the partition is asserted before returning.
    Exact-duplicate descriptors are always excluded (``dup_epsilon`` rule)
    so a zero percentile threshold cannot keep redundant copies.
    """
    n = len(descriptors)
    entries: list[CollageEntry] = []
    if n == 0:
        return Collage(wsi_id=wsi_id, entries=entries, config=cfg)

    vectors = np.stack([d.values for _, d in descriptors])
    if vectors.shape[1] != 3 * cfg.bins_per_channel + 3:
        raise InvalidInput(
            f"descriptor length {vectors.shape[1]} inconsistent with "
            f"{cfg.bins_per_channel} bins per channel"
        )
    excluded = np.zeros(n, dtype=bool)
    pass_index = 0
    for i in range(n):
        if excluded[i]:
            continue
        pass_index += 1
        pending = np.flatnonzero(~excluded[i + 1:]) + i + 1
        if pending.size == 0:
            entries.append(CollageEntry(descriptors[i][0], pass_index, 0))
            continue
        dists = np.linalg.norm(vectors[pending] - vectors[i], axis=1)
        t = percentile(dists, cfg.percentile_k)
        drop = (dists < t) | (dists <= cfg.dup_epsilon)
        excluded[pending[drop]] = True
        entries.append(CollageEntry(descriptors[i][0], pass_index, int(drop.sum())))

    total = len(entries) + sum(e.n_excluded for e in entries)
    assert total == n, f"partition violated: {total} accounted of {n} patches"
    return Collage(wsi_id=wsi_id, entries=entries, config=cfg)


def collage_to_highmag(c: Collage, target_magnification: float) -> list[PatchRef]:
    """Map every selected patch to the factor serving ``target_magnification``.

    The selection magnification comes from the collage's config; footprints
    are preserved exactly, so only commensurate targets are accepted.
    """
    if target_magnification < c.config.magnification:
        raise InvalidInput(
            f"target {target_magnification}x is below the selection "
            f"magnification {c.config.magnification}x"
        )
    ratio = target_magnification / c.config.magnification
    out = []
    for patch in c.patches:
        to_factor = patch.level_factor / ratio
        rounded = int(round(to_factor))
        if rounded < 1 or abs(to_factor - rounded) > 1e-9:
            raise InvalidInput(
                f"magnification {target_magnification}x does not map factor "
                f"{patch.level_factor} to an integer level"
            )
        out.append(map_patch(patch, rounded))
    return out


def save_collages(collages: list[Collage], path: str | Path) -> None:
    Path(path).write_text(json.dumps([c.to_dict() for c in collages], indent=2) + "\n")


def load_collages(path: str | Path) -> list[Collage]:
    return [Collage.from_dict(d) for d in json.loads(Path(path).read_text())]
