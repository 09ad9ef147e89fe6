"""Tissue masking and lattice patch enumeration on a low-magnification level."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput
from .pyramid import ImagePyramid, PatchRef

DEFAULT_S_MIN = 0.05
DEFAULT_V_MAX = 0.98
DEFAULT_MIN_TISSUE_FRACTION = 0.5


@dataclass(frozen=True)
class TissueMask:
    level_factor: int
    bits: np.ndarray  # (height, width) bool

    @property
    def tissue_fraction(self) -> float:
        return float(self.bits.mean()) if self.bits.size else 0.0


def _majority_3x3(mask: np.ndarray) -> np.ndarray:
    """One pass of 3x3 majority smoothing with replicate borders."""
    padded = np.pad(mask.astype(np.uint8), 1, mode="edge")
    counts = np.zeros(mask.shape, dtype=np.uint8)
    for dy in range(3):
        for dx in range(3):
            counts += padded[dy:dy + mask.shape[0], dx:dx + mask.shape[1]]
    return counts >= 5


def segment_tissue(
    p: ImagePyramid,
    factor: int,
    s_min: float = DEFAULT_S_MIN,
    v_max: float = DEFAULT_V_MAX,
) -> TissueMask:
    """Threshold HSV saturation/value, then smooth with a 3x3 majority vote.

    A pixel is tissue iff saturation >= s_min and value <= v_max (both on
    the [0, 1] scale), which rejects white background and near-black noise
    equally on H&E-like stains.
    """
    lv = p.level_by_factor(factor)
    rgb = lv.pixels.astype(np.float64)
    maxc = rgb.max(axis=2)
    minc = rgb.min(axis=2)
    value = maxc / 255.0
    with np.errstate(divide="ignore", invalid="ignore"):
        saturation = np.where(maxc > 0, (maxc - minc) / maxc, 0.0)
    raw = (saturation >= s_min) & (value <= v_max)
    return TissueMask(level_factor=factor, bits=_majority_3x3(raw))


def enumerate_patches(
    mask: TissueMask,
    patch_size: int,
    min_tissue_fraction: float = DEFAULT_MIN_TISSUE_FRACTION,
) -> list[PatchRef]:
    """List lattice cells whose tissue fraction clears the cutoff.

    Cells are non-overlapping squares of ``patch_size`` at the mask's level;
    cells that would overflow the image are dropped. Output is row-major
    (by y0 then x0), which fixes the scan order for sequential selection.
    """
    if patch_size < 1:
        raise InvalidInput(f"patch size must be >= 1, got {patch_size}")
    if not 0.0 <= min_tissue_fraction <= 1.0:
        raise InvalidInput(f"min tissue fraction must be in [0, 1], got {min_tissue_fraction}")
    h, w = mask.bits.shape
    n_rows = h // patch_size
    n_cols = w // patch_size
    patches: list[PatchRef] = []
    for row in range(n_rows):
        for col in range(n_cols):
            cell = mask.bits[
                row * patch_size:(row + 1) * patch_size,
                col * patch_size:(col + 1) * patch_size,
            ]
            if cell.mean() >= min_tissue_fraction:
                patches.append(
                    PatchRef(
                        x0=col * patch_size * mask.level_factor,
                        y0=row * patch_size * mask.level_factor,
                        level_factor=mask.level_factor,
                        size=patch_size,
                    )
                )
    return patches
