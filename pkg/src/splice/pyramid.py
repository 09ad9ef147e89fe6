"""Multi-resolution image pyramids with magnification-aware patch coordinates.

All patch coordinates are expressed at level 0 regardless of the level a
patch was selected on, so selections made at low magnification can be
re-extracted at any commensurate resolution.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import InvalidInput, IoError

# Stop building levels once the next one would fall below this side length.
MIN_LEVEL_SIDE = 64


class MagnificationWarning(UserWarning):
    """Requested magnification is lower than the pyramid can provide."""


@dataclass(frozen=True)
class PatchRef:
    """A lattice cell: level-0 origin plus the level it lives on.

    ``size`` is measured in pixels at the level identified by
    ``level_factor``; the level-0 footprint is ``size * level_factor``
    pixels on each side.
    """

    x0: int
    y0: int
    level_factor: int
    size: int

    def __post_init__(self):
        if self.level_factor < 1 or self.size < 1:
            raise InvalidInput(f"bad patch geometry: {self}")
        if self.x0 < 0 or self.y0 < 0:
            raise InvalidInput(f"negative patch origin: {self}")

    @property
    def footprint(self) -> int:
        """Side length of the patch at level 0, in pixels."""
        return self.size * self.level_factor

    def center(self) -> tuple[float, float]:
        """Level-0 (x, y) center of the patch."""
        half = self.footprint / 2.0
        return (self.x0 + half, self.y0 + half)

    def to_dict(self) -> dict:
        return {
            "x0": self.x0,
            "y0": self.y0,
            "level_factor": self.level_factor,
            "size": self.size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PatchRef":
        return cls(int(d["x0"]), int(d["y0"]), int(d["level_factor"]), int(d["size"]))


@dataclass(frozen=True)
class PyramidLevel:
    downsample_factor: int
    width: int
    height: int
    pixels: np.ndarray  # (height, width, 3) uint8


@dataclass
class ImagePyramid:
    """Immutable after construction; safe to share across threads."""

    id: str
    base_magnification: float
    levels: list[PyramidLevel]

    @property
    def factors(self) -> list[int]:
        return [lv.downsample_factor for lv in self.levels]

    def level_by_factor(self, factor: int) -> PyramidLevel:
        for lv in self.levels:
            if lv.downsample_factor == factor:
                return lv
        raise InvalidInput(
            f"pyramid {self.id!r} has no level with factor {factor} "
            f"(available: {self.factors})"
        )


def downsample_2x(pixels: np.ndarray) -> np.ndarray:
    """Halve both dimensions with a 2x2 box filter.

    Odd dimensions are pad-replicated on the trailing edge so every output
    pixel averages a full 2x2 block.
    """
    h, w = pixels.shape[:2]
    if h % 2:
        pixels = np.concatenate([pixels, pixels[-1:, :, :]], axis=0)
    if w % 2:
        pixels = np.concatenate([pixels, pixels[:, -1:, :]], axis=1)
    h2, w2 = pixels.shape[0] // 2, pixels.shape[1] // 2
    blocks = pixels.reshape(h2, 2, w2, 2, 3).astype(np.float64)
    means = blocks.mean(axis=(1, 3))
    return np.rint(means).astype(np.uint8)


def build_pyramid(pixels: np.ndarray, image_id: str, base_magnification: float) -> ImagePyramid:
    """Build a pyramid by repeated 2x box downsampling.

    Levels are added while the next level would still have both sides of at
    least ``MIN_LEVEL_SIDE`` pixels.
    """
    if base_magnification <= 0:
        raise InvalidInput(f"base magnification must be positive, got {base_magnification}")
    if pixels.size == 0:
        raise InvalidInput(f"image {image_id!r} has zero area")
    if pixels.ndim == 3 and pixels.shape[2] == 4:
        pixels = pixels[:, :, :3]
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise InvalidInput(f"expected an RGB raster, got shape {pixels.shape}")
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)

    levels = [PyramidLevel(1, pixels.shape[1], pixels.shape[0], pixels)]
    factor = 1
    while True:
        cur = levels[-1].pixels
        next_w = -(-cur.shape[1] // 2)
        next_h = -(-cur.shape[0] // 2)
        if min(next_w, next_h) < MIN_LEVEL_SIDE:
            break
        factor *= 2
        down = downsample_2x(cur)
        levels.append(PyramidLevel(factor, down.shape[1], down.shape[0], down))
    return ImagePyramid(id=image_id, base_magnification=base_magnification, levels=levels)


def load_image(path: str | Path, base_magnification: float) -> ImagePyramid:
    """Load a PNG or single-page TIFF as a pyramid; alpha is discarded."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            pixels = np.asarray(rgb, dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as exc:
        raise IoError(f"cannot read image {path}: {exc}") from exc
    return build_pyramid(pixels, image_id=path.stem, base_magnification=base_magnification)


def level_for_magnification(p: ImagePyramid, target: float) -> tuple[int, int]:
    """Pick the level whose factor is closest to base/target.

    Ties go to the smaller factor (higher resolution). If the pyramid is too
    shallow for the requested magnification, the deepest level is returned
    and a :class:`MagnificationWarning` is emitted.
    """
    if target <= 0:
        raise InvalidInput(f"target magnification must be positive, got {target}")
    if target > p.base_magnification:
        raise InvalidInput(
            f"target {target}x exceeds base magnification {p.base_magnification}x"
        )
    ideal = p.base_magnification / target
    best_idx = min(
        range(len(p.levels)),
        key=lambda i: (abs(p.levels[i].downsample_factor - ideal),
                       p.levels[i].downsample_factor),
    )
    best = p.levels[best_idx].downsample_factor
    max_factor = p.levels[-1].downsample_factor
    if ideal > 1.5 * max_factor:
        warnings.warn(
            f"pyramid {p.id!r} stops at factor {max_factor}; "
            f"requested {target}x needs factor {ideal:g}",
            MagnificationWarning,
            stacklevel=2,
        )
    return best_idx, best


def map_patch(pr: PatchRef, to_factor: int) -> PatchRef:
    """Re-express a patch at another level, preserving its level-0 footprint."""
    if to_factor < 1:
        raise InvalidInput(f"target factor must be positive, got {to_factor}")
    if to_factor == pr.level_factor:
        return pr
    f, t = pr.level_factor, to_factor
    if f % t != 0 and t % f != 0:
        raise InvalidInput(f"factors {f} and {t} are not commensurate")
    footprint = pr.size * f
    if footprint % t != 0:
        raise InvalidInput(
            f"footprint {footprint} px is not divisible by target factor {t}"
        )
    return PatchRef(x0=pr.x0, y0=pr.y0, level_factor=t, size=footprint // t)


def extract_patch(p: ImagePyramid, pr: PatchRef) -> np.ndarray:
    """Cut a patch's pixels from the level it references."""
    lv = p.level_by_factor(pr.level_factor)
    x = pr.x0 // pr.level_factor
    y = pr.y0 // pr.level_factor
    if x + pr.size > lv.width or y + pr.size > lv.height:
        raise InvalidInput(f"patch {pr} overflows level {pr.level_factor} of {p.id!r}")
    return lv.pixels[y:y + pr.size, x:x + pr.size, :]
