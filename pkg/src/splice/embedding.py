"""Patch feature vectors: a built-in histogram embedder plus a CSV boundary.

Deep embedders live out of process. Anything that can write the feature CSV
(header ``wsi_id,x0,y0,level_factor,size,f0..f{d-1}``) plugs in here; the
built-in 192-dim histogram embedder covers synthetic-corpus testing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidInput, IoError
from .pyramid import PatchRef

HISTOGRAM_BINS = 64
HISTOGRAM_DIM = 3 * HISTOGRAM_BINS


@dataclass(frozen=True)
class FeatureVector:
    wsi_id: str
    patch: PatchRef
    values: np.ndarray


def embed_histogram(pixels: np.ndarray) -> np.ndarray:
    """64-bin L1-normalized histogram per RGB channel, concatenated (d=192)."""
    if pixels.size == 0:
        raise InvalidInput("cannot embed an empty raster")
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise InvalidInput(f"expected an RGB raster, got shape {pixels.shape}")
    flat = pixels.reshape(-1, 3).astype(np.int64)
    n = flat.shape[0]
    parts = []
    for ch in range(3):
        idx = (flat[:, ch] * HISTOGRAM_BINS) // 256
        parts.append(np.bincount(idx, minlength=HISTOGRAM_BINS).astype(np.float64) / n)
    return np.concatenate(parts)


def _header(d: int) -> list[str]:
    return ["wsi_id", "x0", "y0", "level_factor", "size"] + [f"f{i}" for i in range(d)]


def write_features(features: list[FeatureVector], path: str | Path) -> None:
    """Write the feature CSV; values use up to 9 significant digits."""
    if not features:
        raise InvalidInput("nothing to write: empty feature list")
    d = features[0].values.shape[0]
    try:
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(_header(d))
            for fv in features:
                p = fv.patch
                row = [fv.wsi_id, p.x0, p.y0, p.level_factor, p.size]
                row += [f"{v:.9g}" for v in fv.values]
                writer.writerow(row)
    except OSError as exc:
        raise IoError(f"cannot write features to {path}: {exc}") from exc


def ingest_external_features(manifest: str | Path) -> list[FeatureVector]:
    """Parse and validate a feature CSV.

    The dimension d is inferred from the header and must be >= 2 (the
    binarizer needs at least one successive difference). Ragged rows and
    non-finite values are rejected with the offending row number.
    """
    path = Path(manifest)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read features from {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file, expected a header row")
        d = len(header) - 5
        if header[:5] != ["wsi_id", "x0", "y0", "level_factor", "size"]:
            raise FormatError(f"{path}: bad header {header[:5]}")
        if d < 2 or header[5:] != [f"f{i}" for i in range(d)]:
            raise FormatError(f"{path}: bad feature columns (need f0..f{{d-1}}, d >= 2)")
        features: list[FeatureVector] = []
        for row_no, row in enumerate(reader, start=2):
            if len(row) != 5 + d:
                raise FormatError(f"{path}: row {row_no} has {len(row)} fields, expected {5 + d}")
            try:
                patch = PatchRef(int(row[1]), int(row[2]), int(row[3]), int(row[4]))
                values = np.array([float(v) for v in row[5:]], dtype=np.float64)
            except (ValueError, InvalidInput) as exc:
                raise FormatError(f"{path}: row {row_no}: {exc}") from exc
            if not np.all(np.isfinite(values)):
                raise FormatError(f"{path}: row {row_no} contains non-finite values")
            features.append(FeatureVector(wsi_id=row[0], patch=patch, values=values))
    return features
