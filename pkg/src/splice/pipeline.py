"""End-to-end wiring: manifest loading, selection, embedding, indexing.

The CLI and the experiment scripts both drive the pipeline through these
helpers so file-level behavior stays identical between them.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .barcode import Archive, build_archive
from .embedding import FeatureVector, embed_histogram
from .errors import FormatError, InvalidInput
from .mosaic import Mosaic, MosaicConfig, mosaic_select
from .pyramid import ImagePyramid, PatchRef, extract_patch, level_for_magnification, load_image
from .segmentation import enumerate_patches, segment_tissue
from .splice_core import (
    Collage,
    ColorDescriptor,
    SpliceConfig,
    collage_to_highmag,
    color_descriptor,
    splice_select,
)


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    id: str
    label: str
    base_magnification: float


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    """Parse and validate the corpus manifest CSV."""
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read manifest {path}: {exc}") from exc
    entries: list[ManifestEntry] = []
    with fh:
        reader = csv.DictReader(fh)
        expected = ["path", "id", "label", "base_magnification"]
        if reader.fieldnames != expected:
            raise FormatError(f"{path}: manifest header must be {expected}, got {reader.fieldnames}")
        for row_no, row in enumerate(reader, start=2):
            try:
                mag = float(row["base_magnification"])
            except (TypeError, ValueError):
                raise FormatError(f"{path}: row {row_no}: bad magnification")
            if mag <= 0:
                raise FormatError(f"{path}: row {row_no}: magnification must be positive")
            img = Path(row["path"])
            if not img.is_absolute():
                img = path.parent / img
            if not img.is_file():
                raise FormatError(f"{path}: row {row_no}: missing image file {img}")
            entries.append(ManifestEntry(path=img, id=row["id"], label=row["label"], base_magnification=mag))
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        raise FormatError(f"{path}: manifest ids are not unique")
    return entries


def tissue_descriptors(
    pyramid: ImagePyramid,
    magnification: float,
    patch_size: int,
    bins_per_channel: int,
    min_tissue_fraction: float = 0.5,
) -> list[tuple[PatchRef, ColorDescriptor]]:
    """Segment, enumerate the lattice, and describe every tissue patch."""
    _, factor = level_for_magnification(pyramid, magnification)
    mask = segment_tissue(pyramid, factor)
    patches = enumerate_patches(mask, patch_size, min_tissue_fraction)
    return [
        (pr, color_descriptor(extract_patch(pyramid, pr), bins_per_channel))
        for pr in patches
    ]


def build_collage(pyramid: ImagePyramid, cfg: SpliceConfig) -> Collage:
    descriptors = tissue_descriptors(
        pyramid, cfg.magnification, cfg.patch_size, cfg.bins_per_channel
    )
    return splice_select(descriptors, cfg, wsi_id=pyramid.id)


def build_mosaic(
    pyramid: ImagePyramid,
    cfg: MosaicConfig,
    splice_cfg: SpliceConfig | None = None,
) -> Mosaic:
    """Mosaic over the same low-magnification lattice the collage uses."""
    scfg = splice_cfg or SpliceConfig()
    descriptors = tissue_descriptors(
        pyramid, scfg.magnification, scfg.patch_size, scfg.bins_per_channel
    )
    return mosaic_select(descriptors, cfg, wsi_id=pyramid.id)


def embed_patches(
    pyramid: ImagePyramid,
    patches: list[PatchRef],
    magnification: float | None = None,
) -> list[FeatureVector]:
    """Histogram-embed patches after mapping them to the target magnification.

    Defaults to the pyramid's base magnification (full resolution).
    """
    target = magnification if magnification is not None else pyramid.base_magnification
    _, factor = level_for_magnification(pyramid, target)
    out = []
    for pr in patches:
        footprint = pr.size * pr.level_factor
        if footprint % factor:
            raise InvalidInput(
                f"patch footprint {footprint} not divisible by factor {factor}"
            )
        mapped = PatchRef(pr.x0, pr.y0, factor, footprint // factor)
        out.append(
            FeatureVector(
                wsi_id=pyramid.id,
                patch=mapped,
                values=embed_histogram(extract_patch(pyramid, mapped)),
            )
        )
    return out


@dataclass
class PipelineResult:
    archive: Archive
    tissue_counts: dict[str, int]  # full tissue-lattice patch count per WSI
    selected_counts: dict[str, int]


def run_selection_pipeline(
    manifest: list[ManifestEntry],
    method: str,
    splice_cfg: SpliceConfig,
    mosaic_cfg: MosaicConfig | None = None,
    embed_magnification: float | None = None,
    jobs: int = 1,
) -> PipelineResult:
    """Select patches per WSI, embed them, and build the barcode archive.

    ``method`` is one of ``splice``, ``mosaic``, or ``full`` (the whole
    tissue lattice with no selection, used as the efficiency baseline).
    """
    if method not in ("splice", "mosaic", "full"):
        raise InvalidInput(f"unknown method {method!r}")

    def process(entry: ManifestEntry):
        pyramid = load_image(entry.path, entry.base_magnification)
        pyramid.id = entry.id  # manifest id wins over the file stem
        descriptors = tissue_descriptors(
            pyramid, splice_cfg.magnification, splice_cfg.patch_size, splice_cfg.bins_per_channel
        )
        if method == "splice":
            selection = splice_select(descriptors, splice_cfg, wsi_id=entry.id).patches
        elif method == "mosaic":
            if mosaic_cfg is None:
                raise InvalidInput("mosaic method needs a MosaicConfig")
            selection = mosaic_select(descriptors, mosaic_cfg, wsi_id=entry.id).patches
        else:
            selection = [pr for pr, _ in descriptors]
        features = embed_patches(pyramid, selection, embed_magnification)
        return entry.id, len(descriptors), features

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            processed = list(pool.map(process, manifest))
    else:
        processed = [process(e) for e in manifest]

    features_by_wsi = {wsi_id: fvs for wsi_id, _, fvs in processed}
    labels = {e.id: e.label for e in manifest}
    archive = build_archive(features_by_wsi, labels, metadata={"method": method})
    return PipelineResult(
        archive=archive,
        tissue_counts={wsi_id: n for wsi_id, n, _ in processed},
        selected_counts={wsi_id: len(fvs) for wsi_id, fvs in features_by_wsi.items()},
    )
