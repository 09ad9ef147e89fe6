"""Two-level clustering baseline: color k-means, then spatial k-means.

Each color cluster of size m contributes max(1, ceil(fraction * m)) patches,
one per spatial cluster, chosen as the patch nearest the spatial centroid.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInput
from .pyramid import PatchRef
from .splice_core import ColorDescriptor

DEFAULT_COLOR_K = 9
DEFAULT_SELECT_FRACTION = 0.05
DEFAULT_MAX_ITERS = 100
DEFAULT_TOL = 1e-4


@dataclass(frozen=True)
class MosaicConfig:
    seed: int
    color_k: int = DEFAULT_COLOR_K
    select_fraction: float = DEFAULT_SELECT_FRACTION
    max_iters: int = DEFAULT_MAX_ITERS
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        if self.color_k < 1:
            raise InvalidInput(f"color_k must be >= 1, got {self.color_k}")
        if not 0.0 < self.select_fraction <= 1.0:
            raise InvalidInput(f"select_fraction must be in (0, 1], got {self.select_fraction}")
        if self.max_iters < 1:
            raise InvalidInput(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol <= 0:
            raise InvalidInput(f"tol must be positive, got {self.tol}")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "color_k": self.color_k,
            "select_fraction": self.select_fraction,
            "max_iters": self.max_iters,
            "tol": self.tol,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MosaicConfig":
        return cls(**d)


@dataclass(frozen=True)
class MosaicEntry:
    patch: PatchRef
    color_cluster: int
    spatial_cluster: int


@dataclass
class Mosaic:
    wsi_id: str
    entries: list[MosaicEntry]
    config: MosaicConfig

    @property
    def patches(self) -> list[PatchRef]:
        return [e.patch for e in self.entries]

    def to_dict(self) -> dict:
        return {
            "wsi_id": self.wsi_id,
            "config": self.config.to_dict(),
            "entries": [
                {
                    **e.patch.to_dict(),
                    "color_cluster": e.color_cluster,
                    "spatial_cluster": e.spatial_cluster,
                }
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mosaic":
        entries = [
            MosaicEntry(
                patch=PatchRef.from_dict(e),
                color_cluster=int(e["color_cluster"]),
                spatial_cluster=int(e["spatial_cluster"]),
            )
            for e in d["entries"]
        ]
        return cls(wsi_id=d["wsi_id"], entries=entries, config=MosaicConfig.from_dict(d["config"]))


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial centroids by squared distance."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = points[first]
    closest_sq = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = closest_sq.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest_sq / total))
        centroids[j] = points[idx]
        closest_sq = np.minimum(closest_sq, np.sum((points - centroids[j]) ** 2, axis=1))
    return centroids


def kmeans(
    points: np.ndarray,
    k: int,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
    rng: np.random.Generator | None = None,
    objective_trace: list | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding.

    k is clamped to the number of points. An empty cluster is re-seeded
    with the point currently farthest from its assigned centroid. Stops
    at ``max_iters`` or when total centroid movement drops below ``tol``.
    If ``objective_trace`` is given, the per-iteration sum of squared
    distances to the assigned centroid is appended to it.

    Returns:
        (assignments, centroids) with assignments of shape (n,) and
        centroids of shape (k, d).
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise InvalidInput("kmeans needs a non-empty (n, d) point array")
    if k < 1:
        raise InvalidInput(f"k must be >= 1, got {k}")
    if rng is None:
        rng = np.random.default_rng(0)
    n = points.shape[0]
    k = min(k, n)
    centroids = _kmeans_pp_init(points, k, rng)
    assignments = np.zeros(n, dtype=np.int64)
    for _ in range(max_iters):
        dist_sq = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        assignments = np.argmin(dist_sq, axis=1)
        if objective_trace is not None:
            objective_trace.append(float(dist_sq[np.arange(n), assignments].sum()))
        new_centroids = centroids.copy()
        for j in range(k):
            members = points[assignments == j]
            if members.shape[0] > 0:
                new_centroids[j] = members.mean(axis=0)
            else:
                own = dist_sq[np.arange(n), assignments]
                new_centroids[j] = points[int(np.argmax(own))]
        movement = float(np.sqrt(np.sum((new_centroids - centroids) ** 2, axis=1)).sum())
        centroids = new_centroids
        if movement < tol:
            break
    dist_sq = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    assignments = np.argmin(dist_sq, axis=1)
    # k <= n guarantees every cluster can be populated; repair any that the
    # final assignment left empty by donating the globally farthest point
    # from a cluster that can spare one.
    for j in range(k):
        if not np.any(assignments == j):
            counts = np.bincount(assignments, minlength=k)
            own = dist_sq[np.arange(n), assignments]
            donors = np.flatnonzero(counts[assignments] > 1)
            donor = donors[int(np.argmax(own[donors]))]
            assignments[donor] = j
            centroids[j] = points[donor]
    return assignments, centroids


def mosaic_select(
    descriptors: list[tuple[PatchRef, ColorDescriptor]],
    cfg: MosaicConfig,
    wsi_id: str = "",
) -> Mosaic:
    """Select the mosaic: color clusters, then one patch per spatial cluster.

    Within each spatial cluster the representative is the patch nearest the
    spatial centroid; ties break toward the smaller (y0, x0).
    """
    if not descriptors:
        raise InvalidInput("mosaic selection needs at least one descriptor")
    rng = np.random.default_rng(cfg.seed)
    vectors = np.stack([d.values for _, d in descriptors])
    color_assign, _ = kmeans(vectors, cfg.color_k, cfg.max_iters, cfg.tol, rng)

    entries: list[MosaicEntry] = []
    for color_idx in sorted(set(int(a) for a in color_assign)):
        member_idx = np.flatnonzero(color_assign == color_idx)
        m = member_idx.size
        k_s = max(1, math.ceil(cfg.select_fraction * m))
        centers = np.array([descriptors[i][0].center() for i in member_idx])
        spatial_assign, centroids = kmeans(centers, k_s, cfg.max_iters, cfg.tol, rng)
        for s_idx in sorted(set(int(a) for a in spatial_assign)):
            in_cluster = member_idx[spatial_assign == s_idx]
            cluster_centers = centers[spatial_assign == s_idx]
            centroid = centroids[s_idx]
            d = np.sqrt(np.sum((cluster_centers - centroid) ** 2, axis=1))
            best = min(
                range(in_cluster.size),
                key=lambda i: (d[i], descriptors[in_cluster[i]][0].y0, descriptors[in_cluster[i]][0].x0),
            )
            entries.append(
                MosaicEntry(
                    patch=descriptors[int(in_cluster[best])][0],
                    color_cluster=color_idx,
                    spatial_cluster=s_idx,
                )
            )
    return Mosaic(wsi_id=wsi_id, entries=entries, config=cfg)


def save_mosaics(mosaics: list[Mosaic], path: str | Path) -> None:
    Path(path).write_text(json.dumps([m.to_dict() for m in mosaics], indent=2) + "\n")


def load_mosaics(path: str | Path) -> list[Mosaic]:
    return [Mosaic.from_dict(d) for d in json.loads(Path(path).read_text())]
