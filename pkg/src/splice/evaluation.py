"""Leave-one-out retrieval evaluation: majority voting, metrics, accounting."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .barcode import Archive, search, set_storage_bytes
from .errors import InvalidInput

# Sentinel label for "no majority"; counts as an error, never a hit.
ABSTAIN = "<ABSTAIN>"


@dataclass
class VoteResult:
    query_id: str
    true_label: str
    retrieved: list[tuple[str, str, float]]  # (wsi_id, label, distance)
    predicted: str


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float


@dataclass
class MetricsReport:
    per_class: dict[str, ClassMetrics]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    accuracy: float

    def to_dict(self) -> dict:
        return {
            "per_class": {
                label: {"precision": m.precision, "recall": m.recall, "f1": m.f1}
                for label, m in self.per_class.items()
            },
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "accuracy": self.accuracy,
        }


@dataclass
class AccountingReport:
    patch_counts: list[int]
    storage_bytes: list[int]
    search_seconds: float

    def to_dict(self) -> dict:
        counts = np.array(self.patch_counts, dtype=np.float64)
        return {
            "n_patches": int(counts.sum()) if counts.size else 0,
            "patches_per_wsi_mean": float(counts.mean()) if counts.size else 0.0,
            "patches_per_wsi_std": float(counts.std()) if counts.size else 0.0,
            "patch_counts": self.patch_counts,
            "storage_bytes": self.storage_bytes,
            "storage_total_kb": sum(self.storage_bytes) / 1024.0,
            "search_seconds": self.search_seconds,
        }


def majority_vote(retrieved: list[str], n: int, fallback_top1: bool = False) -> str:
    """Vote over the first n labels; quota is floor(n/2) + 1.

    At most one label can reach the quota. With no majority the vote
    abstains, unless ``fallback_top1`` demotes the decision to the top-1
    label.
    """
    if n < 1:
        raise InvalidInput(f"n must be >= 1, got {n}")
    if not retrieved:
        raise InvalidInput("cannot vote over an empty retrieval list")
    window = retrieved[:n]
    quota = n // 2 + 1
    counts: dict[str, int] = {}
    for label in window:
        counts[label] = counts.get(label, 0) + 1
    for label, c in counts.items():
        if c >= quota:
            return label
    return retrieved[0] if fallback_top1 else ABSTAIN


def leave_one_out(
    archive: Archive,
    n_values: list[int],
    fallback_top1: bool = False,
) -> dict[int, list[VoteResult]]:
    """Query every set against the archive minus itself, per requested n."""
    if len(archive.sets) < 2:
        raise InvalidInput("leave-one-out needs at least two archive sets")
    n_max = max(n_values)
    results: dict[int, list[VoteResult]] = {n: [] for n in n_values}
    for q in archive.sets:
        retrieved = search(archive, q, top_n=n_max, exclude_id=q.wsi_id)
        labels = [label for _, label, _ in retrieved]
        for n in n_values:
            results[n].append(
                VoteResult(
                    query_id=q.wsi_id,
                    true_label=q.label,
                    retrieved=retrieved[:n],
                    predicted=majority_vote(labels, n, fallback_top1=fallback_top1),
                )
            )
    return results


def compute_metrics(results: list[VoteResult], classes: set[str]) -> MetricsReport:
    """Per-class precision/recall/F1 plus unweighted macro averages.

    An abstention is an error: a false negative for the true class and a
    false positive for no class. Empty ratios (0/0) resolve to 0.
    """
    for r in results:
        if r.true_label not in classes:
            raise InvalidInput(f"unknown true label {r.true_label!r} for query {r.query_id!r}")
    tp = {c: 0 for c in classes}
    fp = {c: 0 for c in classes}
    fn = {c: 0 for c in classes}
    correct = 0
    for r in results:
        if r.predicted == r.true_label:
            tp[r.true_label] += 1
            correct += 1
        else:
            fn[r.true_label] += 1
            if r.predicted in classes:
                fp[r.predicted] += 1
    per_class = {}
    for c in sorted(classes):
        precision = tp[c] / (tp[c] + fp[c]) if tp[c] + fp[c] else 0.0
        recall = tp[c] / (tp[c] + fn[c]) if tp[c] + fn[c] else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[c] = ClassMetrics(precision=precision, recall=recall, f1=f1)
    k = len(per_class)
    return MetricsReport(
        per_class=per_class,
        macro_precision=sum(m.precision for m in per_class.values()) / k,
        macro_recall=sum(m.recall for m in per_class.values()) / k,
        macro_f1=sum(m.f1 for m in per_class.values()) / k,
        accuracy=correct / len(results) if results else 0.0,
    )


def accounting(archive: Archive, n_values: list[int] | None = None) -> AccountingReport:
    """Per-WSI barcode counts, on-disk sizes, and a timed LOO search sweep."""
    patch_counts = [len(s.barcodes) for s in archive.sets]
    storage = [set_storage_bytes(s) for s in archive.sets]
    seconds = 0.0
    if len(archive.sets) >= 2:
        n_max = max(n_values) if n_values else 1
        start = time.perf_counter()
        for q in archive.sets:
            search(archive, q, top_n=n_max, exclude_id=q.wsi_id)
        seconds = time.perf_counter() - start
    return AccountingReport(
        patch_counts=patch_counts,
        storage_bytes=storage,
        search_seconds=seconds,
    )
