"""MinMax barcodes, Hamming search, and the on-disk archive format.

A feature vector of dimension d maps to a (d-1)-bit barcode via the signs
of its successive differences. Barcodes are packed 8 bits per byte,
little-endian bit order within each byte, trailing pad bits zero.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyArchive, FormatError, InvalidInput, IoError
from .pyramid import PatchRef

MAGIC = b"SPLB"
FORMAT_VERSION = 1

# Per-byte popcount table; numpy's bitwise_count needs numpy >= 2.0.
_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


@dataclass(frozen=True)
class Barcode:
    n_bits: int
    packed: bytes

    def __post_init__(self):
        if self.n_bits < 1:
            raise InvalidInput(f"barcode must have at least one bit, got {self.n_bits}")
        n_bytes = (self.n_bits + 7) // 8
        if len(self.packed) != n_bytes:
            raise InvalidInput(
                f"{self.n_bits}-bit barcode needs {n_bytes} bytes, got {len(self.packed)}"
            )
        pad = 8 * n_bytes - self.n_bits
        if pad and (self.packed[-1] >> (8 - pad)):
            raise InvalidInput("trailing pad bits must be zero")

    def bits(self) -> np.ndarray:
        """Unpack to a boolean array of length n_bits."""
        arr = np.frombuffer(self.packed, dtype=np.uint8)
        return np.unpackbits(arr, bitorder="little")[: self.n_bits].astype(bool)

    @classmethod
    def from_bits(cls, bits: np.ndarray) -> "Barcode":
        bits = np.asarray(bits, dtype=np.uint8)
        return cls(n_bits=int(bits.size), packed=np.packbits(bits, bitorder="little").tobytes())


def minmax_binarize(values: np.ndarray) -> Barcode:
    """Bit i is 1 iff values[i+1] - values[i] > 0 (ties map to 0)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size < 2:
        raise InvalidInput(f"need a 1-D vector of dimension >= 2, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise InvalidInput("feature vector contains non-finite values")
    return Barcode.from_bits(np.diff(values) > 0)


def hamming(a: Barcode, b: Barcode) -> int:
    """Popcount of XOR over the packed bytes; pad bits contribute zero."""
    if a.n_bits != b.n_bits:
        raise InvalidInput(f"barcode length mismatch: {a.n_bits} vs {b.n_bits}")
    xa = np.frombuffer(a.packed, dtype=np.uint8)
    xb = np.frombuffer(b.packed, dtype=np.uint8)
    return int(_POPCOUNT[np.bitwise_xor(xa, xb)].sum())


@dataclass
class BarcodeSet:
    wsi_id: str
    label: str
    barcodes: list[tuple[Barcode, PatchRef]]

    def __post_init__(self):
        if not self.barcodes:
            raise InvalidInput(f"barcode set {self.wsi_id!r} must contain at least one barcode")
        lengths = {bc.n_bits for bc, _ in self.barcodes}
        if len(lengths) != 1:
            raise InvalidInput(f"mixed barcode lengths in set {self.wsi_id!r}: {sorted(lengths)}")

    @property
    def n_bits(self) -> int:
        return self.barcodes[0][0].n_bits

    def packed_matrix(self) -> np.ndarray:
        """All barcodes stacked as a (n, n_bytes) uint8 matrix."""
        return np.stack([np.frombuffer(bc.packed, dtype=np.uint8) for bc, _ in self.barcodes])


@dataclass
class Archive:
    bits_per_barcode: int
    sets: list[BarcodeSet]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [s.wsi_id for s in self.sets]
        if len(set(ids)) != len(ids):
            raise InvalidInput("archive wsi_ids must be unique")
        for s in self.sets:
            if s.n_bits != self.bits_per_barcode:
                raise InvalidInput(
                    f"set {s.wsi_id!r} has {s.n_bits}-bit barcodes, archive "
                    f"expects {self.bits_per_barcode}"
                )

    def get(self, wsi_id: str) -> BarcodeSet:
        for s in self.sets:
            if s.wsi_id == wsi_id:
                return s
        raise InvalidInput(f"no set with id {wsi_id!r} in archive")


def wsi_distance(q: BarcodeSet, t: BarcodeSet) -> float:
    """Median over q's barcodes of each one's minimum Hamming distance into t.

    Directional by construction: the query side drives the minima. An even
    count of minima yields the mean of the two central values.
    """
    if q.n_bits != t.n_bits:
        raise InvalidInput(f"barcode length mismatch: {q.n_bits} vs {t.n_bits}")
    target = t.packed_matrix()
    minima = np.empty(len(q.barcodes), dtype=np.int64)
    for i, (bc, _) in enumerate(q.barcodes):
        row = np.frombuffer(bc.packed, dtype=np.uint8)
        dists = _POPCOUNT[np.bitwise_xor(target, row)].sum(axis=1)
        minima[i] = dists.min()
    return float(np.median(minima))


def search(
    archive: Archive,
    q: BarcodeSet,
    top_n: int,
    exclude_id: str | None = None,
) -> list[tuple[str, str, float]]:
    """Rank archive members by median-of-minimum distance to the query.

    Ties sort by wsi_id so the ordering is total and deterministic.
    """
    if top_n < 1:
        raise InvalidInput(f"top_n must be >= 1, got {top_n}")
    candidates = [s for s in archive.sets if s.wsi_id != exclude_id]
    if not candidates:
        raise EmptyArchive("no archive members remain after exclusion")
    scored = [(wsi_distance(q, s), s.wsi_id, s.label) for s in candidates]
    scored.sort(key=lambda item: (item[0], item[1]))
    return [(wsi_id, label, dist) for dist, wsi_id, label in scored[:top_n]]


def build_archive(
    features_by_wsi: dict[str, list],
    labels: dict[str, str],
    metadata: dict | None = None,
) -> Archive:
    """Binarize grouped feature vectors into an archive.

    ``features_by_wsi`` maps wsi_id to its FeatureVector list; labels come
    from the manifest.
    """
    sets = []
    bits = None
    for wsi_id in sorted(features_by_wsi):
        fvs = features_by_wsi[wsi_id]
        if not fvs:
            raise InvalidInput(f"no features for wsi {wsi_id!r}")
        barcodes = [(minmax_binarize(fv.values), fv.patch) for fv in fvs]
        if bits is None:
            bits = barcodes[0][0].n_bits
        sets.append(BarcodeSet(wsi_id=wsi_id, label=labels[wsi_id], barcodes=barcodes))
    if bits is None:
        raise InvalidInput("cannot build an archive from zero feature sets")
    return Archive(bits_per_barcode=bits, sets=sets, metadata=metadata or {})


def _write_str(out: io.BytesIO, s: str) -> None:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise InvalidInput(f"string too long for format: {len(raw)} bytes")
    out.write(struct.pack("<H", len(raw)))
    out.write(raw)


def serialize_archive(a: Archive) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<B", FORMAT_VERSION))
    out.write(struct.pack("<II", a.bits_per_barcode, len(a.sets)))
    for s in a.sets:
        _write_str(out, s.wsi_id)
        _write_str(out, s.label)
        out.write(struct.pack("<I", len(s.barcodes)))
        for bc, pr in s.barcodes:
            out.write(struct.pack("<IIHH", pr.x0, pr.y0, pr.level_factor, pr.size))
            out.write(bc.packed)
    return out.getvalue()


def save_archive(a: Archive, path: str | Path) -> None:
    try:
        Path(path).write_bytes(serialize_archive(a))
    except OSError as exc:
        raise IoError(f"cannot write archive to {path}: {exc}") from exc


class _Reader:
    def __init__(self, data: bytes, origin: str):
        self.data = data
        self.pos = 0
        self.origin = origin

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.origin}: truncated at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def deserialize_archive(data: bytes, origin: str = "<bytes>") -> Archive:
    r = _Reader(data, origin)
    if r.take(4) != MAGIC:
        raise FormatError(f"{origin}: bad magic, not a barcode archive")
    (version,) = r.unpack("<B")
    if version != FORMAT_VERSION:
        raise FormatError(f"{origin}: unsupported format version {version}")
    bits, n_sets = r.unpack("<II")
    if bits < 1:
        raise FormatError(f"{origin}: invalid barcode length {bits}")
    n_bytes = (bits + 7) // 8
    sets = []
    for _ in range(n_sets):
        (id_len,) = r.unpack("<H")
        wsi_id = r.take(id_len).decode("utf-8")
        (label_len,) = r.unpack("<H")
        label = r.take(label_len).decode("utf-8")
        (n_barcodes,) = r.unpack("<I")
        barcodes = []
        for _ in range(n_barcodes):
            x0, y0, level_factor, size = r.unpack("<IIHH")
            packed = r.take(n_bytes)
            try:
                bc = Barcode(n_bits=bits, packed=packed)
                pr = PatchRef(x0=x0, y0=y0, level_factor=level_factor, size=size)
            except InvalidInput as exc:
                raise FormatError(f"{origin}: set {wsi_id!r}: {exc}") from exc
            barcodes.append((bc, pr))
        try:
            sets.append(BarcodeSet(wsi_id=wsi_id, label=label, barcodes=barcodes))
        except InvalidInput as exc:
            raise FormatError(f"{origin}: {exc}") from exc
    if r.pos != len(data):
        raise FormatError(f"{origin}: {len(data) - r.pos} trailing bytes")
    try:
        return Archive(bits_per_barcode=bits, sets=sets)
    except InvalidInput as exc:
        raise FormatError(f"{origin}: {exc}") from exc


def load_archive(path: str | Path) -> Archive:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read archive from {path}: {exc}") from exc
    return deserialize_archive(data, origin=str(path))


def set_storage_bytes(s: BarcodeSet) -> int:
    """On-disk size of one set under the archive format."""
    n_bytes = (s.n_bits + 7) // 8
    header = 2 + len(s.wsi_id.encode("utf-8")) + 2 + len(s.label.encode("utf-8")) + 4
    return header + len(s.barcodes) * (12 + n_bytes)
