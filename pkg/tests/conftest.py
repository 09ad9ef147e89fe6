import numpy as np
import pytest

from splice.barcode import Archive, Barcode, BarcodeSet
from splice.pyramid import PatchRef
from splice.splice_core import ColorDescriptor
from splice.synth import default_spec, generate_corpus

# Descriptor length for the default 8 bins per channel.
DESC_LEN = 3 * 8 + 3


def make_descriptor(vector) -> ColorDescriptor:
    return ColorDescriptor(values=np.asarray(vector, dtype=np.float64))


def random_descriptors(rng: np.random.Generator, n: int, patch_size: int = 32, factor: int = 4):
    """Raster-ordered (PatchRef, ColorDescriptor) pairs with random vectors."""
    cols = max(1, int(np.ceil(np.sqrt(n))))
    out = []
    for i in range(n):
        row, col = divmod(i, cols)
        pr = PatchRef(
            x0=col * patch_size * factor,
            y0=row * patch_size * factor,
            level_factor=factor,
            size=patch_size,
        )
        out.append((pr, make_descriptor(rng.random(DESC_LEN))))
    return out


def random_archive(rng: np.random.Generator, n_sets: int, max_barcodes: int, n_bits: int) -> Archive:
    sets = []
    for s in range(n_sets):
        n_bc = int(rng.integers(1, max_barcodes + 1))
        barcodes = []
        for b in range(n_bc):
            bits = rng.integers(0, 2, size=n_bits)
            barcodes.append(
                (Barcode.from_bits(bits), PatchRef(x0=b * 32, y0=s * 32, level_factor=1, size=32))
            )
        sets.append(BarcodeSet(wsi_id=f"wsi{s:03d}", label=f"class{s % 3}", barcodes=barcodes))
    return Archive(bits_per_barcode=n_bits, sets=sets)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """2 images per class, 512 px; small enough for CLI round trips."""
    out = tmp_path_factory.mktemp("tiny_corpus")
    manifest = generate_corpus(default_spec(seed=7, per_class=2, image_size=512), out)
    return manifest
