import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splice.barcode import (
    Archive,
    Barcode,
    BarcodeSet,
    deserialize_archive,
    hamming,
    load_archive,
    minmax_binarize,
    save_archive,
    search,
    serialize_archive,
    set_storage_bytes,
    wsi_distance,
)
from splice.errors import EmptyArchive, FormatError, InvalidInput
from splice.pyramid import PatchRef

from .conftest import random_archive


# --- per-bit reference implementations ----------------------------------------

def hamming_oracle(a: Barcode, b: Barcode) -> int:
    return int(np.sum(a.bits() != b.bits()))


def wsi_distance_oracle(q: BarcodeSet, t: BarcodeSet) -> float:
    minima = [
        min(hamming_oracle(qb, tb) for tb, _ in t.barcodes) for qb, _ in q.barcodes
    ]
    return float(statistics.median(minima))


def search_oracle(archive, q, top_n, exclude_id=None):
    scored = [
        (wsi_distance_oracle(q, s), s.wsi_id, s.label)
        for s in archive.sets
        if s.wsi_id != exclude_id
    ]
    scored.sort(key=lambda x: (x[0], x[1]))
    return [(wsi_id, label, d) for d, wsi_id, label in scored[:top_n]]


bit_arrays = st.integers(1, 64).flatmap(
    lambda n: st.lists(st.integers(0, 1), min_size=n, max_size=n)
)


class TestMinMax:
    def test_strictly_increasing_all_ones(self):
        bc = minmax_binarize(np.linspace(0, 1, 10))
        assert bc.bits().all()
        assert bc.n_bits == 9

    def test_constant_all_zeros(self):
        bc = minmax_binarize(np.full(8, 3.5))
        assert not bc.bits().any()

    def test_hand_example(self):
        bc = minmax_binarize(np.array([0.1, 0.5, 0.3, 0.3]))
        assert bc.bits().tolist() == [True, False, False]

    def test_too_short_rejected(self):
        with pytest.raises(InvalidInput):
            minmax_binarize(np.array([1.0]))

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInput):
            minmax_binarize(np.array([1.0, np.nan, 2.0]))

    def test_length_always_d_minus_one(self):
        rng = np.random.default_rng(0)
        for d in (2, 5, 64, 192, 1024):
            assert minmax_binarize(rng.random(d)).n_bits == d - 1

    @given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["exp", "cube", "affine", "arctan"]))
    @settings(max_examples=100, deadline=None)
    def test_monotone_transform_invariance(self, seed, name):
        rng = np.random.default_rng(seed)
        v = rng.normal(size=16)
        transforms = {
            "exp": np.exp,
            "cube": lambda x: x ** 3 + x,
            "affine": lambda x: 3.0 * x + 5.0,
            "arctan": np.arctan,
        }
        transformed = transforms[name](v)
        assert minmax_binarize(v).packed == minmax_binarize(transformed).packed


class TestHamming:
    def test_identity(self):
        bc = Barcode.from_bits([1, 0, 1, 1, 0])
        assert hamming(bc, bc) == 0

    def test_complement(self):
        bits = np.array([1, 0, 1, 1, 0, 0, 1, 0, 1, 1, 0])
        a = Barcode.from_bits(bits)
        b = Barcode.from_bits(1 - bits)
        assert hamming(a, b) == bits.size

    def test_hand_example(self):
        a = Barcode.from_bits([1, 0, 1, 1, 0])
        b = Barcode.from_bits([0, 0, 1, 1, 1])
        assert hamming(a, b) == 2

    def test_length_mismatch_rejected(self):
        with pytest.raises(InvalidInput):
            hamming(Barcode.from_bits([1, 0]), Barcode.from_bits([1, 0, 1]))

    @given(bit_arrays)
    @settings(max_examples=100)
    def test_matches_per_bit_reference(self, bits):
        rng = np.random.default_rng(hash(tuple(bits)) % 2 ** 32)
        a = Barcode.from_bits(bits)
        b = Barcode.from_bits(rng.integers(0, 2, size=len(bits)))
        assert hamming(a, b) == hamming_oracle(a, b)

    @given(st.integers(1, 48), st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=200)
    def test_metric_axioms(self, n_bits, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (Barcode.from_bits(rng.integers(0, 2, size=n_bits)) for _ in range(3))
        assert hamming(a, a) == 0
        assert hamming(a, b) == hamming(b, a)
        assert hamming(a, c) <= hamming(a, b) + hamming(b, c)
        if a.packed != b.packed:
            assert hamming(a, b) > 0


class TestBarcodePacking:
    def test_little_endian_bit_order(self):
        bc = Barcode.from_bits([1, 0, 0, 0, 0, 0, 0, 0, 1])
        assert bc.packed == bytes([0b00000001, 0b00000001])

    def test_pad_bits_must_be_zero(self):
        with pytest.raises(InvalidInput):
            Barcode(n_bits=5, packed=bytes([0b11100000]))

    def test_191_bits_pack_to_24_bytes(self):
        bc = minmax_binarize(np.ones(192))
        assert len(bc.packed) == 24
        assert bc.packed[-1] >> 7 == 0

    def test_bits_round_trip(self):
        rng = np.random.default_rng(1)
        bits = rng.integers(0, 2, size=37)
        assert Barcode.from_bits(bits).bits().tolist() == bits.astype(bool).tolist()


def make_set(wsi_id, label, bit_rows):
    barcodes = [
        (Barcode.from_bits(row), PatchRef(x0=i * 32, y0=0, level_factor=1, size=32))
        for i, row in enumerate(bit_rows)
    ]
    return BarcodeSet(wsi_id=wsi_id, label=label, barcodes=barcodes)


class TestWsiDistance:
    def test_self_distance_zero(self):
        s = make_set("a", "c", [[1, 0, 1], [0, 1, 1]])
        assert wsi_distance(s, s) == 0.0

    def test_odd_count_median(self):
        # craft minima {1, 0, 2}
        q = make_set("q", "c", [[1, 0, 0, 0], [0, 0, 0, 0], [1, 1, 1, 1]])
        t = make_set("t", "c", [[0, 0, 0, 0], [1, 1, 1, 0]])
        assert wsi_distance(q, t) == 1.0
        assert wsi_distance(q, t) == wsi_distance_oracle(q, t)

    def test_even_count_mean_of_central(self):
        # minima {3, 1}
        q = make_set("q", "c", [[1, 1, 1, 0], [1, 0, 0, 0]])
        t = make_set("t", "c", [[0, 0, 0, 0]])
        assert wsi_distance(q, t) == 2.0

    def test_directional_asymmetry_tolerated(self):
        q = make_set("q", "c", [[0, 0, 0, 0]])
        t = make_set("t", "c", [[0, 0, 0, 0], [1, 1, 1, 1]])
        assert wsi_distance(q, t) == 0.0
        assert wsi_distance(t, q) == 2.0  # median of {0, 4}

    def test_length_mismatch_rejected(self):
        q = make_set("q", "c", [[1, 0]])
        t = make_set("t", "c", [[1, 0, 1]])
        with pytest.raises(InvalidInput):
            wsi_distance(q, t)

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        archive = random_archive(rng, n_sets=2, max_barcodes=6, n_bits=16)
        q, t = archive.sets
        assert wsi_distance(q, t) == wsi_distance_oracle(q, t)


class TestSearch:
    def test_exact_member_ranks_first(self):
        rng = np.random.default_rng(4)
        archive = random_archive(rng, n_sets=5, max_barcodes=4, n_bits=24)
        q = archive.sets[2]
        results = search(archive, q, top_n=5)
        assert results[0][0] == q.wsi_id
        assert results[0][2] == 0.0

    def test_leave_one_out_exclusion(self):
        rng = np.random.default_rng(5)
        archive = random_archive(rng, n_sets=4, max_barcodes=4, n_bits=24)
        q = archive.sets[0]
        results = search(archive, q, top_n=10, exclude_id=q.wsi_id)
        assert q.wsi_id not in [r[0] for r in results]

    def test_empty_after_exclusion(self):
        rng = np.random.default_rng(6)
        archive = random_archive(rng, n_sets=1, max_barcodes=2, n_bits=8)
        with pytest.raises(EmptyArchive):
            search(archive, archive.sets[0], top_n=1, exclude_id=archive.sets[0].wsi_id)

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_full_ranking_matches_oracle(self, seed):
        rng = np.random.default_rng(seed)
        archive = random_archive(
            rng,
            n_sets=int(rng.integers(2, 11)),
            max_barcodes=8,
            n_bits=int(rng.integers(2, 33)),
        )
        q = archive.sets[int(rng.integers(len(archive.sets)))]
        got = search(archive, q, top_n=len(archive.sets))
        expected = search_oracle(archive, q, top_n=len(archive.sets))
        assert got == expected


class TestArchiveIo:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(7)
        archive = random_archive(rng, n_sets=6, max_barcodes=5, n_bits=191)
        path = tmp_path / "archive.splb"
        save_archive(archive, path)
        loaded = load_archive(path)
        assert serialize_archive(loaded) == serialize_archive(archive)
        assert loaded.bits_per_barcode == 191

    def test_191_bit_barcode_on_disk_layout(self):
        rng = np.random.default_rng(8)
        archive = random_archive(rng, n_sets=1, max_barcodes=1, n_bits=191)
        data = serialize_archive(archive)
        # magic+version+bits+n_sets, id "wsi000", label "class0", count, coords, payload
        expected = 4 + 1 + 4 + 4 + (2 + 6) + (2 + 6) + 4 + 12 + 24
        assert len(data) == expected

    def test_bad_magic_rejected(self):
        with pytest.raises(FormatError):
            deserialize_archive(b"NOPE" + b"\x00" * 40)

    def test_truncation_rejected(self, tmp_path):
        rng = np.random.default_rng(9)
        archive = random_archive(rng, n_sets=3, max_barcodes=3, n_bits=16)
        data = serialize_archive(archive)
        with pytest.raises(FormatError):
            deserialize_archive(data[:-3])

    def test_pad_bit_violation_rejected(self):
        rng = np.random.default_rng(10)
        archive = random_archive(rng, n_sets=1, max_barcodes=1, n_bits=5)
        data = bytearray(serialize_archive(archive))
        data[-1] |= 0b10000000  # set a pad bit in the last barcode byte
        with pytest.raises(FormatError):
            deserialize_archive(bytes(data))

    def test_trailing_garbage_rejected(self):
        rng = np.random.default_rng(11)
        archive = random_archive(rng, n_sets=1, max_barcodes=1, n_bits=8)
        with pytest.raises(FormatError):
            deserialize_archive(serialize_archive(archive) + b"x")

    def test_storage_bytes_formula(self):
        s = make_set("ab", "cd", [[1, 0, 1, 0, 0]] * 3)
        # header: 2+2 + 2+2 + 4 = 12; barcodes: 3 * (12 + 1)
        assert set_storage_bytes(s) == 12 + 3 * 13


class TestArchiveInvariants:
    def test_duplicate_ids_rejected(self):
        s1 = make_set("a", "c", [[1, 0]])
        s2 = make_set("a", "c", [[0, 1]])
        with pytest.raises(InvalidInput):
            Archive(bits_per_barcode=2, sets=[s1, s2])

    def test_mixed_lengths_rejected(self):
        s1 = make_set("a", "c", [[1, 0]])
        s2 = make_set("b", "c", [[0, 1, 1]])
        with pytest.raises(InvalidInput):
            Archive(bits_per_barcode=2, sets=[s1, s2])

    def test_empty_set_rejected(self):
        with pytest.raises(InvalidInput):
            BarcodeSet(wsi_id="a", label="c", barcodes=[])
