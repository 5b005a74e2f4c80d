# tests/test_volume.py
"""Tests for label volumes, file formats and overlap statistics."""

import math

import numpy as np
import pytest


class TestLabelVolume:
    """Construction, geometry and indexing."""

    def test_from_labels_is_x_fastest(self):
        """Flat labels fill x first, then y, then z."""
        from app.ted.volume import LabelVolume

        vol = LabelVolume.from_labels([1, 2, 3, 4, 5, 6], (3, 2, 1))
        assert vol.dims == (3, 2, 1)
        assert vol.data[0, 1, 0] == 4
        assert vol.coords(4) == (1, 1, 0)
        assert vol.index_of((2, 0, 0)) == 2

    def test_one_dimensional_array(self):
        """A 1D array becomes an (n, 1, 1) volume."""
        from app.ted.volume import LabelVolume

        vol = LabelVolume(np.arange(5))
        assert vol.dims == (5, 1, 1)
        assert vol.size == 5

    def test_labels_are_read_only(self):
        """The stored label array cannot be written to."""
        from app.ted.volume import LabelVolume

        vol = LabelVolume(np.array([1, 2, 3]))
        with pytest.raises(ValueError):
            vol.data[0, 0, 0] = 7

    def test_rejects_negative_labels(self):
        """Labels must be non-negative."""
        from app.ted.errors import VolumeFormatError
        from app.ted.volume import LabelVolume

        with pytest.raises(VolumeFormatError):
            LabelVolume(np.array([1, -1]))

    def test_rejects_float_labels(self):
        """Labels must be integers."""
        from app.ted.errors import VolumeFormatError
        from app.ted.volume import LabelVolume

        with pytest.raises(VolumeFormatError):
            LabelVolume(np.array([1.0, 2.0]))

    def test_rejects_non_positive_resolution(self):
        """Every resolution component must be positive."""
        from app.ted.errors import VolumeFormatError
        from app.ted.volume import LabelVolume

        with pytest.raises(VolumeFormatError):
            LabelVolume(np.array([1, 2]), resolution=(1.0, 0.0, 1.0))

    def test_payload_size_must_match_dims(self):
        """from_labels checks nx*ny*nz."""
        from app.ted.errors import VolumeFormatError
        from app.ted.volume import LabelVolume

        with pytest.raises(VolumeFormatError):
            LabelVolume.from_labels([1, 1, 2], (2, 2, 1))

    def test_out_of_range_location(self):
        """Location indices and coordinates outside the grid raise IndexError."""
        from app.ted.volume import LabelVolume

        vol = LabelVolume.from_labels([1, 1, 2, 2], (2, 2, 1))
        with pytest.raises(IndexError):
            vol.coords(4)
        with pytest.raises(IndexError):
            vol.index_of((0, 2, 0))

    def test_background_need_not_occur(self):
        """A background label absent from the data is allowed."""
        from app.ted.volume import LabelVolume

        vol = LabelVolume(np.array([1, 2]), background=9)
        assert vol.background == 9

    def test_voxel_distance_is_anisotropic(self):
        """Distances scale each axis by its resolution."""
        from app.ted.volume import LabelVolume, voxel_distance

        vol = LabelVolume(np.zeros((2, 2, 2), dtype=np.uint32), resolution=(6.0, 6.0, 30.0))
        assert voxel_distance(vol, (0, 0, 0), (1, 0, 1)) == pytest.approx(math.hypot(6, 30))
        assert voxel_distance(vol, 0, 3) == pytest.approx(math.hypot(6, 6))

    def test_voxel_distance_is_a_metric(self):
        """Symmetric, zero exactly on the diagonal, and obeys the triangle inequality."""
        from app.ted.volume import LabelVolume, voxel_distance

        rng = np.random.default_rng(31)
        vol = LabelVolume(np.zeros((3, 4, 5), dtype=np.uint32), resolution=(6.0, 4.0, 30.0))
        for _ in range(200):
            i, j, k = (int(v) for v in rng.integers(0, vol.size, size=3))
            assert voxel_distance(vol, i, j) == voxel_distance(vol, j, i)
            assert (voxel_distance(vol, i, j) == 0.0) == (i == j)
            assert voxel_distance(vol, i, k) <= (
                voxel_distance(vol, i, j) + voxel_distance(vol, j, k) + 1e-9
            )


class TestFileFormats:
    """segv1 and text-grid I/O."""

    def test_segv1_round_trip_with_background(self, tmp_path):
        """Dims, resolution, labels and background survive a save and load."""
        from app.ted.volume import LabelVolume, load_volume, save_volume

        rng = np.random.default_rng(0)
        vol = LabelVolume(
            rng.integers(0, 2**32 - 1, size=(3, 4, 5), dtype=np.uint64),
            resolution=(6.0, 6.0, 30.0),
            background=0,
        )
        path = tmp_path / "vol.segv1"
        save_volume(vol, path)
        assert load_volume(path) == vol

    def test_segv1_header_is_aligned(self, tmp_path):
        """A (200,1,1) volume has a 16-byte aligned header and 800 payload bytes."""
        from app.ted.volume import LabelVolume, save_volume

        path = tmp_path / "line.segv1"
        save_volume(LabelVolume(np.ones(200, dtype=np.uint32)), path)
        raw = path.read_bytes()
        header = len(raw) - 800
        assert header % 16 == 0
        assert raw[header - 2 : header] == b"\n\n"
        assert raw.startswith(b"segv1\n")

    def test_text_grid_matches_segv1_volume(self, tmp_path):
        """'1 1\\n2 2\\n' is the 2x2 volume [1,1,2,2]."""
        from app.ted.volume import LabelVolume, load_volume

        path = tmp_path / "grid.txt"
        path.write_text("1 1\n2 2\n")
        assert load_volume(path, "text") == LabelVolume.from_labels([1, 1, 2, 2], (2, 2, 1))

    def test_payload_size_mismatch(self, tmp_path):
        """A payload shorter than the declared dims is rejected."""
        from app.ted.errors import VolumeFormatError
        from app.ted.volume import load_volume

        path = tmp_path / "short.segv1"
        header = b"segv1\ndims 2 2 1\nres 1.0 1.0 1.0\ndtype u32\n\n"
        path.write_bytes(header + np.array([1, 1, 2], dtype="<u4").tobytes())
        with pytest.raises(VolumeFormatError, match="payload"):
            load_volume(path)

    def test_unsupported_dtype(self, tmp_path):
        """Only u32 payloads are understood."""
        from app.ted.errors import VolumeFormatError
        from app.ted.volume import load_volume

        path = tmp_path / "float.segv1"
        header = b"segv1\ndims 1 1 1\nres 1 1 1\ndtype f32\n\n"
        path.write_bytes(header + b"\x00\x00\x80\x3f")
        with pytest.raises(VolumeFormatError, match="dtype"):
            load_volume(path)

    def test_missing_magic(self, tmp_path):
        """Files without the segv1 magic line are rejected."""
        from app.ted.errors import VolumeFormatError
        from app.ted.volume import load_volume

        path = tmp_path / "bad.segv1"
        path.write_bytes(b"segv2\ndims 1 1 1\nres 1 1 1\ndtype u32\n\n\x01\x00\x00\x00")
        with pytest.raises(VolumeFormatError):
            load_volume(path)

    def test_text_grid_rejects_3d(self, tmp_path):
        """The text grid holds a single z-slice."""
        from app.ted.errors import VolumeFormatError
        from app.ted.volume import LabelVolume, save_volume

        with pytest.raises(VolumeFormatError):
            save_volume(LabelVolume(np.ones((2, 2, 2), dtype=np.uint32)), tmp_path / "v.txt", "text")

    def test_guess_format(self):
        """.txt means text grid, anything else segv1."""
        from app.ted.volume import guess_format

        assert guess_format("a/b.txt") == "text"
        assert guess_format("a/b.segv1") == "segv1"
        assert guess_format("a/b") == "segv1"


class TestOverlap:
    """Label sets and the overlap table."""

    def test_label_set(self):
        """Distinct labels of the volume."""
        from app.ted.volume import LabelVolume, label_set

        assert label_set(LabelVolume(np.array([1, 1, 2, 2]))) == {1, 2}

    def test_label_set_skips_background(self):
        """The volume's own background is not a label."""
        from app.ted.volume import LabelVolume, label_set

        assert label_set(LabelVolume(np.array([0, 1, 1, 2]), background=0)) == {1, 2}

    def test_overlap_table(self):
        """Joint counts of [1,1,2,2] against [1,1,1,1]."""
        from app.ted.volume import LabelVolume, overlap_table

        table = overlap_table(LabelVolume(np.array([1, 1, 2, 2])), LabelVolume(np.array([1, 1, 1, 1])))
        assert dict(table.counts) == {(1, 1): 2, (2, 1): 2}
        assert table.total == 4
        assert table.prop_partners() == {1: {1, 2}}

    def test_overlap_table_under_mask(self):
        """Masked locations do not count."""
        from app.ted.volume import LabelVolume, evaluation_mask, overlap_table

        x = LabelVolume(np.array([0, 0, 1, 2]), background=0)
        y = LabelVolume(np.array([7, 8, 5, 5]))
        table = overlap_table(x, y, evaluation_mask(x))
        assert dict(table.counts) == {(1, 5): 1, (2, 5): 1}

    def test_self_overlap_is_diagonal(self):
        """x against itself only pairs equal labels, and counts sum to the evaluated locations."""
        from app.ted.volume import LabelVolume, evaluation_mask, overlap_table

        rng = np.random.default_rng(37)
        for _ in range(20):
            shape = tuple(int(v) for v in rng.integers(1, 6, size=3))
            x = LabelVolume(rng.integers(0, 5, size=shape), background=0)
            mask = evaluation_mask(x)
            table = overlap_table(x, x, mask)
            assert all(k == l for k, l in table.counts)
            assert table.total == int(mask.sum())
            assert overlap_table(x, x).total == x.size

    def test_large_labels_do_not_collide(self):
        """Pair keys keep full 32-bit labels apart."""
        from app.ted.volume import LabelVolume, overlap_table

        big = 2**32 - 1
        table = overlap_table(LabelVolume(np.array([big, 1])), LabelVolume(np.array([1, big])))
        assert dict(table.counts) == {(big, 1): 1, (1, big): 1}

    def test_dimension_mismatch(self):
        """Volumes on different grids cannot be compared."""
        from app.ted.errors import DimensionMismatchError
        from app.ted.volume import LabelVolume, overlap_table

        with pytest.raises(DimensionMismatchError):
            overlap_table(LabelVolume(np.array([1, 2])), LabelVolume(np.array([1, 2, 3])))
