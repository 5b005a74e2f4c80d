# tests/test_experiments.py
"""Tests for threshold sweeps and the modification comparison."""

import csv

import pytest


class TestSweepThresholds:
    """Concurrent TED over several thresholds."""

    async def test_rows_in_ascending_order(self, shifted_pair):
        """Rows come back sorted by threshold with the expected values."""
        from app.ted.experiments import sweep_thresholds

        x, y = shifted_pair(3)
        rows = await sweep_thresholds(x, y, [4.0, 0.0, 2.0])
        assert [r.threshold_nm for r in rows] == [0.0, 2.0, 4.0]
        assert [r.ted_value for r in rows] == [2.0, 2.0, 0.0]
        assert [(r.splits, r.merges) for r in rows] == [(1, 1), (1, 1), (0, 0)]
        assert all(r.optimal for r in rows)
        assert rows[-1].voi_total == 0.0
        assert rows[-1].rand_index == 1.0

    async def test_empty_sweep(self, shifted_pair):
        """At least one threshold is needed."""
        from app.ted.experiments import sweep_thresholds

        x, y = shifted_pair(3)
        with pytest.raises(ValueError):
            await sweep_thresholds(x, y, [])

    async def test_negative_threshold(self, shifted_pair):
        """Thresholds must be non-negative."""
        from app.ted.experiments import sweep_thresholds

        x, y = shifted_pair(3)
        with pytest.raises(ValueError):
            await sweep_thresholds(x, y, [1.0, -1.0])

    @pytest.mark.parametrize("bad", [float("inf"), float("nan")])
    async def test_non_finite_threshold(self, shifted_pair, bad):
        """Thresholds must be finite."""
        from app.ted.experiments import sweep_thresholds

        x, y = shifted_pair(3)
        with pytest.raises(ValueError):
            await sweep_thresholds(x, y, [1.0, bad])

    async def test_sweep_csv(self, shifted_pair, tmp_path):
        """The CSV has a header and one row per threshold."""
        from app.ted.experiments import sweep_thresholds, write_sweep_csv

        x, y = shifted_pair(3)
        path = tmp_path / "sweep.csv"
        write_sweep_csv(await sweep_thresholds(x, y, [0.0, 3.0]), path)
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        assert [r["threshold_nm"] for r in rows] == ["0.0", "3.0"]
        assert [r["ted_value"] for r in rows] == ["2.0", "0.0"]


class TestCompareModifications:
    """Shift, splits and merges scored side by side."""

    def test_rows(self, voronoi_gt, tmp_path):
        """The shift is free under TED but not under RI and VOI; counts are exact."""
        from app.ted.experiments import compare_modifications, write_modifications_csv

        rows = compare_modifications(
            voronoi_gt, shift_nm=2.0, count=10, threshold_nm=2.0, seed=1
        )
        shift, split, merge = rows
        assert [r.kind for r in rows] == ["shift", "split", "merge"]
        assert shift.ted_value == 0
        assert shift.voi_total > 0.05
        assert shift.rand_index < 0.999
        assert (split.raw_splits, split.raw_merges) == (10, 0)
        assert (merge.raw_splits, merge.raw_merges) == (0, 10)
        assert split.merges == 0
        assert merge.splits == 0

        path = tmp_path / "modifications.csv"
        write_modifications_csv(rows, path)
        with open(path, newline="") as f:
            assert [r["kind"] for r in csv.DictReader(f)] == ["shift", "split", "merge"]
