# tests/test_main.py
"""Tests for the ted command line."""

import csv
import json

import numpy as np
import pytest


@pytest.fixture
def shifted_files(tmp_path):
    """gt.segv1 / proposal.segv1 for a 1D boundary shift of 2 nm."""
    from app.main import main

    assert main(
        ["synth", "--generator", "boundary-1d", "--length", "200", "--shift-nm", "2",
         "--out-dir", str(tmp_path)]
    ) == 0
    return tmp_path / "gt.segv1", tmp_path / "proposal.segv1"


class TestSynth:
    """ted synth."""

    def test_boundary_files(self, shifted_files):
        """The 1D generator writes both volumes."""
        from app.ted.volume import load_volume

        gt_path, proposal_path = shifted_files
        gt, proposal = load_volume(gt_path), load_volume(proposal_path)
        assert gt.dims == (200, 1, 1)
        assert int((gt.flat != proposal.flat).sum()) == 2

    def test_voronoi_merge(self, tmp_path):
        """A generated ground truth with merges applied."""
        from app.main import main
        from app.ted.metrics import raw_split_merge_counts
        from app.ted.volume import load_volume

        code = main(
            ["synth", "--dims", "32,32,1", "--objects", "8", "--kind", "merge",
             "--magnitude", "3", "--seed", "7", "--out-dir", str(tmp_path)]
        )
        assert code == 0
        gt = load_volume(tmp_path / "gt.segv1")
        proposal = load_volume(tmp_path / "proposal.segv1")
        assert raw_split_merge_counts(gt, proposal) == (0, 3)

    def test_modification_needs_kind(self, tmp_path):
        """Without --kind the voronoi generator has nothing to apply."""
        from app.main import EXIT_INPUT_ERROR, main

        assert main(["synth", "--out-dir", str(tmp_path)]) == EXIT_INPUT_ERROR


class TestCompare:
    """ted compare."""

    def test_report(self, shifted_files, tmp_path):
        """Beyond the threshold the shift is one split and one merge."""
        from app.main import EXIT_OK, REPORT_SCHEMA, main

        gt, proposal = shifted_files
        report = tmp_path / "report.json"
        code = main(
            ["compare", "--gt", str(gt), "--proposal", str(proposal),
             "--threshold-nm", "1", "--report", str(report)]
        )
        assert code == EXIT_OK
        doc = json.loads(report.read_text())
        assert doc["schema"] == REPORT_SCHEMA
        assert (doc["splits"], doc["merges"], doc["ted_value"]) == (1, 1, 2.0)
        assert doc["split_pairs"] == [{"gt_label": 2, "fragments": [1, 2]}]
        assert doc["merge_pairs"] == [{"prop_label": 1, "gt_labels": [1, 2]}]
        assert doc["error_locations"]["both"] == [100, 101]
        assert doc["config"]["threshold_nm"] == 1.0
        assert doc["solver"]["optimal"] is True
        assert "timing" in doc

    def test_tolerated_shift(self, shifted_files, tmp_path):
        """Within the threshold the TED is zero and the relabeled proposal equals gt."""
        from app.main import main
        from app.ted.volume import load_volume

        gt, proposal = shifted_files
        relabeled = tmp_path / "relabeled.segv1"
        errors = tmp_path / "errors.segv1"
        report = tmp_path / "report.json"
        code = main(
            ["compare", "--gt", str(gt), "--proposal", str(proposal), "--threshold-nm", "2",
             "--report", str(report), "--relabeled-out", str(relabeled),
             "--errors-out", str(errors)]
        )
        assert code == 0
        assert json.loads(report.read_text())["ted_value"] == 0.0
        assert load_volume(relabeled) == load_volume(gt)
        assert not load_volume(errors).flat.any()

    def test_report_is_deterministic(self, shifted_files, tmp_path):
        """Apart from the timing block, equal runs write byte-identical reports."""
        import re

        from app.main import main

        gt, proposal = shifted_files
        report = tmp_path / "report.json"
        texts = []
        for _ in range(2):
            main(["compare", "--gt", str(gt), "--proposal", str(proposal), "--report", str(report)])
            raw = report.read_bytes().decode("utf-8")
            assert '"timing"' in raw
            texts.append(re.sub(r'"timing": \{[^{}]*\}', '"timing": {}', raw))
        assert texts[0] == texts[1]

    def test_text_grid_inputs(self, tmp_path):
        """Text grids are picked up by suffix."""
        from app.main import main

        (tmp_path / "gt.txt").write_text("1 1\n2 2\n")
        (tmp_path / "proposal.txt").write_text("1 1\n1 1\n")
        report = tmp_path / "report.json"
        code = main(
            ["compare", "--gt", str(tmp_path / "gt.txt"), "--proposal",
             str(tmp_path / "proposal.txt"), "--report", str(report)]
        )
        assert code == 0
        doc = json.loads(report.read_text())
        assert (doc["splits"], doc["merges"]) == (0, 1)
        assert doc["baseline"]["voi"]["total"] == pytest.approx(1.0)

    def test_background_flag(self, tmp_path):
        """--background masks ground truth locations."""
        from app.main import main

        (tmp_path / "gt.txt").write_text("0 0 1 1\n")
        (tmp_path / "proposal.txt").write_text("5 6 1 1\n")
        report = tmp_path / "report.json"
        code = main(
            ["compare", "--gt", str(tmp_path / "gt.txt"), "--proposal",
             str(tmp_path / "proposal.txt"), "--background", "0", "--report", str(report)]
        )
        assert code == 0
        doc = json.loads(report.read_text())
        assert doc["masked_locations"] == 2
        assert doc["ted_value"] == 0.0

    def test_limit_hit(self, shifted_files, tmp_path):
        """An incomplete search still writes the report and exits with 3."""
        from app.main import EXIT_LIMIT_HIT, main

        gt, proposal = shifted_files
        report = tmp_path / "report.json"
        code = main(
            ["compare", "--gt", str(gt), "--proposal", str(proposal), "--threshold-nm", "2",
             "--max-nodes", "1", "--report", str(report)]
        )
        assert code == EXIT_LIMIT_HIT
        doc = json.loads(report.read_text())
        assert doc["solver"]["optimal"] is False
        assert doc["ted_value"] == 2.0

    def test_missing_input(self, tmp_path):
        """Unreadable inputs exit with 2."""
        from app.main import EXIT_INPUT_ERROR, main

        code = main(
            ["compare", "--gt", str(tmp_path / "nope.segv1"), "--proposal",
             str(tmp_path / "nope.segv1")]
        )
        assert code == EXIT_INPUT_ERROR

    def test_dimension_mismatch(self, tmp_path):
        """Volumes on different grids exit with 2."""
        from app.main import EXIT_INPUT_ERROR, main

        (tmp_path / "gt.txt").write_text("1 1\n2 2\n")
        (tmp_path / "proposal.txt").write_text("1 1 1\n")
        code = main(
            ["compare", "--gt", str(tmp_path / "gt.txt"), "--proposal",
             str(tmp_path / "proposal.txt")]
        )
        assert code == EXIT_INPUT_ERROR

    def test_negative_threshold(self, shifted_files):
        """Invalid configuration exits with 2."""
        from app.main import EXIT_INPUT_ERROR, main

        gt, proposal = shifted_files
        code = main(
            ["compare", "--gt", str(gt), "--proposal", str(proposal), "--threshold-nm", "-1"]
        )
        assert code == EXIT_INPUT_ERROR

    @pytest.mark.parametrize("threshold", ["inf", "nan"])
    def test_non_finite_threshold(self, shifted_files, threshold):
        """Infinite or NaN thresholds are input errors, not crashes."""
        from app.main import EXIT_INPUT_ERROR, main

        gt, proposal = shifted_files
        code = main(
            ["compare", "--gt", str(gt), "--proposal", str(proposal), "--threshold-nm", threshold]
        )
        assert code == EXIT_INPUT_ERROR


class TestSweepAndExperiment:
    """ted sweep and ted experiment."""

    def test_sweep(self, shifted_files, tmp_path):
        """One CSV row per threshold."""
        from app.main import main

        gt, proposal = shifted_files
        out = tmp_path / "sweep.csv"
        code = main(
            ["sweep", "--gt", str(gt), "--proposal", str(proposal), "--sweep", "2,0,1",
             "--sweep-out", str(out)]
        )
        assert code == 0
        with open(out, newline="") as f:
            rows = list(csv.DictReader(f))
        assert [float(r["threshold_nm"]) for r in rows] == [0.0, 1.0, 2.0]
        assert [float(r["ted_value"]) for r in rows] == [2.0, 2.0, 0.0]

    def test_sweep_rejects_infinite_threshold(self, shifted_files, tmp_path):
        """A non-finite sweep threshold exits with 2 and writes nothing."""
        from app.main import EXIT_INPUT_ERROR, main

        gt, proposal = shifted_files
        out = tmp_path / "sweep.csv"
        code = main(
            ["sweep", "--gt", str(gt), "--proposal", str(proposal), "--sweep", "0,inf",
             "--sweep-out", str(out)]
        )
        assert code == EXIT_INPUT_ERROR
        assert not out.exists()

    def test_experiment(self, tmp_path):
        """The modification comparison writes three rows."""
        from app.main import main

        out = tmp_path / "modifications.csv"
        code = main(
            ["experiment", "--dims", "32,32,1", "--objects", "8", "--count", "3",
             "--shift-nm", "2", "--threshold-nm", "2", "--out", str(out)]
        )
        assert code == 0
        with open(out, newline="") as f:
            rows = list(csv.DictReader(f))
        assert [r["kind"] for r in rows] == ["shift", "split", "merge"]
        assert float(rows[0]["ted_value"]) == 0.0
        assert np.isclose(float(rows[1]["raw_splits"]), 3)
