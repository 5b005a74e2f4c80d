# tests/conftest.py
"""Shared test fixtures."""

import numpy as np
import pytest


@pytest.fixture
def shifted_pair():
    """Factory for the 1D two-region volume and a copy with its boundary moved."""
    from app.ted.synth import make_boundary_shift_1d

    def make(shift, n=200, res=1.0):
        return make_boundary_shift_1d(n, res, shift)

    return make


@pytest.fixture(scope="session")
def voronoi_gt():
    """64x64 synthetic ground truth with 16 compact objects."""
    from app.ted.synth import make_ground_truth

    return make_ground_truth((64, 64, 1), 16, seed=3)


@pytest.fixture(scope="session")
def small_pairs():
    """100 seeded (ground truth, proposal) pairs of random labelings, up to 5x5x2 and 4 labels."""
    from app.ted.synth import random_labeling

    rng = np.random.default_rng(2024)
    pairs = []
    for i in range(100):
        dims = (int(rng.integers(1, 6)), int(rng.integers(1, 6)), int(rng.integers(1, 3)))
        n = dims[0] * dims[1] * dims[2]
        kx = int(rng.integers(1, min(4, n) + 1))
        ky = int(rng.integers(1, min(4, n) + 1))
        pairs.append(
            (random_labeling(dims, kx, seed=2 * i), random_labeling(dims, ky, seed=2 * i + 1))
        )
    return pairs


@pytest.fixture
def model_for():
    """Builds the TED model of a pair at a threshold, through the regular pipeline."""
    from app.ted.ilp import build_model
    from app.ted.tolerance import ToleranceConfig, build_regions, candidate_sets
    from app.ted.volume import evaluation_mask

    def build(x, y, threshold, alpha=1.0, beta=1.0):
        sets = candidate_sets(y, ToleranceConfig(threshold=threshold), evaluation_mask(x))
        return build_model(build_regions(x, y, sets), alpha, beta)

    return build


@pytest.fixture
def assert_consistent():
    """Recomputes a report's counts from its relabeled volume and checks feasibility."""
    from app.ted.metrics import raw_split_merge_counts
    from app.ted.tolerance import ToleranceConfig, candidate_sets
    from app.ted.volume import evaluation_mask, label_set

    def check(x, y, report, threshold):
        assert raw_split_merge_counts(x, report.relabeled) == (report.splits, report.merges)

        mask = evaluation_mask(x)
        assert label_set(report.relabeled, mask) == label_set(y, mask)

        sets = candidate_sets(y, ToleranceConfig(threshold=threshold), mask)
        assert sets.tolerates(report.relabeled.flat[sets.locations]).all()

    return check
