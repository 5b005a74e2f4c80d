# app/ted/metrics.py
"""Segmentation measures: raw split/merge counts, Rand index, VOI and the TED itself."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import DimensionMismatchError, EmptyDomainError
from .ilp import SolverLimits, TedSolution, build_model, solve_exact
from .tolerance import CandidateRegion, ToleranceConfig, build_regions, candidate_sets
from .volume import LabelVolume, OverlapTable, check_same_dims, evaluation_mask, overlap_table

logger = logging.getLogger(__name__)


class ErrorTag(IntEnum):
    """Per-location error classification; SPLIT | MERGE == BOTH."""

    NONE = 0
    SPLIT = 1
    MERGE = 2
    BOTH = 3


class Voi(NamedTuple):
    """Variation of information in bits: H(X|Y), H(Y|X) and their sum."""

    split: float
    merge: float
    total: float


class TedOptions(BaseModel):
    """Everything :func:`ted` needs besides the two volumes."""

    model_config = ConfigDict(frozen=True)

    tolerance: ToleranceConfig = Field(default_factory=ToleranceConfig)
    alpha: float = Field(1.0, ge=0, description="Effort to fix one split.")
    beta: float = Field(1.0, ge=0, description="Effort to fix one merge.")
    limits: SolverLimits = Field(default_factory=SolverLimits)

    def with_threshold(self, threshold: float) -> TedOptions:
        tolerance = ToleranceConfig(
            threshold=threshold,
            allow_background_relabel=self.tolerance.allow_background_relabel,
            strategy=self.tolerance.strategy,
        )
        return self.model_copy(update={"tolerance": tolerance})


@dataclass(frozen=True)
class BaselineScores:
    rand_index: float | None
    voi: Voi
    raw_splits: int
    raw_merges: int


@dataclass(frozen=True)
class SolverStats:
    optimal: bool
    gap: float
    nodes: int
    seconds: float


@dataclass(frozen=True, eq=False)
class TedReport:
    """Result of :func:`ted`.

    ``error_locations`` holds one :class:`ErrorTag` value per voxel, in grid
    shape. ``relabeled_baseline`` scores the closest tolerable relabeling
    against the ground truth.
    """

    ted_value: float
    splits: int
    merges: int
    split_pairs: tuple[tuple[int, tuple[int, ...]], ...]
    merge_pairs: tuple[tuple[int, tuple[int, ...]], ...]
    relabeled: LabelVolume
    error_locations: np.ndarray
    baseline: BaselineScores
    relabeled_baseline: BaselineScores
    solver: SolverStats
    regions: int
    masked_locations: int
    background_masked: bool


def raw_split_merge_counts(x: LabelVolume, y: LabelVolume) -> tuple[int, int]:
    """Splits and merges of y against x without any tolerance."""
    return _split_merge(overlap_table(x, y, evaluation_mask(x)))


def rand_index(x: LabelVolume, y: LabelVolume) -> float:
    """Fraction of location pairs on which x and y agree."""
    return _rand_index(overlap_table(x, y, evaluation_mask(x)))


def variation_of_information(x: LabelVolume, y: LabelVolume) -> Voi:
    """H(X|Y) (split part), H(Y|X) (merge part) and their sum, in bits."""
    return _voi(overlap_table(x, y, evaluation_mask(x)))


def baseline_scores(x: LabelVolume, y: LabelVolume) -> BaselineScores:
    table = overlap_table(x, y, evaluation_mask(x))
    splits, merges = _split_merge(table)
    return BaselineScores(
        rand_index=_rand_index(table) if table.total >= 2 else None,
        voi=_voi(table),
        raw_splits=splits,
        raw_merges=merges,
    )


def localize_errors(
    solution: TedSolution, regions: Sequence[CandidateRegion], n_locations: int
) -> np.ndarray:
    """Tags every location of a region whose label pair takes part in a split or merge.

    A region with ground truth label k assigned label l is a split if k has
    two or more partners, a merge if l has two or more. Locations outside all
    regions (masked) stay NONE.
    """
    gt_degree = Counter(k for k, _ in solution.matches)
    prop_degree = Counter(l for _, l in solution.matches)
    tags = np.zeros(n_locations, dtype=np.uint8)
    for region, label in zip(regions, solution.assignment):
        tag = ErrorTag.NONE
        if gt_degree[region.gt_label] >= 2:
            tag |= ErrorTag.SPLIT
        if prop_degree[label] >= 2:
            tag |= ErrorTag.MERGE
        if tag:
            tags[region.locations] = tag
    return tags


def ted(x: LabelVolume, y: LabelVolume, options: TedOptions | None = None) -> TedReport:
    """Tolerant edit distance of proposal y against ground truth x.

    Finds the relabeling of y within the boundary-shift tolerance that has
    the smallest ``alpha * splits + beta * merges`` against x. Locations where
    x carries its background label are not evaluated.

    Raises:
        DimensionMismatchError: If the grids or resolutions differ.
        EmptyDomainError: If every location is masked.
    """
    options = options or TedOptions()
    check_same_dims(x, y)
    if not all(math.isclose(a, b, rel_tol=1e-9) for a, b in zip(x.resolution, y.resolution)):
        raise DimensionMismatchError(
            f"volume resolutions differ: {x.resolution} vs {y.resolution}"
        )

    mask = evaluation_mask(x)
    evaluated = int(mask.sum())
    if evaluated == 0:
        raise EmptyDomainError("every location is masked as ground truth background")

    sets = candidate_sets(y, options.tolerance, mask)
    regions = build_regions(x, y, sets)
    model = build_model(regions, options.alpha, options.beta)
    solution = solve_exact(model, options.limits)

    labels = np.array(y.flat)
    for region, label in zip(regions, solution.assignment):
        labels[region.locations] = label
    relabeled = y.with_labels(labels)

    gt_partners: dict[int, list[int]] = {}
    prop_partners: dict[int, list[int]] = {}
    for k, l in solution.matches:
        gt_partners.setdefault(k, []).append(l)
        prop_partners.setdefault(l, []).append(k)
    split_pairs = tuple(
        (k, tuple(sorted(ls))) for k, ls in sorted(gt_partners.items()) if len(ls) > 1
    )
    merge_pairs = tuple(
        (l, tuple(sorted(ks))) for l, ks in sorted(prop_partners.items()) if len(ks) > 1
    )

    report = TedReport(
        ted_value=solution.objective,
        splits=solution.splits,
        merges=solution.merges,
        split_pairs=split_pairs,
        merge_pairs=merge_pairs,
        relabeled=relabeled,
        error_locations=localize_errors(solution, regions, y.size).reshape(y.data.shape),
        baseline=baseline_scores(x, y),
        relabeled_baseline=baseline_scores(x, relabeled),
        solver=SolverStats(
            optimal=solution.optimal,
            gap=solution.gap,
            nodes=solution.nodes,
            seconds=solution.seconds,
        ),
        regions=len(regions),
        masked_locations=y.size - evaluated,
        background_masked=x.background is not None,
    )
    logger.info(
        "TED at threshold %g nm: value=%g splits=%d merges=%d (raw %d/%d)",
        options.tolerance.threshold,
        report.ted_value,
        report.splits,
        report.merges,
        report.baseline.raw_splits,
        report.baseline.raw_merges,
    )
    return report


def _split_merge(table: OverlapTable) -> tuple[int, int]:
    splits = sum(len(ls) - 1 for ls in table.gt_partners().values())
    merges = sum(len(ks) - 1 for ks in table.prop_partners().values())
    return splits, merges


def _rand_index(table: OverlapTable) -> float:
    n = table.total
    if n < 2:
        raise EmptyDomainError(f"Rand index needs at least 2 evaluated locations, got {n}")
    rows: Counter[int] = Counter()
    cols: Counter[int] = Counter()
    for (k, l), c in table.counts.items():
        rows[k] += c
        cols[l] += c
    pairs = n * (n - 1) // 2
    joint = sum(c * (c - 1) // 2 for c in table.counts.values())
    same_x = sum(c * (c - 1) // 2 for c in rows.values())
    same_y = sum(c * (c - 1) // 2 for c in cols.values())
    return (pairs + 2 * joint - same_x - same_y) / pairs


def _voi(table: OverlapTable) -> Voi:
    n = table.total
    if n == 0:
        raise EmptyDomainError("variation of information needs an evaluated location")
    joint, row, col = table.marginals()
    p = joint / n
    split = max(0.0, float(-np.sum(p * np.log2(joint / col))))
    merge = max(0.0, float(-np.sum(p * np.log2(joint / row))))
    return Voi(split, merge, split + merge)
