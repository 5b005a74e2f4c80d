# app/ted/experiments.py
"""Threshold sweeps and the shift / split / merge comparison against RI and VOI."""

from __future__ import annotations

import asyncio
import csv
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

from .metrics import TedOptions, TedReport, ted
from .synth import ModificationSpec, apply_modification
from .volume import LabelVolume

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SweepRow:
    """TED at one threshold, with VOI and RI of the closest tolerable relabeling."""

    threshold_nm: float
    splits: int
    merges: int
    ted_value: float
    voi_split: float
    voi_merge: float
    voi_total: float
    rand_index: float | None
    optimal: bool


@dataclass(frozen=True)
class ModificationRow:
    kind: str
    magnitude: float
    ted_value: float
    splits: int
    merges: int
    raw_splits: int
    raw_merges: int
    rand_index: float | None
    voi_split: float
    voi_merge: float
    voi_total: float


async def sweep_thresholds(
    x: LabelVolume,
    y: LabelVolume,
    thresholds: Sequence[float],
    options: TedOptions | None = None,
) -> list[SweepRow]:
    """Runs one TED per threshold concurrently; rows come back in ascending threshold order."""
    if not thresholds:
        raise ValueError("threshold sweep needs at least one threshold")
    if any(not math.isfinite(t) or t < 0 for t in thresholds):
        raise ValueError(f"thresholds must be finite and non-negative, got {list(thresholds)}")
    options = options or TedOptions()

    async def run(threshold: float) -> SweepRow:
        report = await asyncio.to_thread(ted, x, y, options.with_threshold(threshold))
        return _sweep_row(threshold, report)

    rows = await asyncio.gather(*(run(t) for t in sorted(thresholds)))
    logger.info("Swept %d thresholds", len(rows))
    return list(rows)


def compare_modifications(
    gt: LabelVolume,
    *,
    shift_nm: float,
    count: int,
    threshold_nm: float,
    seed: int = 0,
    options: TedOptions | None = None,
) -> list[ModificationRow]:
    """Scores a boundary shift, random splits and random merges of ``gt`` against it."""
    options = (options or TedOptions()).with_threshold(threshold_nm)
    specs = [
        ModificationSpec(kind="shift", magnitude=shift_nm, seed=seed),
        ModificationSpec(kind="split", magnitude=count, seed=seed),
        ModificationSpec(kind="merge", magnitude=count, seed=seed),
    ]
    rows = []
    for spec in specs:
        report = ted(gt, apply_modification(gt, spec), options)
        baseline = report.baseline
        rows.append(
            ModificationRow(
                kind=spec.kind,
                magnitude=spec.magnitude,
                ted_value=report.ted_value,
                splits=report.splits,
                merges=report.merges,
                raw_splits=baseline.raw_splits,
                raw_merges=baseline.raw_merges,
                rand_index=baseline.rand_index,
                voi_split=baseline.voi.split,
                voi_merge=baseline.voi.merge,
                voi_total=baseline.voi.total,
            )
        )
    return rows


def write_sweep_csv(rows: Iterable[SweepRow], path: str | Path) -> None:
    _write_csv(SweepRow, rows, path)


def write_modifications_csv(rows: Iterable[ModificationRow], path: str | Path) -> None:
    _write_csv(ModificationRow, rows, path)


def _sweep_row(threshold: float, report: TedReport) -> SweepRow:
    closest = report.relabeled_baseline
    return SweepRow(
        threshold_nm=threshold,
        splits=report.splits,
        merges=report.merges,
        ted_value=report.ted_value,
        voi_split=closest.voi.split,
        voi_merge=closest.voi.merge,
        voi_total=closest.voi.total,
        rand_index=closest.rand_index,
        optimal=report.solver.optimal,
    )


def _write_csv(row_type: type, rows: Iterable, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=[fl.name for fl in fields(row_type)])
        writer.writeheader()
        for row in rows:
            writer.writerow(asdict(row))
