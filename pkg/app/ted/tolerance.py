# app/ted/tolerance.py
"""Local tolerance: per-location tolerable label sets and candidate regions.

A location may take any proposal label whose nearest occurrence lies within
the boundary-shift threshold. Locations sharing ground truth label, proposal
label and tolerable set collapse into one candidate region, the unit of
decision of the ILP.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage, sparse

from .errors import LabelNotFoundError
from .volume import LabelVolume, check_same_dims, label_set

logger = logging.getLogger(__name__)

# Relative slack so that a distance of exactly the threshold survives rounding.
_TIE_SLACK = 1e-9


class ToleranceConfig(BaseModel):
    """How far proposal boundaries may move before a change counts as an error."""

    model_config = ConfigDict(frozen=True)

    threshold: float = Field(
        0.0, ge=0, allow_inf_nan=False, description="Maximally allowed boundary shift in nm."
    )
    allow_background_relabel: bool = Field(
        False, description="Let the proposal's background label behave like any other label."
    )
    strategy: Literal["auto", "distance", "window"] = "auto"


@dataclass(frozen=True)
class CandidateSets:
    """Tolerable label sets A_i for every evaluated location.

    ``member`` is a sparse boolean matrix with one row per entry of
    ``locations`` and one column per entry of ``labels``; row ``c`` holds
    A_i of location ``locations[c]``.
    """

    labels: np.ndarray
    locations: np.ndarray
    member: sparse.csr_array

    def row(self, location: int) -> int:
        pos = int(np.searchsorted(self.locations, location))
        if pos == self.locations.size or self.locations[pos] != location:
            raise IndexError(f"location {location} is not evaluated")
        return pos

    def at(self, location: int) -> frozenset[int]:
        """A_i of one location."""
        r = self.row(location)
        cols = self.member.indices[self.member.indptr[r] : self.member.indptr[r + 1]]
        return frozenset(int(l) for l in self.labels[cols])

    def sizes(self) -> np.ndarray:
        return np.diff(self.member.indptr)

    def tolerates(self, chosen: np.ndarray) -> np.ndarray:
        """Whether ``chosen[c]`` lies in A_i of ``locations[c]``, per location."""
        chosen = np.asarray(chosen, dtype=np.int64).reshape(-1)
        cols = np.searchsorted(self.labels, chosen).clip(0, max(self.labels.size - 1, 0))
        known = self.labels[cols] == chosen if self.labels.size else np.zeros(chosen.size, bool)
        keys = np.arange(chosen.size, dtype=np.int64) * self.labels.size + cols
        return known & np.isin(keys, _entry_keys(self.member))

    def write_sizes_csv(self, path: str | Path) -> None:
        """Debug dump: one row per evaluated location with |A_i|."""
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["location", "candidates"])
            writer.writerows(zip(self.locations.tolist(), self.sizes().tolist()))


@dataclass(frozen=True, eq=False)
class CandidateRegion:
    """Locations sharing (ground truth label, proposal label, A_i)."""

    gt_label: int
    prop_label: int
    candidates: tuple[int, ...]
    locations: np.ndarray

    def __post_init__(self):
        locations = np.array(self.locations, dtype=np.int64).reshape(-1)
        locations.flags.writeable = False
        object.__setattr__(self, "gt_label", int(self.gt_label))
        object.__setattr__(self, "prop_label", int(self.prop_label))
        object.__setattr__(self, "candidates", tuple(sorted(int(l) for l in self.candidates)))
        object.__setattr__(self, "locations", locations)

    @property
    def size(self) -> int:
        return int(self.locations.size)


def within_threshold(distance, threshold: float):
    """``distance <= threshold``, tolerant to floating-point rounding."""
    return distance <= threshold * (1.0 + _TIE_SLACK) + 1e-12


def anisotropic_distance_field(
    y: LabelVolume, label: int, mask: np.ndarray | None = None
) -> np.ndarray:
    """Distance in nm from every voxel center to the nearest voxel of ``label``.

    Only voxels inside ``mask`` count as occurrences of the label. The result
    has the grid shape ``(nz, ny, nx)``.
    """
    source = y.data == label
    if mask is not None:
        source &= np.asarray(mask, dtype=bool).reshape(y.data.shape)
    if not source.any():
        raise LabelNotFoundError(f"label {label} does not occur in the volume")
    return ndimage.distance_transform_edt(~source, sampling=y.sampling)


def candidate_sets(
    y: LabelVolume, config: ToleranceConfig, mask: np.ndarray | None = None
) -> CandidateSets:
    """Computes A_i for every location inside ``mask`` (default: all)."""
    if mask is None:
        mask = np.ones(y.data.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool).reshape(y.data.shape)
    locations = np.flatnonzero(mask)
    labels = np.array(sorted(label_set(y, mask)), dtype=np.int64)

    strategy = config.strategy
    if strategy == "auto":
        strategy = "window" if _ball_estimate(y, config.threshold) < labels.size else "distance"

    if labels.size == 0:
        keys = np.zeros(0, dtype=np.int64)
    elif strategy == "window":
        keys = _window_keys(y, labels, locations, config.threshold)
    else:
        keys = _distance_keys(y, labels, locations, mask, config.threshold)
    rows, cols = np.divmod(keys, max(labels.size, 1))

    if (
        not config.allow_background_relabel
        and y.background is not None
        and y.background in labels
    ):
        b = int(np.searchsorted(labels, y.background))
        is_background = y.flat[locations] == y.background
        keep = is_background[rows] == (cols == b)
        rows, cols = rows[keep], cols[keep]

    member = sparse.csr_array(
        (np.ones(rows.size, dtype=bool), (rows, cols)), shape=(locations.size, labels.size)
    )
    member.sort_indices()

    logger.debug(
        "Candidate sets: %d labels, %d locations, strategy=%s, mean |A_i|=%.2f",
        labels.size,
        locations.size,
        strategy,
        rows.size / max(locations.size, 1),
    )
    return CandidateSets(labels, locations, member)


def build_regions(x: LabelVolume, y: LabelVolume, sets: CandidateSets) -> list[CandidateRegion]:
    """Groups evaluated locations by (x(i), y(i), A_i).

    Regions need not be connected. They come out sorted by ground truth
    label, proposal label, then candidate tuple, and each lists its locations
    in ascending order.
    """
    check_same_dims(x, y)
    locs = sets.locations
    if locs.size == 0:
        return []

    gt = x.flat[locs].astype(np.int64)
    prop = y.flat[locs].astype(np.int64)
    keys = np.column_stack([gt, prop, _padded_rows(sets.member)])
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)

    order = np.argsort(inverse, kind="stable")
    groups = np.split(locs[order], np.cumsum(np.bincount(inverse))[:-1])

    indptr, indices = sets.member.indptr, sets.member.indices
    regions = [
        CandidateRegion(
            gt_label=gt[col],
            prop_label=prop[col],
            candidates=tuple(sets.labels[indices[indptr[col] : indptr[col + 1]]].tolist()),
            locations=members,
        )
        for col, members in zip(first.tolist(), groups)
    ]
    logger.info("Built %d candidate regions from %d locations", len(regions), locs.size)
    return regions


def _entry_keys(member: sparse.csr_array) -> np.ndarray:
    """``row * n_cols + col`` of every stored entry, ascending."""
    rows = np.repeat(np.arange(member.shape[0], dtype=np.int64), np.diff(member.indptr))
    return rows * member.shape[1] + member.indices.astype(np.int64)


def _padded_rows(member: sparse.csr_array) -> np.ndarray:
    """Column indices of each row, left-aligned and padded with -1 to the widest row."""
    sizes = np.diff(member.indptr)
    width = int(sizes.max(initial=0))
    padded = np.full((member.shape[0], width), -1, dtype=np.int64)
    rows = np.repeat(np.arange(member.shape[0]), sizes)
    slots = np.arange(member.indices.size) - np.repeat(member.indptr[:-1], sizes)
    padded[rows, slots] = member.indices
    return padded


def _distance_keys(
    y: LabelVolume, labels: np.ndarray, locations: np.ndarray, mask: np.ndarray, threshold: float
) -> np.ndarray:
    """One distance transform per label; keys ``row * |labels| + col`` of tolerable pairs."""
    parts = []
    for col, label in enumerate(labels.tolist()):
        field = anisotropic_distance_field(y, label, mask).reshape(-1)[locations]
        rows = np.flatnonzero(within_threshold(field, threshold))
        parts.append(rows * labels.size + col)
    return np.sort(np.concatenate(parts))


def _ball_radii(y: LabelVolume, threshold: float) -> list[int]:
    """Per-axis window half-widths in voxels, (z, y, x) order, clipped to the grid."""
    radii = []
    for r, n in zip(y.sampling, y.data.shape):
        reach = threshold / r * (1.0 + _TIE_SLACK)
        radii.append(n - 1 if reach >= n - 1 else int(math.floor(reach)))
    return radii


def _ball_estimate(y: LabelVolume, threshold: float) -> int:
    return math.prod(2 * r + 1 for r in _ball_radii(y, threshold))


def _ball_offsets(y: LabelVolume, threshold: float) -> list[tuple[int, int, int]]:
    rz, ry, rx = _ball_radii(y, threshold)
    sz, sy, sx = y.sampling
    return [
        (dz, dy, dx)
        for dz in range(-rz, rz + 1)
        for dy in range(-ry, ry + 1)
        for dx in range(-rx, rx + 1)
        if within_threshold(math.hypot(dz * sz, dy * sy, dx * sx), threshold)
    ]


def _window_keys(
    y: LabelVolume, labels: np.ndarray, locations: np.ndarray, threshold: float
) -> np.ndarray:
    """Scans the threshold ball around every voxel; same pairs as the distance pass.

    Keys are merged offset by offset, so memory stays at the number of
    tolerable pairs rather than |labels| x |locations|.
    """
    shape = y.data.shape
    row_of = np.full(y.size, -1, dtype=np.int64)
    row_of[locations] = np.arange(locations.size)
    row_of = row_of.reshape(shape)
    label_index = np.full(y.size, -1, dtype=np.int64)
    label_index[locations] = np.searchsorted(labels, y.flat[locations])
    label_index = label_index.reshape(shape)

    keys = np.zeros(0, dtype=np.int64)
    for offset in _ball_offsets(y, threshold):
        dst = tuple(slice(max(0, -o), n - max(0, o)) for o, n in zip(offset, shape))
        src = tuple(slice(max(0, o), n - max(0, -o)) for o, n in zip(offset, shape))
        lab = label_index[src]
        row = row_of[dst]
        ok = (lab >= 0) & (row >= 0)
        keys = np.union1d(keys, row[ok] * labels.size + lab[ok])
    return keys
