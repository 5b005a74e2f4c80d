# app/ted/synth.py
"""Seeded generators for synthetic ground truth and its modifications."""

from __future__ import annotations

import logging
import math
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import SynthesisError
from .tolerance import within_threshold
from .volume import MAX_LABEL, LabelVolume

logger = logging.getLogger(__name__)


class ModificationSpec(BaseModel):
    """One synthetic modification: a boundary shift (nm), or a number of splits or merges."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["shift", "split", "merge"]
    magnitude: float = Field(gt=0)
    seed: int = Field(0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _counts_are_integral(self) -> ModificationSpec:
        if self.kind != "shift" and not float(self.magnitude).is_integer():
            raise ValueError(f"{self.kind} magnitude must be a whole number of operations")
        return self


def apply_modification(vol: LabelVolume, spec: ModificationSpec) -> LabelVolume:
    if spec.kind == "shift":
        return apply_shift(vol, spec.magnitude, spec.seed)
    if spec.kind == "split":
        return apply_random_splits(vol, int(spec.magnitude), spec.seed)
    return apply_random_merges(vol, int(spec.magnitude), spec.seed)


def make_boundary_shift_1d(n: int, res: float, shift: float) -> tuple[LabelVolume, LabelVolume]:
    """Two-region 1D labeling and a copy with the boundary moved right by ``shift`` nm.

    x holds label 1 on the first half and 2 on the second.
    """
    if n < 4:
        raise SynthesisError(f"need at least 4 voxels, got {n}")
    if not 0 <= shift < n * res / 2:
        raise SynthesisError(f"shift {shift} nm outside [0, {n * res / 2})")
    half = n // 2
    moved = min(int(math.floor(shift / res + 0.5)), n - half - 1)

    x = np.full(n, 2, dtype=np.uint32)
    x[:half] = 1
    y = x.copy()
    y[: half + moved] = 1
    resolution = (res, res, res)
    return LabelVolume(x, resolution), LabelVolume(y, resolution)


def make_ground_truth(
    dims: tuple[int, int, int],
    object_count: int,
    seed: int,
    resolution: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> LabelVolume:
    """Voronoi partition of the grid around random seed voxels, labeled 1..object_count."""
    nx, ny, nz = dims
    n = nx * ny * nz
    if not 1 <= object_count <= n:
        raise SynthesisError(f"object count {object_count} outside [1, {n}]")
    rng = np.random.default_rng(seed)
    rx, ry, rz = resolution
    points = np.indices((nz, ny, nx)).reshape(3, -1).T * np.array([rz, ry, rx])
    seeds = rng.choice(n, size=object_count, replace=False)
    _, nearest = cKDTree(points[seeds]).query(points)
    return LabelVolume.from_labels(nearest + 1, dims, resolution)


def random_labeling(
    dims: tuple[int, int, int],
    label_count: int,
    seed: int,
    resolution: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> LabelVolume:
    """Uniformly random labels 1..label_count, each occurring at least once."""
    n = math.prod(dims)
    if label_count < 1:
        raise SynthesisError("label count must be positive")
    if label_count > n:
        raise SynthesisError(f"{label_count} labels do not fit into {n} locations")
    rng = np.random.default_rng(seed)
    labels = rng.integers(1, label_count + 1, size=n)
    labels[rng.choice(n, size=label_count, replace=False)] = np.arange(1, label_count + 1)
    return LabelVolume.from_labels(labels, dims, resolution)


def apply_shift(vol: LabelVolume, distance: float, seed: int) -> LabelVolume:
    """Moves object boundaries by at most ``distance`` nm.

    Objects get random priorities. A voxel takes the highest-priority label
    whose original voxels lie within ``distance`` if that label outranks its
    own, and only if its own object keeps an untouched interior voxel within
    ``distance``. Interiors (voxels farther than ``distance`` from every
    other label) never change, so each object survives and every changed
    voxel stays within ``distance`` of both its old and its new label.
    The background label neither grows nor shrinks.
    """
    if distance <= 0:
        raise SynthesisError(f"shift distance must be positive, got {distance}")
    rng = np.random.default_rng(seed)
    data = vol.data
    labels = [int(l) for l in np.unique(data) if l != vol.background]
    priority = dict(zip(labels, rng.permutation(len(labels)).tolist()))

    flippable = np.zeros(data.shape, dtype=bool)
    rank = np.full(data.shape, -1, dtype=np.int64)
    for label in labels:
        own = data == label
        rank[own] = priority[label]
        depth = ndimage.distance_transform_edt(own, sampling=vol.sampling)
        interior = own & ~within_threshold(depth, distance)
        if not interior.any():
            continue
        reach = ndimage.distance_transform_edt(~interior, sampling=vol.sampling)
        flippable |= own & ~interior & within_threshold(reach, distance)

    shifted = np.array(data)
    for label in sorted(labels, key=priority.get):
        near = within_threshold(
            ndimage.distance_transform_edt(data != label, sampling=vol.sampling), distance
        )
        take = flippable & near & (rank < priority[label])
        shifted[take] = label
        rank[take] = priority[label]

    logger.info(
        "Shifted boundaries by up to %g nm: %d voxels changed", distance, int((shifted != data).sum())
    )
    return vol.with_labels(shifted)


def apply_random_splits(vol: LabelVolume, count: int, seed: int) -> LabelVolume:
    """Cuts ``count`` times a random object with an axis-aligned plane.

    The plane passes through a random voxel of the object and the side
    containing it gets a fresh label. Every cut leaves both sides non-empty.
    Objects of a single voxel cannot be cut; when no object can, the cut is
    skipped with a warning.
    """
    if count < 1:
        raise SynthesisError(f"split count must be positive, got {count}")
    rng = np.random.default_rng(seed)
    data = np.array(vol.data)
    fresh = int(data.max()) + 1

    for cut in range(count):
        labels, sizes = np.unique(data, return_counts=True)
        cuttable = [
            int(l) for l, s in zip(labels, sizes) if s >= 2 and l != vol.background
        ]
        if not cuttable:
            logger.warning("Cut %d skipped: no object has more than one voxel", cut + 1)
            continue
        if fresh == vol.background:
            fresh += 1
        if fresh > MAX_LABEL:
            raise SynthesisError("ran out of 32-bit labels")

        label = cuttable[rng.integers(len(cuttable))]
        coords = np.argwhere(data == label)
        axes = [a for a in rng.permutation(3).tolist() if np.ptp(coords[:, a]) > 0]
        axis = axes[0]
        values = coords[:, axis]
        eligible = coords[values > values.min()]
        pivot = eligible[rng.integers(len(eligible)), axis]
        side = coords[values >= pivot]
        data[tuple(side.T)] = fresh
        logger.debug("Cut object %d on axis %d at %d into new label %d", label, axis, pivot, fresh)
        fresh += 1

    return vol.with_labels(data)


def apply_random_merges(vol: LabelVolume, count: int, seed: int) -> LabelVolume:
    """Unifies ``count`` random pairs of face-adjacent labels, keeping the smaller label."""
    if count < 1:
        raise SynthesisError(f"merge count must be positive, got {count}")
    data = np.array(vol.data)
    present = {int(l) for l in np.unique(data)} - {vol.background}
    if len(present) < count + 1:
        raise SynthesisError(f"{count} merges need at least {count + 1} labels, got {len(present)}")

    rng = np.random.default_rng(seed)
    for _ in range(count):
        pairs = _adjacent_pairs(data, vol.background)
        if not pairs:
            raise SynthesisError("no adjacent label pairs left to merge")
        keep, drop = pairs[rng.integers(len(pairs))]
        data[data == drop] = keep
        logger.debug("Merged label %d into %d", drop, keep)
    return vol.with_labels(data)


def _adjacent_pairs(data: np.ndarray, background: int | None) -> list[tuple[int, int]]:
    """Sorted (smaller, larger) label pairs sharing a voxel face."""
    found: set[tuple[int, int]] = set()
    for axis in range(data.ndim):
        n = data.shape[axis]
        if n < 2:
            continue
        lo = np.take(data, np.arange(n - 1), axis=axis).reshape(-1)
        hi = np.take(data, np.arange(1, n), axis=axis).reshape(-1)
        differ = lo != hi
        a = np.minimum(lo[differ], hi[differ])
        b = np.maximum(lo[differ], hi[differ])
        found.update(zip(a.tolist(), b.tolist()))
    if background is not None:
        found = {p for p in found if background not in p}
    return sorted(found)
