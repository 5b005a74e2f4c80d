# app/ted/volume.py
"""Label volumes: the data model, voxel geometry, file I/O and overlap statistics.

A volume is a 3D grid of non-negative 32-bit labels with a physical voxel
resolution in nm per axis. Labels are stored as an array of shape
``(nz, ny, nx)`` so that C-order flattening is x-fastest, then y, then z.
Every linear location index in the toolkit refers to that ordering.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DimensionMismatchError, VolumeFormatError

logger = logging.getLogger(__name__)

MAX_LABEL = 2**32 - 1

SEGV1 = "segv1"
TEXT = "text"
FORMATS = (SEGV1, TEXT)

# Header plus its terminating blank line is padded to this many bytes.
_HEADER_ALIGN = 16


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """An immutable labeled voxel grid.

    Args:
        data: Integer labels; 1D arrays are read as ``(nx,)``, 2D as
            ``(ny, nx)`` and 3D as ``(nz, ny, nx)``.
        resolution: Voxel size in nm along (x, y, z).
        background: Optional label meaning "unknown / not evaluated".
    """

    data: np.ndarray
    resolution: tuple[float, float, float] = (1.0, 1.0, 1.0)
    background: int | None = None

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 1:
            arr = arr.reshape(1, 1, -1)
        elif arr.ndim == 2:
            arr = arr.reshape(1, *arr.shape)
        elif arr.ndim != 3:
            raise VolumeFormatError(f"labels must be 1D, 2D or 3D, got {arr.ndim}D")
        if arr.size == 0:
            raise VolumeFormatError("volume has no voxels")
        if arr.dtype.kind not in "iu":
            raise VolumeFormatError(f"labels must be integers, got dtype {arr.dtype}")
        if arr.min() < 0 or arr.max() > MAX_LABEL:
            raise VolumeFormatError(f"labels must lie in [0, {MAX_LABEL}]")

        labels = np.array(arr, dtype=np.uint32, copy=True)
        labels.flags.writeable = False

        resolution = tuple(float(r) for r in self.resolution)
        if len(resolution) != 3:
            raise VolumeFormatError(f"resolution needs 3 components, got {len(resolution)}")
        if not all(math.isfinite(r) and r > 0 for r in resolution):
            raise VolumeFormatError(f"resolution must be positive, got {resolution}")

        background = self.background
        if background is not None:
            background = int(background)
            if not 0 <= background <= MAX_LABEL:
                raise VolumeFormatError(f"background label {background} out of range")

        object.__setattr__(self, "data", labels)
        object.__setattr__(self, "resolution", resolution)
        object.__setattr__(self, "background", background)

    @classmethod
    def from_labels(
        cls,
        labels: Sequence[int] | np.ndarray,
        dims: tuple[int, int, int],
        resolution: tuple[float, float, float] = (1.0, 1.0, 1.0),
        background: int | None = None,
    ) -> LabelVolume:
        """Builds a volume from a flat x-fastest label sequence."""
        nx, ny, nz = (int(d) for d in dims)
        if min(nx, ny, nz) < 1:
            raise VolumeFormatError(f"dims must be positive, got {dims}")
        arr = np.asarray(labels)
        if arr.size != nx * ny * nz:
            raise VolumeFormatError(
                f"payload has {arr.size} labels, dims {nx}x{ny}x{nz} need {nx * ny * nz}"
            )
        return cls(arr.reshape(nz, ny, nx), resolution, background)

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.data.shape
        return nx, ny, nz

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def flat(self) -> np.ndarray:
        """Labels as a read-only 1D array in location-index order."""
        return self.data.reshape(-1)

    @property
    def sampling(self) -> tuple[float, float, float]:
        """Resolution in array-axis order (z, y, x), as scipy expects it."""
        rx, ry, rz = self.resolution
        return rz, ry, rx

    def coords(self, index: int) -> tuple[int, int, int]:
        """Returns the (x, y, z) voxel coordinate of a linear location index."""
        if not 0 <= index < self.size:
            raise IndexError(f"location {index} outside volume of {self.size} voxels")
        z, y, x = np.unravel_index(index, self.data.shape)
        return int(x), int(y), int(z)

    def index_of(self, coord: tuple[int, int, int]) -> int:
        """Returns the linear location index of an (x, y, z) coordinate."""
        x, y, z = coord
        nx, ny, nz = self.dims
        if not (0 <= x < nx and 0 <= y < ny and 0 <= z < nz):
            raise IndexError(f"coordinate {coord} outside dims {self.dims}")
        return int((z * ny + y) * nx + x)

    def with_labels(self, labels: np.ndarray) -> LabelVolume:
        """Same geometry and background, new labels (flat or grid shaped)."""
        return LabelVolume(
            np.asarray(labels).reshape(self.data.shape), self.resolution, self.background
        )

    def with_resolution(self, resolution: tuple[float, float, float]) -> LabelVolume:
        return LabelVolume(self.data, resolution, self.background)

    def with_background(self, background: int | None) -> LabelVolume:
        return LabelVolume(self.data, self.resolution, background)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabelVolume):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.resolution == other.resolution
            and self.background == other.background
            and bool(np.array_equal(self.data, other.data))
        )

    __hash__ = None


@dataclass(frozen=True)
class OverlapTable:
    """Joint label counts of two volumes over the evaluated locations.

    ``counts[(k, l)]`` is the number of evaluated locations with ground truth
    label ``k`` and proposal label ``l``. Absent pairs have count 0.
    """

    counts: Mapping[tuple[int, int], int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def gt_partners(self) -> dict[int, set[int]]:
        """Maps each ground truth label to the proposal labels it overlaps."""
        partners: dict[int, set[int]] = {}
        for k, l in self.counts:
            partners.setdefault(k, set()).add(l)
        return partners

    def prop_partners(self) -> dict[int, set[int]]:
        """Maps each proposal label to the ground truth labels it overlaps."""
        partners: dict[int, set[int]] = {}
        for k, l in self.counts:
            partners.setdefault(l, set()).add(k)
        return partners

    def marginals(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns (joint counts, ground truth row sums, proposal column sums).

        Row and column sums are aligned with the joint counts, entry by entry.
        """
        pairs = sorted(self.counts)
        joint = np.array([self.counts[p] for p in pairs], dtype=np.float64)
        rows: dict[int, int] = {}
        cols: dict[int, int] = {}
        for (k, l), c in self.counts.items():
            rows[k] = rows.get(k, 0) + c
            cols[l] = cols.get(l, 0) + c
        row = np.array([rows[k] for k, _ in pairs], dtype=np.float64)
        col = np.array([cols[l] for _, l in pairs], dtype=np.float64)
        return joint, row, col


def check_same_dims(x: LabelVolume, y: LabelVolume) -> None:
    if x.dims != y.dims:
        raise DimensionMismatchError(f"volume dims differ: {x.dims} vs {y.dims}")


def evaluation_mask(x: LabelVolume) -> np.ndarray:
    """Boolean grid of evaluated locations: everything except x's background."""
    if x.background is None:
        return np.ones(x.data.shape, dtype=bool)
    return x.data != x.background


def label_set(vol: LabelVolume, mask: np.ndarray | None = None) -> set[int]:
    """Distinct labels at evaluated locations.

    Without an explicit mask the volume's own background is masked out.
    """
    if mask is None:
        mask = evaluation_mask(vol)
    values = np.unique(vol.flat[_flat_mask(vol, mask)])
    return {int(v) for v in values}


def overlap_table(
    x: LabelVolume, y: LabelVolume, mask: np.ndarray | None = None
) -> OverlapTable:
    """Counts joint labelings of x and y, optionally over a mask only."""
    check_same_dims(x, y)
    xs, ys = x.flat, y.flat
    if mask is not None:
        keep = _flat_mask(x, mask)
        xs, ys = xs[keep], ys[keep]
    keys = (xs.astype(np.uint64) << np.uint64(32)) | ys.astype(np.uint64)
    uniq, counts = np.unique(keys, return_counts=True)
    ks = (uniq >> np.uint64(32)).tolist()
    ls = (uniq & np.uint64(MAX_LABEL)).tolist()
    return OverlapTable(
        {(int(k), int(l)): int(c) for k, l, c in zip(ks, ls, counts.tolist())}
    )


def voxel_distance(
    vol: LabelVolume, i: int | tuple[int, int, int], j: int | tuple[int, int, int]
) -> float:
    """Anisotropic Euclidean distance in nm between two voxel centers."""
    ci = _as_coord(vol, i)
    cj = _as_coord(vol, j)
    return math.hypot(*(r * (a - b) for r, a, b in zip(vol.resolution, ci, cj)))


def guess_format(path: str | Path) -> str:
    return TEXT if Path(path).suffix.lower() == ".txt" else SEGV1


def load_volume(
    path: str | Path,
    format: str = SEGV1,
    *,
    resolution: tuple[float, float, float] = (1.0, 1.0, 1.0),
    background: int | None = None,
) -> LabelVolume:
    """Reads a volume.

    ``resolution`` and ``background`` only apply to the text-grid format,
    which carries neither; segv1 files are read exactly as written.
    """
    path = Path(path)
    if format == SEGV1:
        vol = _read_segv1(path.read_bytes())
    elif format == TEXT:
        vol = _read_text_grid(path.read_text(encoding="ascii"), resolution, background)
    else:
        raise VolumeFormatError(f"unsupported format {format!r}, expected one of {FORMATS}")
    logger.debug("Loaded %s volume %s: dims=%s", format, path, vol.dims)
    return vol


def save_volume(vol: LabelVolume, path: str | Path, format: str = SEGV1) -> None:
    path = Path(path)
    if format == SEGV1:
        path.write_bytes(_encode_segv1(vol))
    elif format == TEXT:
        path.write_text(_encode_text_grid(vol), encoding="ascii")
    else:
        raise VolumeFormatError(f"unsupported format {format!r}, expected one of {FORMATS}")
    logger.debug("Saved %s volume %s: dims=%s", format, path, vol.dims)


def _flat_mask(vol: LabelVolume, mask: np.ndarray) -> np.ndarray:
    keep = np.asarray(mask, dtype=bool).reshape(-1)
    if keep.size != vol.size:
        raise DimensionMismatchError(f"mask has {keep.size} entries, volume {vol.size}")
    return keep


def _as_coord(vol: LabelVolume, loc: int | tuple[int, int, int]) -> tuple[int, int, int]:
    if isinstance(loc, (int, np.integer)):
        return vol.coords(int(loc))
    coord = tuple(int(c) for c in loc)
    vol.index_of(coord)  # range check
    return coord


def _encode_segv1(vol: LabelVolume) -> bytes:
    nx, ny, nz = vol.dims
    lines = [
        SEGV1,
        f"dims {nx} {ny} {nz}",
        "res " + " ".join(repr(r) for r in vol.resolution),
        "dtype u32",
    ]
    if vol.background is not None:
        lines.append(f"background {vol.background}")
    header = "\n".join(lines)
    header += " " * (-(len(header) + 2) % _HEADER_ALIGN) + "\n\n"
    return header.encode("ascii") + vol.flat.astype("<u4").tobytes()


def _read_segv1(raw: bytes) -> LabelVolume:
    end = raw.find(b"\n\n")
    if end < 0:
        raise VolumeFormatError("segv1 header is not terminated by a blank line")
    try:
        lines = raw[:end].decode("ascii").split("\n")
    except UnicodeDecodeError as e:
        raise VolumeFormatError("segv1 header is not ASCII") from e
    if lines[0].strip() != SEGV1:
        raise VolumeFormatError(f"not a segv1 file (magic {lines[0].strip()!r})")

    fields: dict[str, list[str]] = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        key, *values = line.split()
        fields[key] = values
    unknown = set(fields) - {"dims", "res", "dtype", "background"}
    if unknown:
        raise VolumeFormatError(f"unknown segv1 header fields: {sorted(unknown)}")
    if fields.get("dtype") != ["u32"]:
        raise VolumeFormatError(f"unsupported dtype {fields.get('dtype')}")

    try:
        dims = tuple(int(v) for v in fields["dims"])
        resolution = tuple(float(v) for v in fields["res"])
        background = int(fields["background"][0]) if "background" in fields else None
    except (KeyError, ValueError, IndexError) as e:
        raise VolumeFormatError(f"malformed segv1 header: {e}") from e
    if len(dims) != 3 or len(resolution) != 3:
        raise VolumeFormatError("segv1 dims and res need three values each")

    payload = raw[end + 2 :]
    expected = 4 * dims[0] * dims[1] * dims[2]
    if len(payload) != expected:
        raise VolumeFormatError(
            f"segv1 payload is {len(payload)} bytes, dims {dims} need {expected}"
        )
    labels = np.frombuffer(payload, dtype="<u4")
    return LabelVolume.from_labels(labels, dims, resolution, background)


def _read_text_grid(
    text: str, resolution: tuple[float, float, float], background: int | None
) -> LabelVolume:
    try:
        rows = [[int(v) for v in line.split()] for line in text.splitlines() if line.strip()]
    except ValueError as e:
        raise VolumeFormatError(f"text grid holds a non-integer value: {e}") from e
    if not rows:
        raise VolumeFormatError("text grid is empty")
    if len({len(r) for r in rows}) != 1:
        raise VolumeFormatError("text grid rows differ in length")
    return LabelVolume(np.array(rows, dtype=np.int64), resolution, background)


def _encode_text_grid(vol: LabelVolume) -> str:
    if vol.dims[2] != 1:
        raise VolumeFormatError("text grid format holds 1D and 2D volumes only")
    return "".join(" ".join(str(v) for v in row) + "\n" for row in vol.data[0].tolist())
