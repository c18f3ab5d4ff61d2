"""Voxel volumes, region masks, connected components and z-score normalisation.

Arrays are indexed ``data[x, y, z]``; the physical position of a voxel centre is
``origin + index * spacing`` (orientation beyond the origin is ignored).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .exceptions import DegenerateInputError, ShapeError, ValidationError

VALID_LABELS = (0, 1, 2, 4)

#: label sets defining each region of interest
ROI_LABELS = {
    "WT": (1, 2, 4),
    "TC": (1, 4),
    "ET": (4,),
    "ED": (2,),
}
ROI_KINDS = tuple(ROI_LABELS) + ("brain",)


def _as_triple(values, name, positive=False):
    out = tuple(float(v) for v in values)
    if len(out) != 3:
        raise ValidationError(f"{name} must have 3 components, got {len(out)}")
    if not all(np.isfinite(out)):
        raise ValidationError(f"{name} must be finite, got {out}")
    if positive and min(out) <= 0:
        raise ValidationError(f"{name} components must be > 0, got {out}")
    return out


def _frozen(arr):
    arr = np.asarray(arr)
    if arr.flags.writeable:
        arr = arr.copy()
        arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class _Volume:
    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ShapeError(f"volume data must be 3-D, got shape {data.shape}")
        if min(data.shape) < 1:
            raise ShapeError(f"volume dims must be >= 1, got {data.shape}")
        object.__setattr__(self, "spacing", _as_triple(self.spacing, "spacing", positive=True))
        object.__setattr__(self, "origin", _as_triple(self.origin, "origin"))
        object.__setattr__(self, "data", _frozen(data))

    @property
    def dims(self):
        return tuple(int(d) for d in self.data.shape)

    @property
    def voxel_volume(self):
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def same_geometry(self, other) -> bool:
        return (
            self.dims == other.dims
            and np.allclose(self.spacing, other.spacing, rtol=0, atol=1e-6)
            and np.allclose(self.origin, other.origin, rtol=0, atol=1e-6)
        )

    def physical_coords(self, index) -> np.ndarray:
        """Map an (N, 3) array of voxel indices to physical mm coordinates."""
        index = np.asarray(index, dtype=float)
        return np.asarray(self.origin) + index * np.asarray(self.spacing)

    def __eq__(self, other):
        if type(self) is not type(other):
            return NotImplemented
        return (
            self.spacing == other.spacing
            and self.origin == other.origin
            and self.data.dtype == other.data.dtype
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class LabelVolume(_Volume):
    """Tumour structure map with labels 0 (background), 1 (NCR/NET), 2 (ED), 4 (ET)."""

    def __post_init__(self):
        data = np.asarray(self.data)
        if not np.issubdtype(data.dtype, np.integer):
            if not np.all(np.isfinite(data)) or not np.all(data == np.round(data)):
                raise ValidationError("label volume must hold integer values")
            data = data.astype(np.uint8)
        bad = np.setdiff1d(np.unique(data), VALID_LABELS)
        if bad.size:
            raise ValidationError(f"labels outside {{0,1,2,4}}: {bad.tolist()}")
        object.__setattr__(self, "data", data.astype(np.uint8, copy=False))
        super().__post_init__()


@dataclass(frozen=True, eq=False)
class IntensityVolume(_Volume):
    """Real-valued image such as a T1Gd scan."""

    def __post_init__(self):
        data = np.asarray(self.data)
        if not np.issubdtype(data.dtype, np.number) or np.issubdtype(data.dtype, np.complexfloating):
            raise ValidationError(f"unsupported intensity dtype {data.dtype}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("intensity volume contains non-finite values")
        super().__post_init__()


@dataclass(frozen=True, eq=False)
class ROIMask(_Volume):
    kind: str = "WT"

    def __post_init__(self):
        if self.kind not in ROI_KINDS:
            raise ValidationError(f"unknown roi kind {self.kind!r}; expected one of {ROI_KINDS}")
        object.__setattr__(self, "data", np.asarray(self.data, dtype=bool))
        super().__post_init__()

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.data))


@dataclass(frozen=True)
class ComponentSet:
    """Connected components of a mask; ``labels`` is 0 off-mask, ids are 1..count."""

    count: int
    labels: np.ndarray = field(repr=False)
    sizes: np.ndarray

    def size_of(self, component_id: int) -> int:
        return int(self.sizes[component_id - 1])


def roi_mask(vol: LabelVolume, kind: str) -> ROIMask:
    """Boolean mask of voxels whose label belongs to ``kind``'s label set."""
    if kind not in ROI_LABELS:
        raise ValidationError(f"roi kind must be one of {tuple(ROI_LABELS)}, got {kind!r}")
    data = np.isin(vol.data, ROI_LABELS[kind])
    return ROIMask(data, vol.spacing, vol.origin, kind=kind)


def structure(connectivity: int) -> np.ndarray:
    if connectivity == 6:
        return ndimage.generate_binary_structure(3, 1)
    if connectivity == 26:
        return ndimage.generate_binary_structure(3, 3)
    raise ValidationError(f"connectivity must be 6 or 26, got {connectivity}")


def connected_components(mask, connectivity: int = 26) -> ComponentSet:
    """Label maximal connected components of ``mask`` (an ROIMask or boolean array)."""
    data = mask.data if isinstance(mask, _Volume) else np.asarray(mask, dtype=bool)
    labels, count = ndimage.label(data, structure=structure(connectivity))
    sizes = np.bincount(labels.ravel(), minlength=count + 1)[1:]
    return ComponentSet(count=int(count), labels=labels, sizes=sizes.astype(np.int64))


def boundary_mask(mask: np.ndarray) -> np.ndarray:
    """Voxels of ``mask`` with at least one exposed face (6-neighbour outside the mask or the grid)."""
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    interior = padded.copy()
    for axis in range(3):
        interior &= np.roll(padded, 1, axis=axis) & np.roll(padded, -1, axis=axis)
    return mask & ~interior[1:-1, 1:-1, 1:-1]


def zscore_normalize(vol: IntensityVolume, mask=None) -> IntensityVolume:
    """Standardise ``vol`` to mean 0 / population std 1 inside ``mask``; zero outside it.

    With ``mask=None`` the whole volume is used.
    """
    data = np.asarray(vol.data, dtype=np.float64)
    if mask is None:
        sel = np.ones(data.shape, dtype=bool)
    else:
        sel = mask.data if isinstance(mask, _Volume) else np.asarray(mask, dtype=bool)
        if sel.shape != data.shape:
            raise ShapeError(f"mask shape {sel.shape} does not match volume {data.shape}")
    values = data[sel]
    if values.size < 2:
        raise DegenerateInputError("z-score needs at least 2 voxels in the mask")
    mean = values.mean()
    std = values.std()
    if not std > 0 or std < 1e-12 * max(1.0, abs(mean)):
        raise DegenerateInputError("z-score undefined: zero variance in masked region")
    out = np.zeros_like(data)
    out[sel] = (values - mean) / std
    return IntensityVolume(out, vol.spacing, vol.origin)


def voxel_centers(mask, spacing: Sequence[float], origin: Optional[Sequence[float]] = None) -> np.ndarray:
    """Physical coordinates (N, 3) of the true voxels of ``mask``, in C index order."""
    idx = np.argwhere(np.asarray(mask, dtype=bool)).astype(float)
    if origin is None:
        origin = (0.0, 0.0, 0.0)
    return np.asarray(origin, dtype=float) + idx * np.asarray(spacing, dtype=float)
