"""Shape and location features of a tumour region (13 per ROI)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .exceptions import EmptyROIError
from .volume import ROIMask, _Volume, boundary_mask, roi_mask, voxel_centers

MORPH_FEATURES = (
    "shape_center_X",
    "shape_center_Y",
    "shape_center_Z",
    "shape_Volume",
    "shape_SurfaceArea",
    "shape_SurfaceVolumeRatio",
    "shape_Sphericity",
    "shape_Maximum3DDiameter",
    "shape_MajorAxisLength",
    "shape_MinorAxisLength",
    "shape_LeastAxisLength",
    "shape_Elongation",
    "shape_Flatness",
)


@dataclass(frozen=True)
class MorphFeatures:
    centroid_offset: tuple
    volume: float
    surface_area: float
    sav_ratio: float
    sphericity: float
    max_diameter_3d: float
    major_axis: float
    minor_axis: float
    least_axis: float
    elongation: float
    flatness: float
    degenerate: bool = False

    def values(self) -> tuple:
        return (
            *self.centroid_offset,
            self.volume,
            self.surface_area,
            self.sav_ratio,
            self.sphericity,
            self.max_diameter_3d,
            self.major_axis,
            self.minor_axis,
            self.least_axis,
            self.elongation,
            self.flatness,
        )

    def as_dict(self, roi: str) -> dict:
        return {f"{roi}_{name}": float(v) for name, v in zip(MORPH_FEATURES, self.values())}


def brain_centroid(reference, spacing=None, origin=None) -> np.ndarray:
    """Centroid of a brain mask, or the geometric centre of a volume's extent.

    ``reference`` is either a mask (ROIMask / boolean array with at least one
    voxel) or any volume whose extent should be used.
    """
    if isinstance(reference, ROIMask) or (isinstance(reference, np.ndarray) and reference.dtype == bool):
        data = reference.data if isinstance(reference, _Volume) else reference
        if isinstance(reference, _Volume):
            spacing, origin = reference.spacing, reference.origin
        if not data.any():
            raise EmptyROIError("brain reference mask is empty")
        return voxel_centers(data, spacing, origin).mean(axis=0)
    dims = np.asarray(reference.dims, dtype=float)
    return np.asarray(reference.origin) + (dims - 1.0) / 2.0 * np.asarray(reference.spacing)


def surface_area(mask: np.ndarray, spacing) -> float:
    """Total area of voxel faces separating the mask from the outside."""
    sx, sy, sz = spacing
    face_area = (sy * sz, sx * sz, sx * sy)
    padded = np.pad(np.asarray(mask, dtype=bool), 1, constant_values=False)
    total = 0.0
    for axis in range(3):
        exposed = np.count_nonzero(np.diff(padded, axis=axis))
        total += exposed * face_area[axis]
    return float(total)


def max_pairwise_distance(points: np.ndarray) -> float:
    """Largest Euclidean distance between any two points (exact)."""
    if len(points) < 2:
        return 0.0
    candidates = points
    if len(points) > 64:
        try:
            candidates = points[ConvexHull(points).vertices]
        except (QhullError, ValueError):
            candidates = points
    best = 0.0
    chunk = max(1, 2_000_000 // len(candidates))
    for start in range(0, len(candidates), chunk):
        block = candidates[start : start + chunk]
        d2 = ((block[:, None, :] - candidates[None, :, :]) ** 2).sum(axis=-1)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


def morphology(vol, roi: str = "WT", brain_ref=None) -> MorphFeatures:
    """Compute the 13 morphological features of ``roi`` in ``vol``.

    ``brain_ref`` is a brain mask; when omitted the centroid offset is taken
    relative to the geometric centre of the volume.  A one-voxel ROI returns
    zero axis lengths / elongation / flatness and ``degenerate=True``.
    """
    mask = roi_mask(vol, roi).data if isinstance(roi, str) else np.asarray(roi.data, dtype=bool)
    count = int(np.count_nonzero(mask))
    if count == 0:
        raise EmptyROIError(f"ROI {roi!r} is empty")
    spacing = vol.spacing

    centers = voxel_centers(mask, spacing, vol.origin)
    centroid = centers.mean(axis=0)
    reference = brain_centroid(brain_ref if brain_ref is not None else vol, spacing, vol.origin)
    offset = tuple(float(v) for v in centroid - reference)

    volume = count * vol.voxel_volume
    area = surface_area(mask, spacing)
    sphericity = np.pi ** (1.0 / 3.0) * (6.0 * volume) ** (2.0 / 3.0) / area

    edge = voxel_centers(boundary_mask(mask), spacing, vol.origin)
    diameter = max_pairwise_distance(edge)

    centred = centers - centroid
    cov = centred.T @ centred / count
    eig = np.clip(np.sort(np.linalg.eigvalsh(cov))[::-1], 0.0, None)
    # flat or collinear ROIs: zero eigenvalues come back as roundoff noise
    eig[eig <= 1e-12 * eig[0]] = 0.0
    degenerate = count == 1 or eig[0] <= 0
    if degenerate:
        axes = (0.0, 0.0, 0.0)
        elongation = flatness = 0.0
    else:
        axes = tuple(float(4.0 * np.sqrt(e)) for e in eig)
        elongation = float(np.sqrt(eig[1] / eig[0]))
        flatness = float(np.sqrt(eig[2] / eig[0]))

    return MorphFeatures(
        centroid_offset=offset,
        volume=float(volume),
        surface_area=area,
        sav_ratio=area / volume,
        sphericity=float(sphericity),
        max_diameter_3d=diameter,
        major_axis=axes[0],
        minor_axis=axes[1],
        least_axis=axes[2],
        elongation=elongation,
        flatness=flatness,
        degenerate=bool(degenerate),
    )
