"""Label-map ensembling, rule-based post-processing and segmentation metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .exceptions import ConfigurationError, ShapeError, ValidationError
from .volume import (
    IntensityVolume,
    LabelVolume,
    boundary_mask,
    connected_components,
    structure,
    voxel_centers,
    zscore_normalize,
)

#: tie-break order for the vote: earlier wins
VOTE_PRIORITY = (4, 1, 2, 0)
REGIONS = ("ET", "TC", "WT")
_REGION_LABELS = {"ET": (4,), "TC": (1, 4), "WT": (1, 2, 4)}


def _check_geometry(vols, what="members"):
    ref = vols[0]
    for k, v in enumerate(vols[1:], start=1):
        if not ref.same_geometry(v):
            raise ShapeError(
                f"{what} 0 and {k} differ in geometry: dims {ref.dims} vs {v.dims}, "
                f"spacing {ref.spacing} vs {v.spacing}"
            )


def majority_vote(members, weights=None) -> LabelVolume:
    """Per-voxel label with the largest (weighted) vote; ties go to 4, then 1, then 2, then 0."""
    members = list(members)
    if not members:
        raise ValidationError("majority vote needs at least one member")
    _check_geometry(members)
    if weights is None:
        weights = np.ones(len(members))
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(members),):
        raise ShapeError(f"{weights.size} weights for {len(members)} members")
    if not np.all(weights > 0) or not np.all(np.isfinite(weights)):
        raise ValidationError("weights must be finite and > 0")
    votes = np.zeros((len(VOTE_PRIORITY), *members[0].dims))
    for vol, w in zip(members, weights):
        for k, label in enumerate(VOTE_PRIORITY):
            votes[k] += w * (vol.data == label)
    winner = np.asarray(VOTE_PRIORITY, dtype=np.uint8)[np.argmax(votes, axis=0)]
    ref = members[0]
    return LabelVolume(winner, ref.spacing, ref.origin)


def _enclosed_edema(labels, connectivity):
    """Label-2 components whose whole outer neighbourhood is tumour core and that do not touch the grid edge."""
    comps = connected_components(labels == 2, connectivity)
    if comps.count == 0:
        return np.zeros(labels.shape, dtype=bool)
    core = np.isin(labels, (1, 4))
    st = structure(26)
    out = np.zeros(labels.shape, dtype=bool)
    slices = ndimage.find_objects(comps.labels)
    for cid, sl in enumerate(slices, start=1):
        # a component touching the grid border has outside neighbours we cannot see
        if any(s.start == 0 or s.stop == n for s, n in zip(sl, labels.shape)):
            continue
        grown = tuple(slice(s.start - 1, s.stop + 1) for s in sl)
        comp = comps.labels[grown] == cid
        shell = ndimage.binary_dilation(comp, structure=st) & ~comp
        if np.all(core[grown][shell]):
            out[grown] |= comp
    return out


def postprocess(
    vol: LabelVolume,
    intensity: IntensityVolume = None,
    min_wt: int = 500,
    min_et: int = 50,
    et_floor: int = 500,
    z_et: float = 0.0,
    intensity_filter: bool = None,
    normalize_intensity: bool = False,
    connectivity: int = 26,
) -> LabelVolume:
    """Clean a predicted structure map.

    1. Whole-tumour components smaller than ``min_wt`` voxels become background;
       enhancing components smaller than ``min_et`` become label 1.
    2. If fewer than ``et_floor`` enhancing voxels remain, all of them become
       label 1.  Oedema components enclosed by tumour core become label 1.
    3. Optional intensity filter: enhancing voxels whose T1Gd value (z-scored,
       or z-scored here over the whole volume with ``normalize_intensity``) is
       below ``z_et`` become label 1.

    ``intensity_filter=None`` enables step 3 exactly when ``intensity`` is given.
    """
    if intensity_filter is None:
        intensity_filter = intensity is not None
    if intensity_filter and intensity is None:
        raise ConfigurationError("the intensity filter needs a T1Gd intensity volume")
    if min(min_wt, min_et, et_floor) < 0:
        raise ConfigurationError("size thresholds must be >= 0")
    labels = np.array(vol.data, dtype=np.uint8)

    wt = connected_components(labels > 0, connectivity)
    small = np.flatnonzero(wt.sizes < min_wt) + 1
    if small.size:
        labels[np.isin(wt.labels, small)] = 0
    et = connected_components(labels == 4, connectivity)
    small = np.flatnonzero(et.sizes < min_et) + 1
    if small.size:
        labels[np.isin(et.labels, small)] = 1

    if np.count_nonzero(labels == 4) < et_floor:
        labels[labels == 4] = 1
    labels[_enclosed_edema(labels, connectivity)] = 1

    if intensity_filter:
        if not vol.same_geometry(intensity):
            raise ShapeError("intensity volume geometry does not match the label volume")
        values = zscore_normalize(intensity).data if normalize_intensity else intensity.data
        labels[(labels == 4) & (values < z_et)] = 1
    return LabelVolume(labels, vol.spacing, vol.origin)


def dice(a, b) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(a & b)) / total


def hausdorff(a, b, spacing, percentile=100.0) -> float:
    """Symmetric Hausdorff distance (mm) between the boundary voxels of two masks.

    With ``percentile < 100`` each directed distance set is summarised by that
    percentile before taking the maximum of the two directions.
    """
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    ea, eb = a.any(), b.any()
    if not ea and not eb:
        return 0.0
    if ea != eb:
        return float("inf")
    pa = voxel_centers(boundary_mask(a), spacing)
    pb = voxel_centers(boundary_mask(b), spacing)
    d_ab = cKDTree(pb).query(pa)[0]
    d_ba = cKDTree(pa).query(pb)[0]
    if percentile >= 100:
        return float(max(d_ab.max(), d_ba.max()))
    return float(max(np.percentile(d_ab, percentile), np.percentile(d_ba, percentile)))


@dataclass(frozen=True)
class SegScore:
    dice: dict
    hausdorff: dict
    hd_percentile: float = 100.0

    def to_dict(self) -> dict:
        return {"dice": dict(self.dice), "hausdorff": dict(self.hausdorff), "hd_percentile": self.hd_percentile}


def seg_metrics(pred: LabelVolume, ref: LabelVolume, hd_percentile: float = 100.0) -> SegScore:
    """Dice and Hausdorff distance for the ET, TC and WT regions."""
    if hd_percentile not in (95, 100, 95.0, 100.0):
        raise ConfigurationError(f"hd_percentile must be 95 or 100, got {hd_percentile}")
    _check_geometry([pred, ref], what="pred/ref volumes")
    d, h = {}, {}
    for region in REGIONS:
        p = np.isin(pred.data, _REGION_LABELS[region])
        g = np.isin(ref.data, _REGION_LABELS[region])
        d[region] = dice(p, g)
        h[region] = hausdorff(p, g, pred.spacing, hd_percentile)
    return SegScore(d, h, float(hd_percentile))
