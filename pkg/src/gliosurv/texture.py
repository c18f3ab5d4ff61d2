"""Grey-level texture matrices (GLCM, GLRLM, GLSZM, GLDM) and their 68 features.

The tumour structure map is used without re-quantisation: the grey levels are
the raw labels present in the ROI and feature weights use the label values
themselves (1, 2, 4).  Matrices from the 13 unique 3-D directions are merged
by summation before features are computed.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .exceptions import EmptyROIError, ValidationError
from .volume import ROIMask, roi_mask

#: the 13 unique neighbour offsets at distance 1 (one of each +/- pair)
DIRECTIONS = tuple(
    d
    for d in itertools.product((-1, 0, 1), repeat=3)
    if d != (0, 0, 0) and next(c for c in d if c != 0) > 0
)

FAMILIES = ("glcm", "glrlm", "glszm", "gldm")

GLCM_FEATURES = (
    "Autocorrelation",
    "JointAverage",
    "ClusterProminence",
    "ClusterShade",
    "ClusterTendency",
    "Contrast",
    "Correlation",
    "DifferenceAverage",
    "DifferenceEntropy",
    "DifferenceVariance",
    "JointEnergy",
    "JointEntropy",
    "IMC1",
    "IMC2",
    "IDM",
    "IDMN",
    "ID",
    "IDN",
    "InverseVariance",
    "MaximumProbability",
    "SumEntropy",
    "SumSquares",
)

GLRLM_FEATURES = (
    "ShortRunEmphasis",
    "LongRunEmphasis",
    "GrayLevelNonUniformity",
    "GrayLevelNonUniformityNormalized",
    "RunLengthNonUniformity",
    "RunLengthNonUniformityNormalized",
    "RunPercentage",
    "GrayLevelVariance",
    "RunVariance",
    "RunEntropy",
    "LowGrayLevelRunEmphasis",
    "HighGrayLevelRunEmphasis",
    "ShortRunLowGrayLevelEmphasis",
    "ShortRunHighGrayLevelEmphasis",
    "LongRunLowGrayLevelEmphasis",
    "LongRunHighGrayLevelEmphasis",
)

GLSZM_FEATURES = (
    "SmallAreaEmphasis",
    "LargeAreaEmphasis",
    "GrayLevelNonUniformity",
    "GrayLevelNonUniformityNormalized",
    "SizeZoneNonUniformity",
    "SizeZoneNonUniformityNormalized",
    "ZonePercentage",
    "GrayLevelVariance",
    "ZoneVariance",
    "ZoneEntropy",
    "LowGrayLevelZoneEmphasis",
    "HighGrayLevelZoneEmphasis",
    "SmallAreaLowGrayLevelEmphasis",
    "SmallAreaHighGrayLevelEmphasis",
    "LargeAreaLowGrayLevelEmphasis",
    "LargeAreaHighGrayLevelEmphasis",
)

GLDM_FEATURES = (
    "SmallDependenceEmphasis",
    "LargeDependenceEmphasis",
    "GrayLevelNonUniformity",
    "DependenceNonUniformity",
    "DependenceNonUniformityNormalized",
    "GrayLevelVariance",
    "DependenceVariance",
    "DependenceEntropy",
    "LowGrayLevelEmphasis",
    "HighGrayLevelEmphasis",
    "SmallDependenceLowGrayLevelEmphasis",
    "SmallDependenceHighGrayLevelEmphasis",
    "LargeDependenceLowGrayLevelEmphasis",
    "LargeDependenceHighGrayLevelEmphasis",
)

FEATURE_NAMES = {
    "glcm": GLCM_FEATURES,
    "glrlm": GLRLM_FEATURES,
    "glszm": GLSZM_FEATURES,
    "gldm": GLDM_FEATURES,
}

TEXTURE_FEATURES = tuple(f"{fam}_{name}" for fam in FAMILIES for name in FEATURE_NAMES[fam])


@dataclass(frozen=True)
class GrayLevelMatrix:
    """Count matrix; rows follow ``gray_levels``, column ``k`` is second index ``k + 1``
    (run length, zone size or dependence + 1).  For the GLCM both axes follow
    ``gray_levels`` and ``matrix`` holds probabilities."""

    family: str
    matrix: np.ndarray
    gray_levels: np.ndarray
    n_voxels: int
    n_directions: int = 1


@dataclass
class TextureFeatures:
    values: dict
    warnings: list = field(default_factory=list)

    def as_dict(self, roi: str) -> dict:
        return {f"{roi}_{name}": float(v) for name, v in self.values.items()}


def _roi_arrays(vol, roi):
    if isinstance(roi, str):
        roi = roi_mask(vol, roi)
    mask = roi.data if isinstance(roi, ROIMask) else np.asarray(roi, dtype=bool)
    if mask.shape != vol.data.shape:
        raise ValidationError(f"ROI shape {mask.shape} does not match volume {vol.data.shape}")
    if not mask.any():
        raise EmptyROIError("texture ROI is empty")
    # crop to the bounding box plus a one-voxel margin of "outside"
    nz = np.argwhere(mask)
    lo, hi = nz.min(axis=0), nz.max(axis=0) + 1
    sl = tuple(slice(a, b) for a, b in zip(lo, hi))
    mask = np.pad(mask[sl], 1, constant_values=False)
    labels = np.pad(np.asarray(vol.data[sl]), 1, constant_values=0)
    levels = np.unique(labels[mask])
    # grey-level index image, -1 outside the ROI
    index = np.full(labels.shape, -1, dtype=np.int64)
    index[mask] = np.searchsorted(levels, labels[mask])
    return index, levels.astype(np.float64)


def _shifted(arr, offset, fill):
    """``out[v] = arr[v + offset]`` with ``fill`` past the border."""
    out = np.full_like(arr, fill)
    src = []
    dst = []
    for o, n in zip(offset, arr.shape):
        if o >= 0:
            src.append(slice(o, n))
            dst.append(slice(0, n - o))
        else:
            src.append(slice(0, n + o))
            dst.append(slice(-o, n))
    out[tuple(dst)] = arr[tuple(src)]
    return out


def _glcm(index, ng, directions):
    counts = np.zeros((ng, ng), dtype=np.float64)
    for d in directions:
        nb = _shifted(index, d, -1)
        ok = (index >= 0) & (nb >= 0)
        np.add.at(counts, (index[ok], nb[ok]), 1.0)
    counts = counts + counts.T
    return counts


def _glrlm(index, ng, directions):
    runs = []
    for d in directions:
        d = np.asarray(d)
        prev = _shifted(index, tuple(-d), -1)
        starts = np.argwhere((index >= 0) & (prev != index))
        levels = index[tuple(starts.T)]
        lengths = np.ones(len(starts), dtype=np.int64)
        pos = starts.copy()
        active = np.ones(len(starts), dtype=bool)
        # the one-voxel padding guarantees the walk never leaves the array
        while active.any():
            pos[active] += d
            nxt = index[tuple(pos[active].T)] == levels[active]
            idx = np.flatnonzero(active)
            lengths[idx[nxt]] += 1
            active[idx[~nxt]] = False
        runs.append((levels, lengths))
    max_len = max((int(r[1].max()) for r in runs if len(r[1])), default=1)
    mat = np.zeros((ng, max_len), dtype=np.float64)
    for levels, lengths in runs:
        np.add.at(mat, (levels, lengths - 1), 1.0)
    return mat


def _glszm(index, ng):
    struct = ndimage.generate_binary_structure(3, 3)
    zones = []
    for g in range(ng):
        lab, n = ndimage.label(index == g, structure=struct)
        if n:
            sizes = np.bincount(lab.ravel())[1:]
            zones.append((np.full(n, g), sizes))
    max_size = max(int(z[1].max()) for z in zones)
    mat = np.zeros((ng, max_size), dtype=np.float64)
    for levels, sizes in zones:
        np.add.at(mat, (levels, sizes - 1), 1.0)
    return mat


def _gldm(index, levels, alpha=0):
    ng = len(levels)
    inside = index >= 0
    value = np.where(inside, levels[np.clip(index, 0, None)], np.nan)
    dep = np.zeros(index.shape, dtype=np.int64)
    offsets = [d for d in itertools.product((-1, 0, 1), repeat=3) if d != (0, 0, 0)]
    for d in offsets:
        nb = _shifted(value, d, np.nan)
        dep += np.abs(nb - value) <= alpha
    mat = np.zeros((ng, 27), dtype=np.float64)
    np.add.at(mat, (index[inside], dep[inside]), 1.0)
    last = np.flatnonzero(mat.sum(axis=0))[-1] + 1
    return mat[:, :last]


def build_matrix(vol, roi, family: str, directions=DIRECTIONS, alpha: int = 0) -> GrayLevelMatrix:
    """Build one texture matrix for ``roi`` (ROIMask, boolean array or ROI kind name).

    ``directions`` applies to GLCM and GLRLM; GLSZM zones and GLDM
    neighbourhoods always use 26-connectivity.
    """
    family = family.lower()
    if family not in FAMILIES:
        raise ValidationError(f"family must be one of {FAMILIES}, got {family!r}")
    index, levels = _roi_arrays(vol, roi)
    ng = len(levels)
    n_voxels = int(np.count_nonzero(index >= 0))
    directions = tuple(tuple(int(c) for c in d) for d in directions)
    if family == "glcm":
        counts = _glcm(index, ng, directions)
        total = counts.sum()
        mat = counts / total if total > 0 else counts
    elif family == "glrlm":
        mat = _glrlm(index, ng, directions)
    elif family == "glszm":
        mat = _glszm(index, ng)
    else:
        mat = _gldm(index, levels, alpha)
    n_dirs = len(directions) if family in ("glcm", "glrlm") else 1
    return GrayLevelMatrix(family, mat, levels, n_voxels, n_dirs)


def _entropy(p):
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def _kl_terms(t):
    """(1 + t) ln(1 + t) - t, accurate for small |t|; t >= -1."""
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    small = np.abs(t) < 0.05
    ts = t[small]
    # alternating series sum_{k>=2} (-1)^k t^k / (k (k - 1))
    acc = np.zeros_like(ts)
    power = ts * ts
    for k in range(2, 16):
        acc += (-1) ** k * power / (k * (k - 1))
        power = power * ts
    out[small] = acc
    big = ~small
    tb = t[big]
    with np.errstate(divide="ignore", invalid="ignore"):
        out[big] = np.where(tb <= -1.0, 1.0, (1.0 + tb) * np.log1p(tb) - tb)
    return out


def _mutual_information(p, q):
    """KL(p || q) in bits as a sum of non-negative terms (no cancellation).

    HXY - HXY1 and HXY - HXY2 of the Haralick definitions both equal minus
    this quantity when ``q`` is the product of the marginals of ``p``.
    """
    keep = q > 0
    q = q[keep]
    t = (p[keep] - q) / q
    return float((q * _kl_terms(t)).sum() / np.log(2.0))


def glcm_features(m: GrayLevelMatrix, warnings=None) -> dict:
    p = m.matrix
    g = m.gray_levels
    ng = len(g)
    if p.sum() == 0:
        # ROI without any neighbouring voxel pair
        if warnings is not None:
            warnings.append("glcm: no voxel pairs in ROI, features set to 0")
        return dict.fromkeys(GLCM_FEATURES, 0.0)
    i, j = np.meshgrid(g, g, indexing="ij")
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    ux = float((px * g).sum())
    uy = float((py * g).sum())
    var_x = float((px * (g - ux) ** 2).sum())
    var_y = float((py * (g - uy) ** 2).sum())

    diff = np.abs(i - j)
    ks = np.unique(diff)
    p_diff = np.array([p[diff == k].sum() for k in ks])
    sums = i + j
    p_sum = np.array([p[sums == k].sum() for k in np.unique(sums)])

    hx, hy, hxy = _entropy(px), _entropy(py), _entropy(p)
    mi = _mutual_information(p, np.outer(px, py))

    out = {}
    out["Autocorrelation"] = float((p * i * j).sum())
    out["JointAverage"] = ux
    out["ClusterProminence"] = float((p * (i + j - ux - uy) ** 4).sum())
    out["ClusterShade"] = float((p * (i + j - ux - uy) ** 3).sum())
    out["ClusterTendency"] = float((p * (i + j - ux - uy) ** 2).sum())
    out["Contrast"] = float((p * (i - j) ** 2).sum())
    if var_x > 0 and var_y > 0:
        out["Correlation"] = float((p * (i - ux) * (j - uy)).sum() / np.sqrt(var_x * var_y))
    else:
        out["Correlation"] = 0.0
        if warnings is not None:
            warnings.append("glcm: single grey level, Correlation set to 0")
    diff_avg = float((ks * p_diff).sum())
    out["DifferenceAverage"] = diff_avg
    out["DifferenceEntropy"] = _entropy(p_diff)
    out["DifferenceVariance"] = float((p_diff * (ks - diff_avg) ** 2).sum())
    out["JointEnergy"] = float((p**2).sum())
    out["JointEntropy"] = hxy
    hmax = max(hx, hy)
    if hmax > 0:
        out["IMC1"] = -mi / hmax
    else:
        out["IMC1"] = 0.0
        if warnings is not None:
            warnings.append("glcm: zero marginal entropy, IMC1 set to 0")
    out["IMC2"] = float(np.sqrt(-np.expm1(-2.0 * mi)))
    out["IDM"] = float((p / (1.0 + diff**2)).sum())
    out["IDMN"] = float((p / (1.0 + diff**2 / ng**2)).sum())
    out["ID"] = float((p / (1.0 + diff)).sum())
    out["IDN"] = float((p / (1.0 + diff / ng)).sum())
    off = diff > 0
    out["InverseVariance"] = float((p[off] / diff[off] ** 2).sum())
    out["MaximumProbability"] = float(p.max())
    out["SumEntropy"] = _entropy(p_sum)
    out["SumSquares"] = float((p * (i - ux) ** 2).sum())
    return out


def _size_zone_features(mat, g, n_voxels, n_directions, names):
    """Shared formulas of GLRLM / GLSZM (second index = run length or zone size)."""
    total = mat.sum()
    p = mat / total
    j = np.arange(1, mat.shape[1] + 1, dtype=np.float64)[None, :]
    i = g[:, None]
    pg = p.sum(axis=1)
    pj = p.sum(axis=0)
    mu_i = float((p * i).sum())
    mu_j = float((p * j).sum())
    vals = [
        float((p / j**2).sum()),
        float((p * j**2).sum()),
        float((mat.sum(axis=1) ** 2).sum() / total),
        float((pg**2).sum()),
        float((mat.sum(axis=0) ** 2).sum() / total),
        float((pj**2).sum()),
        float(total / (n_voxels * n_directions)),
        float((p * (i - mu_i) ** 2).sum()),
        float((p * (j - mu_j) ** 2).sum()),
        _entropy(p),
        float((p / i**2).sum()),
        float((p * i**2).sum()),
        float((p / (i**2 * j**2)).sum()),
        float((p * i**2 / j**2).sum()),
        float((p * j**2 / i**2).sum()),
        float((p * i**2 * j**2).sum()),
    ]
    return dict(zip(names, vals))


def glrlm_features(m: GrayLevelMatrix) -> dict:
    return _size_zone_features(m.matrix, m.gray_levels, m.n_voxels, m.n_directions, GLRLM_FEATURES)


def glszm_features(m: GrayLevelMatrix) -> dict:
    return _size_zone_features(m.matrix, m.gray_levels, m.n_voxels, 1, GLSZM_FEATURES)


def gldm_features(m: GrayLevelMatrix) -> dict:
    mat = m.matrix
    total = mat.sum()
    p = mat / total
    j = np.arange(1, mat.shape[1] + 1, dtype=np.float64)[None, :]
    i = m.gray_levels[:, None]
    mu_i = float((p * i).sum())
    mu_j = float((p * j).sum())
    vals = [
        float((p / j**2).sum()),
        float((p * j**2).sum()),
        float((mat.sum(axis=1) ** 2).sum() / total),
        float((mat.sum(axis=0) ** 2).sum() / total),
        float((p.sum(axis=0) ** 2).sum()),
        float((p * (i - mu_i) ** 2).sum()),
        float((p * (j - mu_j) ** 2).sum()),
        _entropy(p),
        float((p / i**2).sum()),
        float((p * i**2).sum()),
        float((p / (i**2 * j**2)).sum()),
        float((p * i**2 / j**2).sum()),
        float((p * j**2 / i**2).sum()),
        float((p * i**2 * j**2).sum()),
    ]
    return dict(zip(GLDM_FEATURES, vals))


def texture_features(vol, roi) -> TextureFeatures:
    """All 68 texture features of ``roi``, keyed ``{family}_{FeatureName}``."""
    warnings = []
    values = {}
    mats = {fam: build_matrix(vol, roi, fam) for fam in FAMILIES}
    if mats["glcm"].n_voxels < 2:
        raise EmptyROIError("texture features need an ROI with at least 2 voxels")
    if len(mats["glcm"].gray_levels) == 1:
        warnings.append(f"single grey level ({mats['glcm'].gray_levels[0]:g}) in ROI")
    fam_values = {
        "glcm": glcm_features(mats["glcm"], warnings),
        "glrlm": glrlm_features(mats["glrlm"]),
        "glszm": glszm_features(mats["glszm"]),
        "gldm": gldm_features(mats["gldm"]),
    }
    for fam in FAMILIES:
        for name in FEATURE_NAMES[fam]:
            values[f"{fam}_{name}"] = fam_values[fam][name]
    return TextureFeatures(values, warnings)
