import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gliosurv.exceptions import EmptyROIError, ValidationError
from gliosurv.texture import (
    DIRECTIONS,
    FEATURE_NAMES,
    TEXTURE_FEATURES,
    build_matrix,
    glrlm_features,
    texture_features,
)
from gliosurv.volume import ROI_LABELS, LabelVolume
import oracles

LABELS = np.array([0, 1, 2, 4], np.uint8)


def random_volume(seed, shape=(8, 8, 8)):
    return LabelVolume(np.random.default_rng(seed).choice(LABELS, size=shape))


def matrix_as_counts(m):
    """{(grey value, second index): count} from a GrayLevelMatrix."""
    out = {}
    mat = m.matrix
    for i, j in zip(*np.nonzero(mat)):
        g = int(m.gray_levels[i])
        key = (g, int(m.gray_levels[j])) if m.family == "glcm" else (g, int(j) + 1)
        out[key] = float(mat[i, j])
    return out


def oracle_counts(family, labels, roi_set):
    vox = oracles.roi_voxels(labels, roi_set)
    return {
        "glcm": oracles.glcm_counts,
        "glrlm": oracles.glrlm_counts,
        "glszm": oracles.glszm_counts,
        "gldm": oracles.gldm_counts,
    }[family](vox)


def test_feature_counts():
    assert [len(FEATURE_NAMES[f]) for f in ("glcm", "glrlm", "glszm", "gldm")] == [22, 16, 16, 14]
    assert len(TEXTURE_FEATURES) == 68 == len(set(TEXTURE_FEATURES))
    assert "glcm_ClusterShade" in TEXTURE_FEATURES
    assert "glszm_MaximumProbability" not in TEXTURE_FEATURES


def test_directions_unique_and_closed():
    assert len(DIRECTIONS) == 13
    full = {tuple(d) for d in DIRECTIONS} | {tuple(-np.asarray(d)) for d in DIRECTIONS}
    assert len(full) == 26
    for perm in ([1, 0, 2], [2, 1, 0], [0, 2, 1]):
        assert {tuple(np.asarray(d)[perm]) for d in full} == full


def test_constant_cube_glszm():
    vol = LabelVolume(np.pad(np.full((3, 3, 3), 2, np.uint8), 1))
    m = build_matrix(vol, "WT", "glszm")
    assert matrix_as_counts(m) == {(2, 27): 1.0}


def test_row_runs():
    vol = LabelVolume(np.array([1, 1, 2, 2], np.uint8).reshape(1, 4, 1))
    m = build_matrix(vol, "WT", "glrlm", directions=[(0, 1, 0)])
    assert matrix_as_counts(m) == {(1, 2): 1.0, (2, 2): 1.0}


@pytest.mark.parametrize("n", [1, 3, 7])
def test_single_run_long_run_emphasis(n):
    vol = LabelVolume(np.full((n, 1, 1), 4, np.uint8))
    m = build_matrix(vol, "WT", "glrlm", directions=[(1, 0, 0)])
    assert glrlm_features(m)["LongRunEmphasis"] == n**2


def test_constant_roi_glcm():
    vol = LabelVolume(np.full((4, 4, 4), 1, np.uint8))
    tf = texture_features(vol, "TC")
    v = tf.values
    assert v["glcm_MaximumProbability"] == 1.0
    assert v["glcm_JointEntropy"] == 0.0
    assert v["glcm_Contrast"] == 0.0
    assert v["glcm_Correlation"] == 0.0
    assert tf.warnings  # degenerate grey-level distribution is flagged
    assert all(np.isfinite(list(v.values())))


def test_empty_and_tiny_roi():
    vol = LabelVolume(np.zeros((3, 3, 3), np.uint8))
    with pytest.raises(EmptyROIError):
        build_matrix(vol, "WT", "glcm")
    one = np.zeros((3, 3, 3), np.uint8)
    one[1, 1, 1] = 4
    with pytest.raises(EmptyROIError):
        texture_features(LabelVolume(one), "WT")


def test_unknown_family():
    with pytest.raises(ValidationError):
        build_matrix(random_volume(0), "WT", "glxx")


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("family", ["glcm", "glrlm", "glszm", "gldm"])
def test_matrices_match_oracle(seed, family):
    vol = random_volume(seed, (6, 6, 6))
    for roi in ("WT", "TC"):
        m = build_matrix(vol, roi, family)
        got = matrix_as_counts(m)
        want = oracle_counts(family, vol.data, set(ROI_LABELS[roi]))
        if family == "glcm":
            total = sum(want.values())
            want = {k: v / total for k, v in want.items()}
            assert got.keys() == want.keys()
            for k in want:
                assert got[k] == pytest.approx(want[k], rel=1e-12)
        else:
            assert got == want


@pytest.mark.parametrize("seed", range(10))
def test_features_match_oracle(seed):
    vol = random_volume(100 + seed)
    for roi in ("WT", "TC"):
        got = texture_features(vol, roi).values
        want = oracles.texture_oracle(vol.data, set(ROI_LABELS[roi]))
        assert list(got) == list(TEXTURE_FEATURES)
        for k in TEXTURE_FEATURES:
            assert got[k] == pytest.approx(want[k], rel=1e-9, abs=1e-12), k


vols = hnp.arrays(np.uint8, st.tuples(*[st.integers(1, 5)] * 3), elements=st.sampled_from([0, 1, 2, 4])).filter(
    lambda a: np.count_nonzero(a) >= 2
)


@given(vols)
def test_matrix_invariants(data):
    vol = LabelVolume(data)
    glcm = build_matrix(vol, "WT", "glcm")
    if glcm.matrix.sum() > 0:
        assert abs(glcm.matrix.sum() - 1.0) <= 1e-12
    assert np.array_equal(glcm.matrix, glcm.matrix.T)
    szm = build_matrix(vol, "WT", "glszm")
    sizes = np.arange(1, szm.matrix.shape[1] + 1)
    assert (szm.matrix * sizes).sum() == np.count_nonzero(data)
    for fam in ("glrlm", "gldm"):
        assert np.all(build_matrix(vol, "WT", fam).matrix >= 0)
    vals = texture_features(vol, "WT").values
    assert len(vals) == 68 and all(np.isfinite(list(vals.values())))
    assert 0 < vals["glcm_MaximumProbability"] <= 1 or glcm.matrix.sum() == 0
    for k, v in vals.items():
        if "Entropy" in k:
            assert v >= 0


@given(vols, st.permutations([1, 2, 4]))
def test_label_permutation_covariance(data, perm):
    relabel = np.zeros(5, np.uint8)
    relabel[[1, 2, 4]] = perm
    a = texture_features(LabelVolume(data), "WT").values
    b = texture_features(LabelVolume(relabel[data]), "WT").values
    for k in ("glcm_JointEntropy", "glcm_MaximumProbability", "glrlm_RunPercentage", "glszm_ZonePercentage"):
        assert b[k] == pytest.approx(a[k], rel=1e-12, abs=1e-15)


@given(vols, st.permutations([0, 1, 2]))
def test_axis_permutation_invariance(data, perm):
    a = texture_features(LabelVolume(data), "WT").values
    b = texture_features(LabelVolume(np.transpose(data, perm)), "WT").values
    for k in TEXTURE_FEATURES:
        assert b[k] == pytest.approx(a[k], rel=1e-9, abs=1e-12), k


def test_as_dict_prefix():
    d = texture_features(random_volume(3), "TC").as_dict("TC")
    assert "TC_glcm_ClusterShade" in d and len(d) == 68
