import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gliosurv.exceptions import ConfigurationError, ShapeError, ValidationError
from gliosurv.fusion import dice, hausdorff, majority_vote, postprocess, seg_metrics
from gliosurv.synth import make_phantom
from gliosurv.volume import IntensityVolume, LabelVolume
from strategies import label_volumes


def stack(labels, shape=(1, 1, 1)):
    return [LabelVolume(np.full(shape, v, np.uint8)) for v in labels]


# ---------------------------------------------------------------- vote


@pytest.mark.parametrize("votes,want", [([2, 2, 2, 1, 1, 4], 2), ([1, 1, 2, 2, 4, 4], 4), ([0, 0, 2, 2], 2), ([0, 1], 1)])
def test_vote_examples(votes, want):
    assert majority_vote(stack(votes)).data.item() == want


def test_weights_shift_the_vote():
    assert majority_vote(stack([2, 1]), weights=[1.0, 3.0]).data.item() == 1
    with pytest.raises(ValidationError):
        majority_vote(stack([2, 1]), weights=[1.0, 0.0])


@given(label_volumes(), st.integers(1, 6))
def test_vote_idempotent(vol, k):
    assert majority_vote([vol] * k) == vol


def test_vote_geometry_mismatch():
    with pytest.raises(ShapeError):
        majority_vote([LabelVolume(np.zeros((2, 2, 2), np.uint8)), LabelVolume(np.zeros((2, 2, 3), np.uint8))])
    with pytest.raises(ShapeError):
        majority_vote([LabelVolume(np.zeros((2, 2, 2), np.uint8)), LabelVolume(np.zeros((2, 2, 2), np.uint8), (1, 1, 2))])


def _flip(truth, rng, frac=0.05):
    data = truth.copy()
    idx = rng.random(data.shape) < frac
    choices = np.array([0, 1, 2, 4], np.uint8)
    # a different label for every flipped voxel
    shift = rng.integers(1, 4, size=idx.sum())
    pos = np.searchsorted(choices, data[idx])
    data[idx] = choices[(pos + shift) % 4]
    return LabelVolume(data)


def _mean_dice(pred, ref):
    return np.mean([dice(np.isin(pred, r), np.isin(ref, r)) for r in ((4,), (1, 4), (1, 2, 4))])


def test_fusion_beats_members_on_noisy_copies():
    truth = make_phantom((9, 7, 5), 0.6, dims=(24, 20, 16)).data
    for seed in range(100):
        rng = np.random.default_rng(seed)
        members = [_flip(truth, rng) for _ in range(6)]
        fused = majority_vote(members).data
        assert _mean_dice(fused, truth) > np.mean([_mean_dice(m.data, truth) for m in members])


# ---------------------------------------------------------------- post-processing


def test_small_et_blob_becomes_core():
    data = np.zeros((12, 12, 12), np.uint8)
    data[2:10, 2:10, 2:10] = 1
    data[5, 5, 5:10] = 4
    out = postprocess(LabelVolume(data), min_wt=0, min_et=0, et_floor=500).data
    assert not np.any(out == 4)
    np.testing.assert_array_equal(out > 0, data > 0)
    np.testing.assert_array_equal(np.isin(out, (1, 4)), np.isin(data, (1, 4)))


def test_small_wt_component_removed():
    data = np.zeros((20, 20, 20), np.uint8)
    data[2:8, 2:8, 2:8] = 2
    data[15, 15, 15:18] = 1
    out = postprocess(LabelVolume(data), min_wt=100, min_et=0, et_floor=0).data
    assert out[15, 15, 15:18].sum() == 0
    assert np.all(out[2:8, 2:8, 2:8] == 2)


def test_small_et_component_relabelled():
    data = np.zeros((20, 20, 20), np.uint8)
    data[2:18, 2:18, 2:18] = 1
    data[3:9, 3:9, 3:9] = 4  # 216 voxels
    data[14, 14, 14] = 4
    out = postprocess(LabelVolume(data), min_wt=0, min_et=50, et_floor=100).data
    assert out[14, 14, 14] == 1
    assert np.all(out[3:9, 3:9, 3:9] == 4)


def _enclosed_by_core(data, idx):
    for d in itertools.product((-1, 0, 1), repeat=3):
        if d == (0, 0, 0):
            continue
        q = tuple(i + o for i, o in zip(idx, d))
        if min(q) < 0 or any(a >= n for a, n in zip(q, data.shape)) or data[q] not in (1, 4):
            return False
    return True


def test_enclosed_edema_voxel():
    vol = make_phantom((9, 7, 6), 0.8, dims=(24, 20, 18))
    data = np.array(vol.data)
    core = np.argwhere(np.isin(data, (1, 4)))
    for idx in map(tuple, core):
        if _enclosed_by_core(data, idx):
            break
    else:
        pytest.fail("phantom has no interior core voxel")
    data[idx] = 2
    assert _enclosed_by_core(data, idx)
    out = postprocess(LabelVolume(data), min_wt=0, min_et=0, et_floor=0).data
    assert out[idx] == 1
    # the outer oedema shell is not enclosed and stays
    np.testing.assert_array_equal(out == 2, vol.data == 2)


def test_edema_touching_outside_is_kept():
    data = np.zeros((9, 9, 9), np.uint8)
    data[2:7, 2:7, 2:7] = 1
    data[4, 4, 4:9] = 2  # a channel from the centre to the grid edge
    out = postprocess(LabelVolume(data), min_wt=0, min_et=0, et_floor=0).data
    assert np.all(out[4, 4, 4:9] == 2)


def test_intensity_filter():
    data = np.zeros((10, 10, 10), np.uint8)
    data[1:9, 1:9, 1:9] = 4
    t1 = np.ones(data.shape)
    t1[1:9, 1:9, 1:5] = -1.0
    out = postprocess(LabelVolume(data), IntensityVolume(t1), min_wt=0, min_et=0, et_floor=0).data
    assert np.all(out[1:9, 1:9, 1:5] == 1) and np.all(out[1:9, 1:9, 5:9] == 4)
    with pytest.raises(ConfigurationError):
        postprocess(LabelVolume(data), intensity_filter=True)


@given(label_volumes(shape=st.tuples(*[st.integers(2, 8)] * 3)), st.integers(0, 30), st.integers(0, 10), st.integers(0, 20))
def test_postprocess_never_grows_wt(vol, min_wt, min_et, et_floor):
    out = postprocess(vol, min_wt=min_wt, min_et=min_et, et_floor=et_floor).data
    assert set(np.unique(out)) <= {0, 1, 2, 4}
    assert not np.any((out > 0) & (vol.data == 0))


# ---------------------------------------------------------------- metrics


def test_identical_prediction():
    vol = make_phantom((8, 6, 5), 0.5, dims=(20, 16, 14))
    s = seg_metrics(vol, vol)
    assert s.dice == {"ET": 1.0, "TC": 1.0, "WT": 1.0}
    assert s.hausdorff == {"ET": 0.0, "TC": 0.0, "WT": 0.0}


def test_dice_half():
    a = np.zeros(8, bool)
    b = np.zeros(8, bool)
    a[:4] = True
    b[2:6] = True
    assert dice(a, b) == 0.5


def test_hausdorff_points():
    a = np.zeros((5, 5, 5), bool)
    b = np.zeros((5, 5, 5), bool)
    a[0, 0, 0] = True
    b[0, 0, 3] = True
    assert hausdorff(a, b, (1, 1, 1)) == 3.0
    assert hausdorff(a, b, (1, 1, 2)) == 6.0


def test_empty_cases():
    e = np.zeros((3, 3, 3), bool)
    f = e.copy()
    f[1, 1, 1] = True
    assert dice(e, e) == 1.0 and hausdorff(e, e, (1, 1, 1)) == 0.0
    assert dice(e, f) == 0.0 and hausdorff(e, f, (1, 1, 1)) == float("inf")
    vol = LabelVolume(np.zeros((3, 3, 3), np.uint8))
    ref = LabelVolume(np.where(f, 4, 0).astype(np.uint8))
    d = seg_metrics(vol, ref).to_dict()
    assert d["hausdorff"]["ET"] == float("inf")


@given(st.integers(0, 2**31), st.sampled_from([95, 100]))
def test_metric_symmetry(seed, pct):
    rng = np.random.default_rng(seed)
    a = rng.random((8, 8, 8)) < 0.3
    b = rng.random((8, 8, 8)) < 0.3
    assert dice(a, b) == dice(b, a)
    assert hausdorff(a, b, (1, 1.5, 2), pct) == hausdorff(b, a, (1, 1.5, 2), pct)


def test_hd95_below_hd100():
    vol = make_phantom((8, 6, 5), 0.5, dims=(24, 20, 16))
    shifted = LabelVolume(np.roll(vol.data, 2, axis=0))
    h95 = seg_metrics(vol, shifted, 95).hausdorff
    h100 = seg_metrics(vol, shifted, 100).hausdorff
    assert all(0 < h95[r] <= h100[r] for r in h95)
    with pytest.raises(ConfigurationError):
        seg_metrics(vol, vol, 90)
