import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mspn.codec import (PoseResult, blur_heatmaps, decode, encode_targets, flip_average, gaussian_kernel_2d,
                        gaussian_sigma, kernel_for_scale, mirror_and_swap, score_pose)
from mspn.config import SupervisionConfig
from mspn.exceptions import ConfigError, InvalidInputError
from mspn.geometry import BoundingBox, KeypointSet, crop_transform

from oracles import gaussian_patch_ref, spatial_variance

INPUT = (192, 256)


def one_joint(x, y, vis=2):
    return KeypointSet([[x, y]], [vis])


def sup(*ks):
    return SupervisionConfig(kernel_sizes=ks, ohkm_top_k=1)


def at_cell(cx, cy, stride=4):
    """Input coordinate inside heatmap cell (cx, cy) at the given stride."""
    return (cx + 0.5) * stride, (cy + 0.5) * stride


def test_sigma_rule():
    assert gaussian_sigma(1) == 0.5
    assert gaussian_sigma(7) == pytest.approx(7 / 3)


@pytest.mark.parametrize("K", [1, 3, 5, 7, 9, 11])
def test_kernel_matches_reference(K):
    assert np.allclose(gaussian_kernel_2d(K), gaussian_patch_ref(K), atol=1e-12)


@pytest.mark.parametrize("K,stride,expected", [
    (7, 4, 7), (7, 8, 3), (7, 16, 1), (7, 32, 1),
    (5, 8, 3), (5, 16, 1), (11, 8, 5), (9, 8, 5), (15, 16, 3), (15, 8, 7),
])
def test_kernel_for_scale(K, stride, expected):
    assert kernel_for_scale(K, stride) == expected


def test_kernel_for_scale_is_odd_and_nearest():
    for K in range(1, 30, 2):
        for s in (4, 8, 16, 32):
            k = kernel_for_scale(K, s)
            target = K * 4 / s
            assert k % 2 == 1 and k >= 1
            if target >= 1:
                best = min(range(1, 40, 2), key=lambda o: (abs(o - target), -o))
                assert k == best


def test_encode_kernel_one_is_impulse():
    pyr = encode_targets(one_joint(*at_cell(10, 10)), sup(1), 0, INPUT)
    m = pyr.maps[0][0]
    assert m[10, 10] == 1.0 and m.sum() == 1.0


def test_encode_invisible_joint():
    pyr = encode_targets(one_joint(50, 50, vis=0), sup(7), 0, INPUT)
    assert not pyr.mask[0]
    assert all(m.sum() == 0 for m in pyr.maps)


def test_encode_out_of_bounds_is_masked():
    pyr = encode_targets(one_joint(-3, 50), sup(7), 0, INPUT)
    assert not pyr.mask[0] and pyr.maps[0].sum() == 0


def test_encode_k5_symmetry_and_values():
    m = encode_targets(one_joint(*at_cell(10, 10)), sup(5), 0, INPUT, dtype=np.float64).maps[0][0]
    assert m[10, 10] == 1.0
    assert m[10, 8] == m[10, 12] == m[8, 10] == m[12, 10]
    ref = gaussian_patch_ref(5)
    assert np.allclose(m[8:13, 8:13], ref)
    assert m[7, 10] == 0 and m[10, 13] == 0


@given(st.floats(0, 191.99), st.floats(0, 255.99), st.sampled_from([1, 3, 5, 7, 9]))
def test_peak_is_exact_at_every_scale(x, y, K):
    pyr = encode_targets(one_joint(x, y), sup(K), 0, INPUT)
    for m in pyr.maps:
        assert m[0].max() == 1.0


def test_encode_shapes_and_stage_check():
    pyr = encode_targets(one_joint(30, 40), sup(7, 5), 1, INPUT)
    assert [m.shape for m in pyr.maps] == [(1, 64, 48), (1, 32, 24), (1, 16, 12), (1, 8, 6)]
    with pytest.raises(InvalidInputError):
        encode_targets(one_joint(30, 40), sup(7, 5), 2, INPUT)


def test_coarse_to_fine_variance():
    cfg = sup(7, 5)
    for x, y in [(40.3, 60.2), (100, 100), (150.5, 200.1)]:
        v = [spatial_variance(encode_targets(one_joint(x, y), cfg, s, INPUT).maps[0][0]) for s in range(2)]
        assert v[0] > v[1]


def test_decode_quarter_offset():
    hm = np.zeros((1, 64, 48))
    hm[0, 10, 10] = 0.9
    hm[0, 11, 10] = 0.5  # second highest directly below (x=10, y=11)
    coords, scores = decode(hm, None, blur_kernel=1)
    assert np.allclose(coords[0], [(10 + 0.5) * 4, (10 + 0.5 + 0.25) * 4])
    assert scores[0] == pytest.approx(0.9)


def test_decode_all_zero():
    coords, scores = decode(np.zeros((2, 64, 48)), None, blur_kernel=5)
    assert np.allclose(coords, [[96, 128], [96, 128]]) and np.all(scores == 0)


def test_decode_tie_is_row_major_first():
    hm = np.zeros((1, 20, 20))
    hm[0, 5, 5] = hm[0, 9, 9] = 1.0
    coords, _ = decode(hm, None, blur_kernel=1, stride=1)
    # first max (5, 5); runner-up (9, 9) pulls a quarter cell down-right
    assert np.allclose(coords[0], [5.75, 5.75])


def test_decode_score_is_unblurred_and_clamped():
    hm = -np.ones((1, 8, 8))
    hm[0, 3, 3] = -0.2
    _, s = decode(hm, None, blur_kernel=3)
    assert s[0] == 0.0
    hm = np.zeros((1, 16, 16))
    hm[0, 8, 8] = 0.7
    _, s = decode(hm, None, blur_kernel=5)
    assert s[0] == pytest.approx(0.7)


def test_decode_maps_through_inverse():
    hm = np.zeros((1, 64, 48))
    hm[0, 20, 12] = 1.0
    hm[0, 20, 13] = 0.5
    T = crop_transform(BoundingBox(100, 50, 96, 128), 192, 256)
    coords, _ = decode(hm, T.inverse(), blur_kernel=1)
    local, _ = decode(hm, None, blur_kernel=1)
    assert np.allclose(coords, T.inverse().apply(local))


def test_decode_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        decode(np.full((1, 4, 4), np.nan))
    with pytest.raises(InvalidInputError):
        decode(np.zeros((1, 4, 4)), blur_kernel=2)
    with pytest.raises(InvalidInputError):
        decode(np.zeros((4, 4)))


@given(st.floats(0, 191.99), st.floats(0, 255.99))
def test_round_trip_error_bound(x, y):
    pyr = encode_targets(one_joint(x, y), sup(5), 0, INPUT)
    coords, _ = decode(pyr.maps[0], None, blur_kernel=1)
    assert np.linalg.norm(coords[0] - [x, y], ord=np.inf) <= 0.75 * 4 + 1e-9


def test_flip_equivariance_of_decode():
    rng = np.random.default_rng(3)
    hm = rng.random((3, 16, 12))
    pairs = [(1, 2)]
    c, _ = decode(hm, None, blur_kernel=3)
    cm, _ = decode(mirror_and_swap(hm, pairs), None, blur_kernel=3)
    mirrored = c[[0, 2, 1]].copy()
    mirrored[:, 0] = 12 * 4 - mirrored[:, 0]
    assert np.allclose(cm, mirrored, atol=1e-6)


def test_flip_average_examples():
    rng = np.random.default_rng(0)
    pyr = rng.random((2, 6, 5))
    pairs = [(0, 1)]
    assert np.allclose(flip_average(pyr, mirror_and_swap(pyr, pairs), pairs), pyr)
    other = rng.random((2, 6, 5))
    out = flip_average(np.zeros_like(pyr), other, pairs)
    assert np.allclose(out, 0.5 * mirror_and_swap(other, pairs))
    out = flip_average(pyr, other, pairs)
    assert np.allclose(out[0], 0.5 * (pyr[0] + other[1][:, ::-1]))
    with pytest.raises(ConfigError):
        flip_average(pyr, other, [(0, 2)])
    with pytest.raises(InvalidInputError):
        flip_average(pyr, other[:1], pairs)


def test_symmetric_joints_map_to_themselves():
    hm = np.arange(3 * 2 * 4, dtype=float).reshape(3, 2, 4)
    out = mirror_and_swap(hm, [(1, 2)])
    assert np.array_equal(out[0], hm[0][:, ::-1])


def test_score_pose():
    assert score_pose([1, 1, 1], 0.8) == pytest.approx(0.8)
    assert score_pose([0, 0], 0.9) == 0
    assert score_pose([0.5, 1.0], 0.6) == pytest.approx(0.45)
    with pytest.raises(InvalidInputError):
        score_pose([1], 1.5)


def test_pose_result_invariant():
    box = BoundingBox(0, 0, 10, 10, score=0.7)
    r = PoseResult.from_decoded(np.zeros((3, 2)), np.array([0.2, 0.4, 0.9]), box, image_id=4)
    assert r.pose_score == pytest.approx(0.7 * 0.5, abs=1e-6)


def test_blur_preserves_mass_in_interior():
    hm = np.zeros((1, 21, 21))
    hm[0, 10, 10] = 1.0
    out = blur_heatmaps(hm, 5)
    assert out.sum() == pytest.approx(1.0)
    assert np.argmax(out[0]) == 10 * 21 + 10
