import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mspn.exceptions import InvalidInputError
from mspn.geometry import (AffineTransform, BoundingBox, KeypointSet, apply_to_points, box_from_points,
                           crop_transform, expand_to_aspect, to_pixel_index_matrix, transform_keypoints,
                           warp_image)

finite = st.floats(-500, 500, allow_nan=False)
positive = st.floats(1.0, 500.0, allow_nan=False)


def test_box_validation():
    with pytest.raises(InvalidInputError):
        BoundingBox(0, 0, 0, 10)
    with pytest.raises(InvalidInputError):
        BoundingBox(0, 0, 10, -1)
    with pytest.raises(InvalidInputError):
        BoundingBox(0, 0, 10, 10, score=1.5)


def test_expand_square_box():
    b = expand_to_aspect(BoundingBox(0, 0, 100, 100), 4 / 3, 1.0)
    assert b.x == pytest.approx(0) and b.w == pytest.approx(100)
    assert b.y == pytest.approx(-16.6667, abs=1e-3) and b.h == pytest.approx(133.3333, abs=1e-3)


def test_expand_already_at_ratio():
    b = BoundingBox(3, 4, 75, 100)
    out = expand_to_aspect(b, 4 / 3)
    assert np.allclose(out.xywh(), b.xywh())


def test_expand_wide_box():
    b = BoundingBox(10, 10, 200, 100)
    out = expand_to_aspect(b, 4 / 3)
    assert out.w == pytest.approx(200) and out.h == pytest.approx(800 / 3)
    assert np.allclose(out.center, b.center)


@given(st.floats(-100, 100), st.floats(-100, 100), positive, positive,
       st.floats(0.25, 4.0), st.floats(1.0, 2.0))
def test_expand_properties(x, y, w, h, ratio, pad):
    b = BoundingBox(x, y, w, h)
    out = expand_to_aspect(b, ratio, pad)
    assert np.allclose(out.center, b.center, atol=1e-6)
    assert out.h / out.w == pytest.approx(ratio, rel=1e-6)
    padded = BoundingBox(b.center[0] - w * pad / 2, b.center[1] - h * pad / 2, w * pad, h * pad)
    assert out.contains(padded, tol=1e-6)
    assert out.w >= w * pad - 1e-9 and out.h >= h * pad - 1e-9
    again = expand_to_aspect(out, ratio, 1.0)
    assert np.allclose(again.xywh(), out.xywh(), atol=1e-6)


def test_expand_rejects_bad_args():
    with pytest.raises(InvalidInputError):
        expand_to_aspect(BoundingBox(0, 0, 1, 1), 0.0)
    with pytest.raises(InvalidInputError):
        expand_to_aspect(BoundingBox(0, 0, 1, 1), 1.0, padding=0.5)


def test_crop_identity():
    T = crop_transform(BoundingBox(0, 0, 192, 256), 192, 256)
    assert np.allclose(T.apply([[96, 128], [0, 0]]), [[96, 128], [0, 0]])


def test_crop_flip_center_row():
    T = crop_transform(BoundingBox(0, 0, 192, 256), 192, 256, flip=True)
    assert np.allclose(T.apply([[0, 128]]), [[192, 128]])


def test_crop_corners_against_solved_similarity():
    box = BoundingBox(10, 20, 96, 128)
    T = crop_transform(box, 192, 256)
    assert np.allclose(T.apply([[10, 20], [106, 148]]), [[0, 0], [192, 256]])
    # solve the axis-aligned map from three corner correspondences directly
    src = np.array([[10, 20, 1], [106, 20, 1], [10, 148, 1]], dtype=float)
    dst = np.array([[0, 0], [192, 0], [0, 256]], dtype=float)
    M = np.linalg.solve(src, dst).T
    assert np.allclose(T.m, M, atol=1e-9)


@given(st.floats(-200, 200), st.floats(-200, 200), positive, positive, st.floats(-180, 180),
       st.floats(0.3, 3.0), st.booleans())
def test_crop_centre_maps_to_output_centre(x, y, w, h, rot, scale, flip):
    box = BoundingBox(x, y, w, h)
    T = crop_transform(box, 192, 256, rot, scale, flip)
    assert np.allclose(T.apply([box.center]), [[96, 128]], atol=1e-6)


def test_crop_rejects_nonpositive_scale():
    with pytest.raises(InvalidInputError):
        crop_transform(BoundingBox(0, 0, 10, 10), 10, 10, scale=0)


def test_apply_examples():
    assert np.allclose(AffineTransform.identity().apply([[5, 7]]), [[5, 7]])
    assert np.allclose(AffineTransform.translation(3, 4).apply([[0, 0]]), [[3, 4]])
    assert np.allclose(AffineTransform.rotation(90).apply([[1, 0]]), [[0, 1]], atol=1e-12)


def test_singular_matrix_rejected():
    with pytest.raises(InvalidInputError):
        AffineTransform([[1, 2, 0], [2, 4, 0]])
    with pytest.raises(InvalidInputError):
        AffineTransform([[1, 0], [0, 1]])


def _random_affine(draw_vals):
    a, b, c, d, tx, ty = draw_vals
    m = np.array([[a, b, tx], [c, d, ty]])
    return m


affines = st.tuples(*[st.floats(-3, 3)] * 4, finite, finite).map(_random_affine).filter(
    lambda m: abs(np.linalg.det(m[:, :2])) > 1e-2)


@given(affines, affines, st.lists(st.tuples(finite, finite), min_size=1, max_size=5))
def test_composition_and_inverse(m1, m2, pts):
    T1, T2 = AffineTransform(m1), AffineTransform(m2)
    p = np.array(pts)
    assert np.allclose(T2.apply(T1.apply(p)), (T2 @ T1).apply(p), atol=1e-6)
    assert np.allclose(T1.inverse().apply(T1.apply(p)), p, atol=1e-6)
    assert T1.inverse().inverse().allclose(T1, atol=1e-9)


@given(st.floats(0, 300), st.floats(0, 300), positive, positive, st.floats(-45, 45), st.floats(0.7, 1.35),
       st.booleans(), st.lists(st.tuples(st.floats(0, 400), st.floats(0, 400)), min_size=1, max_size=6))
def test_keypoints_round_trip(x, y, w, h, rot, scale, flip, pts):
    T = crop_transform(BoundingBox(x, y, w, h), 192, 256, rot, scale, flip)
    kps = KeypointSet(np.array(pts), np.full(len(pts), 2))
    back = transform_keypoints(transform_keypoints(kps, T), T.inverse())
    assert np.allclose(back.coords, kps.coords, atol=1e-4)


def test_unlabelled_keypoints_untouched():
    kps = KeypointSet([[1, 2], [np.nan, np.nan]], [2, 0])
    out = transform_keypoints(kps, AffineTransform.translation(1, 1))
    assert np.allclose(out.coords[0], [2, 3]) and np.isnan(out.coords[1]).all()


def test_warp_matches_point_map():
    """A bright pixel centred at p lands on the output pixel containing T(p)."""
    img = np.zeros((100, 80, 3), np.uint8)
    img[37, 21] = 255
    T = crop_transform(BoundingBox(5, 10, 60, 80), 60, 80)  # translation only
    out = warp_image(img, T, (60, 80))
    q = T.apply([[21.5, 37.5]])[0]
    assert out[int(q[1]), int(q[0]), 0] == 255
    assert out.sum() == 255 * 3


def test_warp_mirror_is_array_flip():
    rng = np.random.default_rng(1)
    img = rng.integers(0, 255, (64, 48, 3), dtype=np.uint8)
    flipped = warp_image(img, AffineTransform.hflip(48), (48, 64))
    assert np.array_equal(flipped, img[:, ::-1])


def test_pixel_index_matrix_identity():
    assert np.allclose(to_pixel_index_matrix(AffineTransform.identity()), np.eye(3)[:2])


def test_box_from_points():
    assert box_from_points(np.array([[1, 1], [1, 5]])) is None
    b = box_from_points(np.array([[1, 2], [4, 8]]))
    assert b.xywh() == [1, 2, 3, 6]


def test_keypointset_validation():
    with pytest.raises(InvalidInputError):
        KeypointSet([[0, 0]], [3])
    with pytest.raises(InvalidInputError):
        KeypointSet([[np.nan, 0]], [1])
    k = KeypointSet.from_coco([1, 2, 2, 0, 0, 0])
    assert k.to_coco() == [1.0, 2.0, 2, 0.0, 0.0, 0]
    assert k.num_labelled() == 1


@settings(max_examples=30)
@given(affines)
def test_apply_to_points_shape_preserved(m):
    pts = np.zeros((3, 4, 2))
    assert apply_to_points(AffineTransform(m), pts).shape == (3, 4, 2)
