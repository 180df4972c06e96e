import json

import numpy as np
import pytest

from mspn.codec import PoseResult
from mspn.data_io import (DatasetManifest, gt_boxes, load_coco_keypoints, load_detections, read_image,
                          read_predictions, write_predictions)
from mspn.exceptions import SchemaError
from mspn.synthetic import JOINT_COLORS, make_synthetic


def coco_file(tmp_path, annotations, images=None, name="ann.json"):
    images = images if images is not None else [{"id": 1, "file_name": "a.jpg", "width": 640, "height": 480}]
    data = {"images": images, "annotations": annotations,
            "categories": [{"id": 1, "name": "person", "keypoints": [f"j{i}" for i in range(17)]}]}
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def person_record(id=1, image_id=1, vis=2, n_vis=17):
    kp = []
    for j in range(17):
        kp += [10.0 + j, 20.0 + j, vis if j < n_vis else 0]
    return {"id": id, "image_id": image_id, "category_id": 1, "keypoints": kp,
            "bbox": [5, 10, 100, 200], "area": 15000.0, "iscrowd": 0, "num_keypoints": n_vis}


def test_minimal_fixture(tmp_path):
    m = load_coco_keypoints(coco_file(tmp_path, [person_record()]))
    assert len(m) == 1 and len(m.images) == 1
    inst = m.instances[0]
    assert inst.keypoints.num_labelled() == 17
    assert inst.bbox.xywh() == [5, 10, 100, 200]
    assert m.skeleton.name == "coco17" and m.format_tag == "coco17"


def test_empty_annotations(tmp_path):
    m = load_coco_keypoints(coco_file(tmp_path, []))
    assert len(m) == 0 and len(m.images) == 1


def test_visibility_flags_kept(tmp_path):
    m = load_coco_keypoints(coco_file(tmp_path, [person_record(vis=1, n_vis=5)]))
    v = m.instances[0].keypoints.vis
    assert list(v[:5]) == [1] * 5 and not v[5:].any()


def test_schema_error_names_the_record(tmp_path):
    bad = person_record(id=77)
    bad["keypoints"] = bad["keypoints"][:-3]
    with pytest.raises(SchemaError, match=r"annotations\[1\] \(id=77\)"):
        load_coco_keypoints(coco_file(tmp_path, [person_record(), bad]))
    del bad["bbox"]
    with pytest.raises(SchemaError, match="id=77"):
        load_coco_keypoints(coco_file(tmp_path, [bad]))


def test_unknown_image_and_bad_json(tmp_path):
    with pytest.raises(SchemaError, match="unknown image_id"):
        load_coco_keypoints(coco_file(tmp_path, [person_record(image_id=9)]))
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(SchemaError):
        load_coco_keypoints(p)


def test_non_person_categories_skipped(tmp_path):
    other = person_record(id=2)
    other["category_id"] = 3
    m = load_coco_keypoints(coco_file(tmp_path, [person_record(), other]))
    assert [x.id for x in m.instances] == [1]


def test_lossless_round_trip(tmp_path):
    src = coco_file(tmp_path, [person_record(1), person_record(2, vis=1, n_vis=3)])
    m = load_coco_keypoints(src)
    m.save(tmp_path / "again.json")
    m2 = load_coco_keypoints(tmp_path / "again.json")
    assert m2.images == m.images and m2.skeleton == m.skeleton
    for a, b in zip(m.instances, m2.instances):
        assert a.id == b.id and a.area == b.area and a.bbox.xywh() == b.bbox.xywh()
        assert np.array_equal(a.keypoints.vis, b.keypoints.vis)
        lab = a.keypoints.labelled
        assert np.array_equal(a.keypoints.coords[lab], b.keypoints.coords[lab])


def test_subset(tmp_path):
    images = [{"id": i, "file_name": f"{i}.jpg", "width": 64, "height": 64} for i in (1, 2, 3)]
    m = load_coco_keypoints(coco_file(tmp_path, [person_record(1, 1), person_record(2, 3)], images))
    s = m.subset([3])
    assert list(s.images) == [3] and [x.id for x in s.instances] == [2]
    with pytest.raises(SchemaError):
        m.subset([4])


def test_detections_top_n_then_filters(tmp_path):
    dets = [
        {"image_id": 1, "category_id": 2, "bbox": [0, 0, 5, 5], "score": 0.99},
        {"image_id": 1, "category_id": 1, "bbox": [0, 0, 5, 5], "score": 0.9},
        {"image_id": 1, "category_id": 1, "bbox": [0, 0, 5, 5], "score": 0.3},
        {"image_id": 1, "category_id": 1, "bbox": [0, 0, 5, 5], "score": 0.8},
        {"image_id": 2, "category_id": 1, "bbox": [0, 0, 0, 5], "score": 0.8},  # degenerate
        {"image_id": 2, "bbox": [0, 0, 5, 5], "score": 0.8},  # no category
    ]
    p = tmp_path / "det.json"
    p.write_text(json.dumps(dets))
    out = load_detections(p, top_n=3, min_score=0.5)
    assert [b.score for b in out.for_image(1)] == [0.9, 0.8]
    assert out.skipped == 2 and out.for_image(2) == []
    assert len(load_detections(p, top_n=100, min_score=0.0)) == 3


def test_gt_boxes_skip_crowd(tmp_path):
    crowd = person_record(2)
    crowd["iscrowd"] = 1
    m = load_coco_keypoints(coco_file(tmp_path, [person_record(1), crowd]))
    assert len(gt_boxes(m).for_image(1)) == 1


def test_prediction_file_sorted_and_readable(tmp_path):
    rs = [PoseResult(np.full((2, 2), i, float), np.array([0.5, 1.0]), s, img)
          for i, (img, s) in enumerate([(2, 0.1), (1, 0.3), (2, 0.9), (1, 0.7)])]
    write_predictions(rs, tmp_path / "p.json")
    recs = json.loads((tmp_path / "p.json").read_text())
    assert [(r["image_id"], r["score"]) for r in recs] == [(1, 0.7), (1, 0.3), (2, 0.9), (2, 0.1)]
    back = read_predictions(tmp_path / "p.json", num_joints=2)
    assert np.array_equal(back[2][0].coords, np.full((2, 2), 2.0))
    with pytest.raises(SchemaError):
        read_predictions(tmp_path / "p.json", num_joints=3)


def test_empty_prediction_file(tmp_path):
    write_predictions([], tmp_path / "p.json")
    assert json.loads((tmp_path / "p.json").read_text()) == []
    assert read_predictions(tmp_path / "p.json") == {}


def test_synthetic_is_deterministic(tmp_path):
    a = make_synthetic(3, 5, tmp_path / "a")
    b = make_synthetic(3, 5, tmp_path / "b")
    assert (tmp_path / "a" / "annotations.json").read_text() == (tmp_path / "b" / "annotations.json").read_text()
    for i in a.images:
        assert np.array_equal(read_image(a.image_path(i)), read_image(b.image_path(i)))
    c = make_synthetic(3, 6, tmp_path / "c")
    assert (tmp_path / "c" / "annotations.json").read_text() != (tmp_path / "a" / "annotations.json").read_text()


def test_synthetic_single_image_layout(tmp_path):
    m = make_synthetic(1, 0, tmp_path / "s")
    assert len(m.images) == 1 and len(m) == 1 and m.format_tag == "synthetic"
    inst = m.instances[0]
    img = read_image(m.image_path(inst.image_id))
    assert img.shape == (256, 192, 3)
    assert inst.keypoints.num_labelled() == 5
    assert inst.head_size is not None and inst.head_size > 0
    again = DatasetManifest.load(tmp_path / "s" / "annotations.json")
    assert again.image_path(inst.image_id).exists()


def test_synthetic_joint_pixels_have_joint_colours(tmp_path):
    m = make_synthetic(4, 1, tmp_path / "s")
    for inst in m.instances:
        img = read_image(m.image_path(inst.image_id)).astype(int)
        for j, (x, y) in enumerate(inst.keypoints.coords):
            assert np.abs(img[int(y), int(x)] - JOINT_COLORS[j]).max() <= 2
