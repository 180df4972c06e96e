"""Annotation, detection and prediction files.

Annotations follow the COCO keypoint schema. A manifest written by
:meth:`DatasetManifest.save` is itself a COCO file; the skeleton and
format tag ride along under ``info`` so a reload is lossless.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import cv2
import numpy as np

from .codec import PoseResult
from .exceptions import InvalidInputError, SchemaError
from .geometry import BoundingBox, KeypointSet
from .skeletons import Skeleton, get_skeleton, preset_for_joint_count

log = logging.getLogger(__name__)

FORMAT_TAGS = ("coco17", "mpii16", "synthetic")
PERSON_CATEGORY = 1


@dataclass(frozen=True)
class ImageInfo:
    id: int
    file_name: str
    width: int
    height: int


@dataclass(frozen=True)
class PoseInstance:
    image_id: int
    bbox: BoundingBox
    keypoints: KeypointSet
    area: float
    iscrowd: bool = False
    id: int = 0
    head_size: Optional[float] = None


@dataclass
class DatasetManifest:
    images: Dict[int, ImageInfo]
    instances: List[PoseInstance]
    skeleton: Skeleton
    format_tag: str = "coco17"
    image_root: Optional[str] = None

    def __post_init__(self):
        if self.format_tag not in FORMAT_TAGS:
            raise SchemaError(f"format_tag {self.format_tag!r} not in {FORMAT_TAGS}")
        J = self.skeleton.num_joints
        for inst in self.instances:
            if inst.image_id not in self.images:
                raise SchemaError(f"instance {inst.id} references unknown image {inst.image_id}")
            if inst.keypoints.num_joints != J:
                raise SchemaError(f"instance {inst.id} has {inst.keypoints.num_joints} joints, "
                                  f"skeleton {self.skeleton.name} has {J}")

    def __len__(self):
        return len(self.instances)

    def by_image(self) -> Dict[int, List[PoseInstance]]:
        out: Dict[int, List[PoseInstance]] = {i: [] for i in self.images}
        for inst in self.instances:
            out[inst.image_id].append(inst)
        return out

    def subset(self, image_ids: Iterable[int]) -> "DatasetManifest":
        """Restrict to the given image ids (e.g. a shipped split list)."""
        keep = set(int(i) for i in image_ids)
        missing = sorted(keep - set(self.images))
        if missing:
            raise SchemaError(f"subset lists unknown image ids {missing[:10]}")
        return DatasetManifest({i: im for i, im in self.images.items() if i in keep},
                               [x for x in self.instances if x.image_id in keep],
                               self.skeleton, self.format_tag, self.image_root)

    def image_path(self, image_id: int) -> Path:
        name = self.images[image_id].file_name
        return Path(self.image_root) / name if self.image_root else Path(name)

    def to_coco(self) -> dict:
        sk = self.skeleton
        return {
            "info": {"format_tag": self.format_tag, "skeleton": sk.to_dict()},
            "images": [{"id": im.id, "file_name": im.file_name, "width": im.width, "height": im.height}
                       for im in self.images.values()],
            "annotations": [_instance_to_coco(x) for x in self.instances],
            "categories": [{"id": PERSON_CATEGORY, "name": "person", "supercategory": "person",
                            "keypoints": list(sk.joints),
                            "skeleton": [[a + 1, b + 1] for a, b in sk.links]}],
        }

    def save(self, path) -> None:
        """Write COCO JSON; the image root is stored relative to the file when possible."""
        path = Path(path)
        data = self.to_coco()
        if self.image_root:
            root = Path(self.image_root).resolve()
            try:
                data["info"]["image_dir"] = str(root.relative_to(path.parent.resolve()))
            except ValueError:
                data["info"]["image_dir"] = str(root)
        path.write_text(json.dumps(data))

    @classmethod
    def load(cls, path, image_root: Optional[str] = None) -> "DatasetManifest":
        return load_coco_keypoints(path, image_root)


def _instance_to_coco(x: PoseInstance) -> dict:
    rec = {
        "id": x.id,
        "image_id": x.image_id,
        "category_id": PERSON_CATEGORY,
        "keypoints": x.keypoints.to_coco(),
        "num_keypoints": x.keypoints.num_labelled(),
        "bbox": x.bbox.xywh(),
        "area": x.area,
        "iscrowd": int(x.iscrowd),
    }
    if x.head_size is not None:
        rec["head_size"] = x.head_size
    return rec


def _require_keys(rec, keys, where):
    if not isinstance(rec, dict):
        raise SchemaError(f"{where}: expected an object, got {type(rec).__name__}")
    missing = [k for k in keys if k not in rec]
    if missing:
        raise SchemaError(f"{where}: missing field(s) {missing}")


def _parse_annotation(rec, i, J) -> PoseInstance:
    where = f"annotations[{i}] (id={rec.get('id') if isinstance(rec, dict) else '?'})"
    _require_keys(rec, ("id", "image_id", "keypoints", "bbox"), where)
    kp = rec["keypoints"]
    if not isinstance(kp, list) or len(kp) != 3 * J:
        raise SchemaError(f"{where}: keypoints must list {3 * J} numbers")
    try:
        kps = KeypointSet.from_coco(kp)
        bbox = BoundingBox(*[float(v) for v in rec["bbox"]])
        if np.any(np.abs(np.asarray(kp[2::3], dtype=np.float64) - kps.vis) > 0):
            raise InvalidInputError("visibility flags must be integers")
    except (InvalidInputError, TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: {exc}") from exc
    area = float(rec.get("area", bbox.area))
    if area <= 0:
        raise SchemaError(f"{where}: area must be positive")
    hs = rec.get("head_size")
    return PoseInstance(int(rec["image_id"]), bbox, kps, area, bool(rec.get("iscrowd", 0)),
                        int(rec["id"]), None if hs is None else float(hs))


def load_coco_keypoints(path, image_root: Optional[str] = None) -> DatasetManifest:
    """Parse a COCO keypoint annotation file into a manifest."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    _require_keys(data, ("images", "annotations"), str(path))
    info = data.get("info") or {}
    skeleton = None
    if isinstance(info, dict) and isinstance(info.get("skeleton"), dict):
        skeleton = Skeleton.from_dict(info["skeleton"])
    cats = data.get("categories") or []
    person = next((c for c in cats if isinstance(c, dict) and c.get("id") == PERSON_CATEGORY), None)
    if skeleton is None:
        n = len(person["keypoints"]) if person and "keypoints" in person else 17
        skeleton = get_skeleton(preset_for_joint_count(n))
    if image_root is None and isinstance(info, dict) and info.get("image_dir"):
        image_root = str(Path(path).parent / info["image_dir"])
    tag = info.get("format_tag") if isinstance(info, dict) else None
    if tag is None:
        tag = "mpii16" if skeleton.name == "mpii16" else "coco17"

    images = {}
    for i, rec in enumerate(data["images"]):
        where = f"images[{i}] (id={rec.get('id') if isinstance(rec, dict) else '?'})"
        _require_keys(rec, ("id", "file_name", "width", "height"), where)
        images[int(rec["id"])] = ImageInfo(int(rec["id"]), str(rec["file_name"]),
                                           int(rec["width"]), int(rec["height"]))
    instances = []
    for i, rec in enumerate(data["annotations"]):
        if isinstance(rec, dict) and rec.get("category_id", PERSON_CATEGORY) != PERSON_CATEGORY:
            continue
        inst = _parse_annotation(rec, i, skeleton.num_joints)
        if inst.image_id not in images:
            raise SchemaError(f"annotations[{i}] (id={inst.id}): unknown image_id {inst.image_id}")
        instances.append(inst)
    return DatasetManifest(images, instances, skeleton, tag, image_root)


# -- detections --------------------------------------------------------------

@dataclass
class DetectionFile:
    boxes: Dict[int, List[BoundingBox]] = field(default_factory=dict)
    skipped: int = 0

    def for_image(self, image_id: int) -> List[BoundingBox]:
        return self.boxes.get(image_id, [])

    def __len__(self):
        return sum(len(v) for v in self.boxes.values())


def load_detections(path, top_n: int = 100, min_score: float = 0.0,
                    category_id: int = PERSON_CATEGORY) -> DetectionFile:
    """Person boxes from a COCO results-format detection file.

    Per image, the ``top_n`` highest-scoring boxes of *all* categories are
    kept first; of those only person boxes with ``score >= min_score``
    survive. Malformed entries are skipped and counted.
    """
    data = json.loads(Path(path).read_text())
    if not isinstance(data, list):
        raise SchemaError(f"{path}: detection file must be a JSON list")
    per_image: Dict[int, list] = {}
    skipped = 0
    for rec in data:
        try:
            img = int(rec["image_id"])
            cat = int(rec["category_id"])
            score = float(rec["score"])
            box = BoundingBox(*[float(v) for v in rec["bbox"]], score=score)
        except (KeyError, TypeError, ValueError, InvalidInputError):
            skipped += 1
            continue
        per_image.setdefault(img, []).append((score, cat, box))
    out = DetectionFile(skipped=skipped)
    for img, dets in per_image.items():
        dets.sort(key=lambda d: -d[0])  # stable: ties keep file order
        kept = [box for score, cat, box in dets[:top_n] if cat == category_id and score >= min_score]
        out.boxes[img] = kept
    if skipped:
        log.warning("%s: skipped %d malformed detection entries", path, skipped)
    return out


def gt_boxes(manifest: DatasetManifest) -> DetectionFile:
    """Ground-truth boxes (score 1) of every non-crowd instance."""
    out = DetectionFile({i: [] for i in manifest.images})
    for inst in manifest.instances:
        if not inst.iscrowd:
            out.boxes[inst.image_id].append(inst.bbox)
    return out


# -- predictions -------------------------------------------------------------

def prediction_records(results: Sequence[PoseResult], category_id: int = PERSON_CATEGORY) -> List[dict]:
    recs = []
    for r in results:
        if r.image_id is None:
            raise InvalidInputError("prediction without image_id")
        kp = []
        for (x, y), s in zip(r.coords, r.joint_scores):
            kp.extend([float(x), float(y), float(s)])
        recs.append({"image_id": int(r.image_id), "category_id": category_id,
                     "keypoints": kp, "score": float(r.pose_score)})
    recs.sort(key=lambda d: (d["image_id"], -d["score"]))
    return recs


def write_predictions(results: Sequence[PoseResult], path) -> None:
    """COCO results-format keypoint JSON, sorted by (image_id, -score)."""
    Path(path).write_text(json.dumps(prediction_records(results)))


def read_predictions(path, num_joints: Optional[int] = None) -> Dict[int, List[PoseResult]]:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, list):
        raise SchemaError(f"{path}: predictions must be a JSON list")
    out: Dict[int, List[PoseResult]] = {}
    for i, rec in enumerate(data):
        where = f"{path}: entry {i}"
        _require_keys(rec, ("image_id", "keypoints", "score"), where)
        kp = np.asarray(rec["keypoints"], dtype=np.float64)
        if kp.size % 3 or (num_joints is not None and kp.size != 3 * num_joints):
            raise SchemaError(f"{where}: keypoints length {kp.size} is not 3 x joints")
        kp = kp.reshape(-1, 3)
        img = int(rec["image_id"])
        out.setdefault(img, []).append(PoseResult(kp[:, :2], kp[:, 2], float(rec["score"]), img))
    return out


# -- images ------------------------------------------------------------------

def read_image(path) -> Optional[np.ndarray]:
    """RGB uint8 image, or ``None`` when the file is missing or unreadable."""
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        return None
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def write_image(path, rgb: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), cv2.cvtColor(rgb, cv2.COLOR_RGB2BGR)):
        raise OSError(f"could not write {path}")


class ImageCache:
    """Small decode cache keyed by image id; the synthetic sets fit entirely."""

    def __init__(self, manifest: DatasetManifest, max_items: int = 4096):
        self.manifest = manifest
        self.max_items = max_items
        self._items: Dict[int, Optional[np.ndarray]] = {}

    def get(self, image_id: int) -> Optional[np.ndarray]:
        if image_id not in self._items:
            if len(self._items) >= self.max_items:
                self._items.pop(next(iter(self._items)))
            self._items[image_id] = read_image(self.manifest.image_path(image_id))
        return self._items[image_id]
