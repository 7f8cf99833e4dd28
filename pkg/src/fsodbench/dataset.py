"""COCO-style annotation loading, validation and frequency cohorts."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .errors import ParseError, ValidationError

logger = logging.getLogger(__name__)

# (many_min, medium_min): a class with >= many_min instances is Many, with
# >= medium_min is Medium, else Few.
DEFAULT_COHORT_THRESHOLDS = (1000, 100)


class FrequencyCohort(str, enum.Enum):
    MANY = "many"
    MEDIUM = "medium"
    FEW = "few"


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h)
        if not all(isinstance(v, (int, float)) and math.isfinite(v) for v in vals):
            raise ValidationError(f"non-finite box coordinates: {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValidationError(f"box must have positive width and height: {vals}")

    @classmethod
    def from_list(cls, xywh: Sequence[float]) -> "BBox":
        if len(xywh) != 4:
            raise ValidationError(f"bbox must have 4 values, got {len(xywh)}")
        return cls(*(float(v) for v in xywh))

    def to_list(self) -> list:
        return [self.x, self.y, self.w, self.h]

    @property
    def area(self) -> float:
        return self.w * self.h

    def scaled(self, factor: float) -> "BBox":
        return BBox(self.x * factor, self.y * factor, self.w * factor, self.h * factor)


@dataclass(frozen=True)
class Category:
    id: int
    name: str
    synonyms: tuple = ()
    cohort: FrequencyCohort = FrequencyCohort.FEW


@dataclass(frozen=True)
class Annotation:
    id: int
    image_id: int
    category_id: int
    bbox: BBox


@dataclass(frozen=True)
class Dataset:
    """Immutable, indexed view of one annotation file.

    ``images`` maps image id to ``(width, height)`` in pixels.
    """

    images: Mapping[int, tuple]
    categories: tuple
    annotations: tuple
    _cohort_source: str = field(default="thresholds", compare=False)

    @cached_property
    def category_by_id(self) -> dict:
        return {c.id: c for c in self.categories}

    @cached_property
    def category_ids(self) -> list:
        return sorted(self.category_by_id)

    @cached_property
    def annotation_by_id(self) -> dict:
        return {a.id: a for a in self.annotations}

    @cached_property
    def annotations_by_image(self) -> dict:
        out = defaultdict(list)
        for a in self.annotations:
            out[a.image_id].append(a)
        return dict(out)

    @cached_property
    def annotations_by_category(self) -> dict:
        out = {cid: [] for cid in self.category_ids}
        for a in self.annotations:
            out[a.category_id].append(a)
        return out

    @property
    def counts(self) -> dict:
        return class_frequencies(self)

    def cohort_of(self, category_id: int) -> FrequencyCohort:
        return self.category_by_id[category_id].cohort

    @cached_property
    def digest(self) -> str:
        """SHA-256 of the canonical serialization; stable across key order."""
        blob = json.dumps(dataset_to_dict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def class_frequencies(d: Dataset) -> dict:
    counts = {cid: 0 for cid in d.category_ids}
    counts.update(Counter(a.category_id for a in d.annotations))
    return counts


def assign_cohorts(d: Dataset, thresholds=DEFAULT_COHORT_THRESHOLDS) -> Dataset:
    many_min, medium_min = thresholds
    if not (many_min > medium_min > 0):
        raise ValueError(
            f"cohort thresholds must satisfy many_min > medium_min > 0, got {thresholds}"
        )
    counts = class_frequencies(d)

    def cohort(n):
        if n >= many_min:
            return FrequencyCohort.MANY
        if n >= medium_min:
            return FrequencyCohort.MEDIUM
        return FrequencyCohort.FEW

    cats = tuple(replace(c, cohort=cohort(counts[c.id])) for c in d.categories)
    return Dataset(d.images, cats, d.annotations, _cohort_source="thresholds")


def apply_cohort_map(d: Dataset, cohort_map: Mapping[str, str]) -> Dataset:
    """Assign cohorts from a ``{category_name: "many"|"medium"|"few"}`` map."""
    names = {c.name for c in d.categories}
    unknown = sorted(set(cohort_map) - names)
    missing = sorted(names - set(cohort_map))
    if unknown:
        raise ValidationError(f"cohort config names unknown categories: {unknown}", unknown)
    if missing:
        raise ValidationError(f"cohort config is missing categories: {missing}", missing)
    try:
        cats = tuple(
            replace(c, cohort=FrequencyCohort(str(cohort_map[c.name]).lower()))
            for c in d.categories
        )
    except ValueError as e:
        raise ValidationError(f"bad cohort value in config: {e}") from None
    return Dataset(d.images, cats, d.annotations, _cohort_source="config")


def load_cohort_config(path) -> dict:
    data = _read_json(path)
    if not isinstance(data, dict):
        raise ValidationError("cohort config must be a JSON object")
    return data


def _read_json(path):
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(f"{path}: not valid UTF-8 at byte {e.start}", e.start) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        offset = len(text[: e.pos].encode("utf-8"))
        raise ParseError(f"{path}: malformed JSON at byte {offset}: {e.msg}", offset) from None


def dataset_from_dict(
    data: Mapping,
    cohort_config: Optional[Mapping[str, str]] = None,
    thresholds=DEFAULT_COHORT_THRESHOLDS,
) -> Dataset:
    for key in ("images", "annotations", "categories"):
        if not isinstance(data.get(key), list):
            raise ValidationError(f"missing or non-list '{key}' array")

    images = {}
    for img in data["images"]:
        iid = int(img["id"])
        if iid in images:
            raise ValidationError(f"duplicate image id {iid}", [iid])
        images[iid] = (float(img["width"]), float(img["height"]))

    cats = []
    embedded = {}
    seen_cats = set()
    for c in data["categories"]:
        cid = int(c["id"])
        name = str(c.get("name", ""))
        if cid in seen_cats:
            raise ValidationError(f"duplicate category id {cid}", [cid])
        if not name:
            raise ValidationError(f"category {cid} has an empty name", [cid])
        seen_cats.add(cid)
        if "cohort" in c:
            embedded[name] = c["cohort"]
        cats.append(Category(cid, name, tuple(c.get("synonyms", ()))))
    if len({c.name for c in cats}) != len(cats):
        raise ValidationError("category names must be unique")

    anns = []
    dangling = []
    crowd = []
    seen_anns = set()
    for a in data["annotations"]:
        aid = int(a["id"])
        if aid in seen_anns:
            raise ValidationError(f"duplicate annotation id {aid}", [aid])
        seen_anns.add(aid)
        if a.get("iscrowd") or a.get("ignore"):
            crowd.append(aid)
            continue
        iid, cid = int(a["image_id"]), int(a["category_id"])
        if iid not in images or cid not in seen_cats:
            dangling.append(aid)
            continue
        anns.append(Annotation(aid, iid, cid, _clamped_box(a["bbox"], images[iid], aid)))
    if crowd:
        raise ValidationError(f"crowd/ignore annotations are not supported: ids {crowd}", crowd)
    if dangling:
        raise ValidationError(
            f"annotations reference missing images or categories: ids {dangling}", dangling
        )

    d = Dataset(images, tuple(cats), tuple(anns))
    if cohort_config is not None:
        return apply_cohort_map(d, cohort_config)
    if embedded and len(embedded) == len(cats):
        return apply_cohort_map(d, embedded)
    return assign_cohorts(d, thresholds)


def _clamped_box(xywh, size, aid) -> BBox:
    x, y, w, h = (float(v) for v in xywh)
    width, height = size
    x0, y0 = max(x, 0.0), max(y, 0.0)
    x1, y1 = min(x + w, width), min(y + h, height)
    if (x0, y0, x1, y1) != (x, y, x + w, y + h):
        logger.warning("annotation %d: box %s clamped to image bounds %s", aid, xywh, size)
    try:
        return BBox(x0, y0, x1 - x0, y1 - y0)
    except ValidationError as e:
        raise ValidationError(f"annotation {aid}: {e}", [aid]) from None


def load_dataset(
    path,
    cohort_config=None,
    thresholds=DEFAULT_COHORT_THRESHOLDS,
) -> Dataset:
    """Load and index a COCO-style annotation file.

    ``cohort_config`` may be a mapping or a path to a JSON cohort file. When
    absent, a complete per-category ``"cohort"`` field in the file is used,
    otherwise cohorts come from count thresholds.
    """
    if cohort_config is not None and not isinstance(cohort_config, Mapping):
        cohort_config = load_cohort_config(cohort_config)
    data = _read_json(path)
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: top level must be a JSON object")
    return dataset_from_dict(data, cohort_config, thresholds)


def dataset_to_dict(d: Dataset) -> dict:
    return {
        "images": [
            {"id": iid, "width": w, "height": h} for iid, (w, h) in sorted(d.images.items())
        ],
        "categories": [
            {
                "id": c.id,
                "name": c.name,
                "synonyms": list(c.synonyms),
                "cohort": c.cohort.value,
            }
            for c in sorted(d.categories, key=lambda c: c.id)
        ],
        "annotations": [
            {
                "id": a.id,
                "image_id": a.image_id,
                "category_id": a.category_id,
                "bbox": a.bbox.to_list(),
                "area": a.bbox.area,
                "iscrowd": 0,
            }
            for a in sorted(d.annotations, key=lambda a: a.id)
        ],
    }


def save_dataset(d: Dataset, path) -> None:
    Path(path).write_text(json.dumps(dataset_to_dict(d), indent=1))
