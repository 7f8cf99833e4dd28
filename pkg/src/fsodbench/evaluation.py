"""COCO-style box AP with per-class and frequency-cohort aggregation."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .dataset import Annotation, BBox, Dataset
from .errors import ParseError, ValidationError

COHORT_KEYS = ("all", "many", "medium", "few")


@dataclass(frozen=True)
class Detection:
    image_id: int
    category_id: int
    bbox: BBox
    score: float

    def __post_init__(self):
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValidationError(f"detection score must lie in [0, 1], got {self.score}")

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "category_id": self.category_id,
            "bbox": self.bbox.to_list(),
            "score": self.score,
        }


@dataclass
class EvalConfig:
    iou_thresholds: Sequence[float] = field(
        default_factory=lambda: np.linspace(0.5, 0.95, 10).tolist()
    )
    max_dets_per_image: int = 100
    recall_points: int = 101
    federated_image_lists: Optional[Mapping[int, set]] = None

    def __post_init__(self):
        t = list(self.iou_thresholds)
        if not t or any(not (0.0 < x <= 1.0) for x in t):
            raise ValueError("IoU thresholds must lie in (0, 1]")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("IoU thresholds must be strictly increasing")
        if self.recall_points < 2:
            raise ValueError("recall_points must be >= 2")
        if self.max_dets_per_image < 1:
            raise ValueError("max_dets_per_image must be >= 1")

    @property
    def recall_grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.recall_points)


@dataclass
class EvalResult:
    per_class_ap: dict
    cohort_ap: dict
    # per-class AP at every IoU threshold, rows follow cfg.iou_thresholds
    per_threshold_ap: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "per_class_ap": {str(c): ap for c, ap in sorted(self.per_class_ap.items())},
            "cohort_ap": dict(self.cohort_ap),
        }


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.w * a.h + b.w * b.h - inter)


def _xywh(boxes: Sequence[BBox]) -> np.ndarray:
    return np.array([[b.x, b.y, b.w, b.h] for b in boxes], dtype=np.float64).reshape(-1, 4)


def iou_matrix(dets, gts) -> np.ndarray:
    """Pairwise IoU; accepts BBox sequences or ``(N, 4)`` xywh arrays."""
    d = dets if isinstance(dets, np.ndarray) else _xywh(dets)
    g = gts if isinstance(gts, np.ndarray) else _xywh(gts)
    if len(d) == 0 or len(g) == 0:
        return np.zeros((len(d), len(g)))
    iw = np.minimum(d[:, None, 0] + d[:, None, 2], g[None, :, 0] + g[None, :, 2]) - np.maximum(
        d[:, None, 0], g[None, :, 0]
    )
    ih = np.minimum(d[:, None, 1] + d[:, None, 3], g[None, :, 1] + g[None, :, 3]) - np.maximum(
        d[:, None, 1], g[None, :, 1]
    )
    inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
    union = (d[:, 2] * d[:, 3])[:, None] + (g[:, 2] * g[:, 3])[None, :] - inter
    return inter / union


def _score_order(dets: Sequence[Detection]) -> list:
    # stable: equal scores keep input order
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def _match_all_thresholds(ious: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Greedy matching for every threshold at once.

    ``ious`` rows must already be in descending score order. Returns a
    ``(T, D)`` boolean TP matrix.
    """
    n_t = len(thresholds)
    n_d, n_g = ious.shape
    tp = np.zeros((n_t, n_d), dtype=bool)
    if n_g == 0:
        return tp
    matched = np.zeros((n_t, n_g), dtype=bool)
    rows = np.arange(n_t)
    reach = ious[:, None, :] >= thresholds[None, :, None]
    for d in np.flatnonzero(reach.any(axis=(1, 2))):
        ok = reach[d] & ~matched
        cand = np.where(ok, ious[d][None, :], -1.0)
        g = cand.argmax(axis=1)
        hit = ok[rows, g]
        tp[hit, d] = True
        matched[rows[hit], g[hit]] = True
    return tp


def match_detections(
    dets: Sequence[Detection], gts: Sequence[Annotation], iou_thresh: float
) -> list:
    """TP/FP label per detection (in input order) for one image and class.

    Detections are visited in descending score, ties in input order; each
    claims the unmatched ground truth of highest IoU at or above the
    threshold, the earliest ground truth on an IoU tie.
    """
    order = _score_order(dets)
    ious = iou_matrix([dets[i].bbox for i in order], [g.bbox for g in gts])
    tp_sorted = _match_all_thresholds(ious, np.array([iou_thresh]))[0]
    labels = [False] * len(dets)
    for rank, i in enumerate(order):
        labels[i] = bool(tp_sorted[rank])
    return labels


def average_precision(tp, n_gt: int, recall_points: int = 101) -> Optional[float]:
    """Interpolated AP of ranked TP/FP labels (best first).

    Returns ``None`` when there is no ground truth.
    """
    if n_gt == 0:
        return None
    return float(_ap_rows(np.asarray(tp, dtype=bool)[None, :], n_gt, np.linspace(0, 1, recall_points))[0])


def _ap_rows(tp: np.ndarray, n_gt: int, grid: np.ndarray) -> np.ndarray:
    n_t, n_d = tp.shape
    if n_d == 0:
        return np.zeros(n_t)
    tps = np.cumsum(tp, axis=1, dtype=np.float64)
    fps = np.cumsum(~tp, axis=1, dtype=np.float64)
    recall = tps / n_gt
    precision = tps / (tps + fps)
    envelope = np.maximum.accumulate(precision[:, ::-1], axis=1)[:, ::-1]
    # index of the first recall >= r, per threshold row and grid point
    first = (recall[:, :, None] < grid[None, None, :]).sum(axis=1)
    padded = np.concatenate([envelope, np.zeros((n_t, 1))], axis=1)
    return np.take_along_axis(padded, first, axis=1).mean(axis=1)


def check_predictions(d: Dataset, preds: Iterable[Detection]) -> None:
    offenders = [
        i
        for i, p in enumerate(preds)
        if p.image_id not in d.images or p.category_id not in d.category_by_id
    ]
    if offenders:
        raise ValidationError(
            f"predictions reference unknown images or categories at records {offenders[:20]}",
            offenders,
        )


def _cap_per_image(preds: Sequence[Detection], max_dets: int) -> list:
    by_image = defaultdict(list)
    for i, p in enumerate(preds):
        by_image[p.image_id].append(i)
    keep = []
    for idxs in by_image.values():
        idxs.sort(key=lambda i: -preds[i].score)
        keep.extend(idxs[:max_dets])
    keep.sort()
    return [preds[i] for i in keep]


def evaluate(
    d: Dataset,
    preds: Sequence[Detection],
    cfg: Optional[EvalConfig] = None,
    restrict: Optional[Iterable[int]] = None,
) -> EvalResult:
    """Score ``preds`` against ``d``.

    ``restrict`` limits scoring to the given image ids. With
    ``cfg.federated_image_lists`` a class is only scored on its listed images;
    ground truth and predictions elsewhere are ignored for that class.
    """
    cfg = cfg or EvalConfig()
    preds = list(preds)
    check_predictions(d, preds)
    preds = _cap_per_image(preds, cfg.max_dets_per_image)
    allowed = set(restrict) if restrict is not None else None
    thresholds = np.asarray(cfg.iou_thresholds, dtype=np.float64)
    grid = cfg.recall_grid

    # input position is the global tie-break for equal scores
    boxes = _xywh([p.bbox for p in preds])
    scores_all = np.array([p.score for p in preds], dtype=np.float64)
    dets_by_class = defaultdict(lambda: defaultdict(list))
    for pos, p in enumerate(preds):
        dets_by_class[p.category_id][p.image_id].append(pos)

    per_class, per_threshold = {}, {}
    for c in d.category_ids:
        images_ok = allowed
        fed = cfg.federated_image_lists
        if fed is not None:
            listed = set(fed.get(c, ()))
            images_ok = listed if images_ok is None else images_ok & listed

        gts_by_image = defaultdict(list)
        for a in d.annotations_by_category[c]:
            if images_ok is None or a.image_id in images_ok:
                gts_by_image[a.image_id].append(a.bbox)
        n_gt = sum(len(v) for v in gts_by_image.values())
        if n_gt == 0:
            continue

        positions, tps = [], []
        for img, pos in dets_by_class[c].items():
            if images_ok is not None and img not in images_ok:
                continue
            pos = np.asarray(pos)
            pos = pos[np.lexsort((pos, -scores_all[pos]))]
            ious = iou_matrix(boxes[pos], _xywh(gts_by_image.get(img, [])))
            tps.append(_match_all_thresholds(ious, thresholds))
            positions.append(pos)

        if tps:
            tp = np.concatenate(tps, axis=1)
            pos = np.concatenate(positions)
            tp = tp[:, np.lexsort((pos, -scores_all[pos]))]
        else:
            tp = np.zeros((len(thresholds), 0), dtype=bool)
        ap_t = _ap_rows(tp, n_gt, grid)
        per_threshold[c] = ap_t.tolist()
        per_class[c] = float(ap_t.mean())

    return EvalResult(per_class, cohort_means(d, per_class), per_threshold)


def cohort_means(d: Dataset, per_class: Mapping[int, float]) -> dict:
    groups = {key: [] for key in COHORT_KEYS}
    for c, ap in per_class.items():
        if ap is None:
            continue
        groups["all"].append(ap)
        groups[d.cohort_of(c).value].append(ap)
    return {k: (float(np.mean(v)) if v else None) for k, v in groups.items()}


def detections_from_records(records) -> list:
    """Parse COCO results-format records, naming the first bad record."""
    if not isinstance(records, list):
        raise ValidationError("predictions must be a JSON array")
    out = []
    for i, r in enumerate(records):
        try:
            if not isinstance(r, dict):
                raise ValidationError("record is not an object")
            missing = [k for k in ("image_id", "category_id", "bbox", "score") if k not in r]
            if missing:
                raise ValidationError(f"missing fields {missing}")
            for key in ("image_id", "category_id"):
                if isinstance(r[key], bool) or not isinstance(r[key], int):
                    raise ValidationError(f"'{key}' must be an integer")
            if not isinstance(r["bbox"], list):
                raise ValidationError("'bbox' must be a list [x, y, w, h]")
            if isinstance(r["score"], bool) or not isinstance(r["score"], (int, float)):
                raise ValidationError("'score' must be a number")
            out.append(
                Detection(r["image_id"], r["category_id"], BBox.from_list(r["bbox"]), float(r["score"]))
            )
        except (ValidationError, TypeError, ValueError) as e:
            raise ValidationError(f"prediction record {i}: {e}", [i]) from None
    return out


def load_predictions(path) -> list:
    text = Path(path).read_text()
    try:
        records = json.loads(text)
    except json.JSONDecodeError as e:
        offset = len(text[: e.pos].encode("utf-8"))
        raise ParseError(f"{path}: malformed JSON at byte {offset}: {e.msg}", offset) from None
    return detections_from_records(records)


def format_table(result: EvalResult, label: str = "AP") -> str:
    """Aligned All/Many/Med/Few table."""
    cols = [("All", "all"), ("Many", "many"), ("Med", "medium"), ("Few", "few")]
    width = max(len(label), 6)
    head = f"{'':<{width}}" + "".join(f"{name:>8}" for name, _ in cols)

    def fmt(v):
        return f"{'-':>8}" if v is None else f"{v:>8.3f}"

    row = f"{label:<{width}}" + "".join(fmt(result.cohort_ap.get(key)) for _, key in cols)
    return head + "\n" + row
