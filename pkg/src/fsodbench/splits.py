"""K-shot split sampling, test-subset selection and best-split composition.

Sampling loop (one split):

1. Every class ``c`` starts with a budget of ``K`` and a pool of the images
   that hold at least one ``c`` instance, ordered by image id.
2. Classes are visited in ascending id, one draw per class per pass. A draw
   removes a uniformly chosen image from the class pool (``randbelow(len(pool))``
   on a SplitMix64 stream). If the image's ``c`` instance count fits the
   remaining budget, all of them are credited and the image joins the split;
   otherwise the image is skipped.
3. Passes repeat while some class has budget left and a non-empty pool.
4. A class that still has budget although it owns at least ``K`` instances
   (every remaining image would overshoot) is topped up from one of its
   skipped images, chosen with one more draw, crediting that image's
   lowest-id instances until the budget is met.
5. A class with fewer than ``K`` instances keeps all of them and records its
   deficit in ``shortfall``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .dataset import Dataset, FrequencyCohort
from .errors import ParseError, ValidationError
from .rng import ALGORITHM, SplitMix64

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitSpec:
    k: int
    seed: int
    image_ids: tuple
    credited: Mapping[int, tuple]
    shortfall: Mapping[int, int] = field(default_factory=dict)
    dataset_digest: str = ""
    rng: str = ALGORITHM

    def credited_count(self, category_id: int) -> int:
        return len(self.credited.get(category_id, ()))


def sample_kshot_split(d: Dataset, k: int, seed: int) -> SplitSpec:
    if not isinstance(k, int) or k < 1:
        raise ValueError(f"K must be a positive integer, got {k!r}")
    rng = SplitMix64(seed)

    class_ids = d.category_ids
    per_image = {c: {} for c in class_ids}
    for a in d.annotations:
        per_image[a.category_id].setdefault(a.image_id, []).append(a.id)
    for c in class_ids:
        for ids in per_image[c].values():
            ids.sort()

    pools = {c: sorted(per_image[c]) for c in class_ids}
    skipped = {c: [] for c in class_ids}
    credited = {c: [] for c in class_ids}
    chosen_images = set()

    def remaining(c):
        return k - len(credited[c])

    active = True
    while active:
        active = False
        for c in class_ids:
            if remaining(c) == 0 or not pools[c]:
                continue
            active = True
            img = pools[c].pop(rng.randbelow(len(pools[c])))
            ann_ids = per_image[c][img]
            if len(ann_ids) <= remaining(c):
                credited[c].extend(ann_ids)
                chosen_images.add(img)
            else:
                skipped[c].append(img)

    shortfall = {}
    for c in class_ids:
        need = remaining(c)
        if need == 0:
            continue
        total = sum(len(v) for v in per_image[c].values())
        if total >= k:
            img = skipped[c][rng.randbelow(len(skipped[c]))]
            credited[c].extend(per_image[c][img][:need])
            chosen_images.add(img)
        else:
            shortfall[c] = need
            logger.warning(
                "class %d has only %d instances; crediting all of them for K=%d", c, total, k
            )

    return SplitSpec(
        k=k,
        seed=seed,
        image_ids=tuple(sorted(chosen_images)),
        credited={c: tuple(sorted(v)) for c, v in credited.items()},
        shortfall=shortfall,
        dataset_digest=d.digest,
    )


def validate_split(split: SplitSpec, d: Optional[Dataset] = None) -> None:
    """Check the exact-K and containment invariants; raise ValidationError."""
    seen = set()
    for c, ids in split.credited.items():
        dup = seen.intersection(ids)
        if dup or len(set(ids)) != len(ids):
            raise ValidationError(f"annotation credited twice in class {c}", sorted(dup))
        seen.update(ids)
        deficit = split.shortfall.get(c, 0)
        if len(ids) + deficit != split.k or (deficit and len(ids) >= split.k):
            raise ValidationError(
                f"class {c}: {len(ids)} credited annotations for K={split.k} "
                f"with shortfall {deficit}",
                [c],
            )
    if d is None:
        return
    if split.dataset_digest and split.dataset_digest != d.digest:
        raise ValidationError("split was generated from a different dataset")
    images = set(split.image_ids)
    bad = [
        aid
        for aid in sorted(seen)
        if aid not in d.annotation_by_id or d.annotation_by_id[aid].image_id not in images
    ]
    if bad:
        raise ValidationError(f"credited annotations outside the split images: {bad}", bad)


def build_test_subset(val: Dataset) -> set:
    keep = {FrequencyCohort.FEW, FrequencyCohort.MEDIUM}
    return {a.image_id for a in val.annotations if val.cohort_of(a.category_id) in keep}


def best_split_sources(candidates: Sequence) -> dict:
    """Per class, the index of the candidate with the highest AP for it."""
    sources = {}
    for c in sorted({c for split, _ in candidates for c in split.credited}):
        best_i, best_ap = 0, -math.inf
        for i, (_, aps) in enumerate(candidates):
            ap = aps.get(c)
            if ap is not None and ap > best_ap:
                best_i, best_ap = i, ap
        sources[c] = best_i
    return sources


def best_split(candidates: Sequence, dataset: Optional[Dataset] = None) -> SplitSpec:
    """Compose a split taking each class from the candidate that scored it best.

    ``candidates`` is a sequence of ``(SplitSpec, {category_id: AP})`` pairs.
    Ties go to the earliest candidate; a class no candidate scored is taken
    from the first. With ``dataset`` the image list is exactly the images of
    the credited annotations, otherwise it is the union of the image lists of
    every candidate that contributed a class.
    """
    if not candidates:
        raise ValueError("best_split needs at least one candidate")
    first = candidates[0][0]
    for split, aps in candidates:
        if split.k != first.k or split.dataset_digest != first.dataset_digest:
            raise ValueError("candidates must share K and source dataset")
        for c, ap in aps.items():
            if ap is not None and not (0.0 <= ap <= 1.0):
                raise ValueError(f"per-class AP for class {c} outside [0, 1]: {ap}")
    if len(candidates) == 1:
        return first

    credited, shortfall, contributors = {}, {}, set()
    for c, best_i in best_split_sources(candidates).items():
        src = candidates[best_i][0]
        credited[c] = tuple(src.credited.get(c, ()))
        if c in src.shortfall:
            shortfall[c] = src.shortfall[c]
        contributors.add(best_i)

    if dataset is not None:
        images = {dataset.annotation_by_id[a].image_id for ids in credited.values() for a in ids}
    else:
        images = {i for idx in contributors for i in candidates[idx][0].image_ids}
    return SplitSpec(
        k=first.k,
        seed=first.seed,
        image_ids=tuple(sorted(images)),
        credited=credited,
        shortfall=shortfall,
        dataset_digest=first.dataset_digest,
        rng=first.rng,
    )


def split_to_dict(split: SplitSpec) -> dict:
    return {
        "k": split.k,
        "seed": split.seed,
        "rng": split.rng,
        "dataset_digest": split.dataset_digest,
        "images": list(split.image_ids),
        "credited": {str(c): list(split.credited[c]) for c in sorted(split.credited)},
        "shortfall": {str(c): split.shortfall[c] for c in sorted(split.shortfall)},
    }


def dumps_split(split: SplitSpec) -> str:
    return json.dumps(split_to_dict(split), indent=2) + "\n"


def write_split(split: SplitSpec, path) -> None:
    Path(path).write_text(dumps_split(split))


def split_from_dict(data) -> SplitSpec:
    try:
        if not isinstance(data, dict):
            raise TypeError("top level must be an object")
        k, seed = data["k"], data["seed"]
        if not isinstance(k, int) or not isinstance(seed, int) or k < 1:
            raise TypeError("'k' must be a positive int and 'seed' an int")
        split = SplitSpec(
            k=k,
            seed=seed,
            image_ids=tuple(int(i) for i in data["images"]),
            credited={int(c): tuple(int(a) for a in ids) for c, ids in data["credited"].items()},
            shortfall={int(c): int(n) for c, n in data.get("shortfall", {}).items()},
            dataset_digest=str(data.get("dataset_digest", "")),
            rng=str(data["rng"]),
        )
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise ParseError(f"split file schema violation: {e!r}") from None
    validate_split(split)
    return split


def read_split(path) -> SplitSpec:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: malformed JSON at offset {e.pos}: {e.msg}", e.pos) from None
    return split_from_dict(data)
