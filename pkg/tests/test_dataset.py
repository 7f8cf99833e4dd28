import json
import logging
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsodbench.dataset import (
    BBox,
    FrequencyCohort,
    assign_cohorts,
    class_frequencies,
    dataset_from_dict,
    dataset_to_dict,
    load_dataset,
    save_dataset,
)
from fsodbench.errors import ParseError, ValidationError
from fsodbench.prompts import NUIMAGES_SYNONYMS

from synth import random_coco


def test_bbox_rejects_degenerate():
    with pytest.raises(ValidationError):
        BBox(0, 0, 0, 5)
    with pytest.raises(ValidationError):
        BBox(float("nan"), 0, 1, 1)


def test_load_eighteen_classes(tmp_path):
    cats = [{"id": i + 1, "name": n} for i, n in enumerate(NUIMAGES_SYNONYMS)]
    data = {"images": [{"id": 1, "width": 1600, "height": 900}], "categories": cats, "annotations": []}
    p = tmp_path / "nuimages.json"
    p.write_text(json.dumps(data))
    d = load_dataset(p)
    assert len(d.categories) == 18
    assert set(class_frequencies(d).values()) == {0}


def test_empty_annotations_give_zero_counts(small_coco):
    small_coco["annotations"] = []
    d = dataset_from_dict(small_coco)
    assert class_frequencies(d) == {10: 0, 20: 0, 30: 0}
    assert all(c.cohort is FrequencyCohort.FEW for c in d.categories)


def test_dangling_reference_names_annotation(small_coco):
    small_coco["annotations"].append(
        {"id": 99, "image_id": 777, "category_id": 10, "bbox": [0, 0, 1, 1]}
    )
    with pytest.raises(ValidationError) as exc:
        dataset_from_dict(small_coco)
    assert exc.value.offenders == [99]
    assert "99" in str(exc.value)


def test_malformed_json_reports_byte_offset(tmp_path):
    p = tmp_path / "bad.json"
    p.write_bytes('{"images": [], "é": ,}'.encode())
    with pytest.raises(ParseError) as exc:
        load_dataset(p)
    # the offending comma sits after a two-byte character
    assert exc.value.offset == len('{"images": [], "é": '.encode())


def test_crowd_annotations_rejected(small_coco):
    small_coco["annotations"][0]["iscrowd"] = 1
    with pytest.raises(ValidationError):
        dataset_from_dict(small_coco)


def test_out_of_bounds_box_is_clamped(small_coco, caplog):
    small_coco["annotations"][0]["bbox"] = [-2, 90, 10, 20]
    with caplog.at_level(logging.WARNING):
        d = dataset_from_dict(small_coco)
    assert d.annotation_by_id[1].bbox == BBox(0, 90, 8, 10)
    assert "clamped" in caplog.text


def test_class_frequencies_direct(small_dataset):
    assert class_frequencies(small_dataset) == {10: 3, 20: 1, 30: 0}


def test_class_frequencies_match_linear_scan():
    rng = random.Random(3)
    for _ in range(20):
        data = random_coco(rng)
        d = dataset_from_dict(data)
        tally = {c["id"]: 0 for c in data["categories"]}
        for a in data["annotations"]:
            tally[a["category_id"]] += 1
        assert class_frequencies(d) == tally
        assert sum(class_frequencies(d).values()) == len(d.annotations)


def _counts_dataset(counts):
    images = [{"id": 1, "width": 1000, "height": 1000}]
    cats = [{"id": i, "name": f"c{i}"} for i in range(len(counts))]
    anns, aid = [], 0
    for cid, n in enumerate(counts):
        for _ in range(n):
            anns.append({"id": aid, "image_id": 1, "category_id": cid, "bbox": [1, 1, 5, 5]})
            aid += 1
    return dataset_from_dict({"images": images, "categories": cats, "annotations": anns})


def test_assign_cohorts_rule():
    d = assign_cohorts(_counts_dataset([100, 10, 1]), (50, 5))
    assert [c.cohort for c in d.categories] == [
        FrequencyCohort.MANY,
        FrequencyCohort.MEDIUM,
        FrequencyCohort.FEW,
    ]


def test_assign_cohorts_all_zero():
    d = assign_cohorts(_counts_dataset([0, 0]), (50, 5))
    assert all(c.cohort is FrequencyCohort.FEW for c in d.categories)


@pytest.mark.parametrize("bad", [(5, 5), (5, 10), (10, 0)])
def test_assign_cohorts_bad_thresholds(bad):
    with pytest.raises(ValueError):
        assign_cohorts(_counts_dataset([1]), bad)


@settings(max_examples=40, deadline=None)
@given(
    counts=st.lists(st.integers(0, 30), min_size=1, max_size=6),
    medium_min=st.integers(1, 10),
    gap=st.integers(1, 15),
)
def test_assign_cohorts_matches_rule_and_partitions(counts, medium_min, gap):
    many_min = medium_min + gap
    d = assign_cohorts(_counts_dataset(counts), (many_min, medium_min))
    groups = {k: set() for k in FrequencyCohort}
    for c, n in zip(sorted(d.categories, key=lambda c: c.id), counts):
        expected = (
            FrequencyCohort.MANY
            if n >= many_min
            else FrequencyCohort.MEDIUM if n >= medium_min else FrequencyCohort.FEW
        )
        assert c.cohort is expected
        groups[c.cohort].add(c.id)
    assert set().union(*groups.values()) == {c.id for c in d.categories}
    assert sum(len(g) for g in groups.values()) == len(d.categories)


def test_cohort_config_overrides_thresholds(small_coco, tmp_path):
    p = tmp_path / "d.json"
    p.write_text(json.dumps(small_coco))
    cfg = tmp_path / "cohorts.json"
    cfg.write_text(json.dumps({"car": "few", "debris": "many", "stroller": "medium"}))
    d = load_dataset(p, cfg)
    assert d.category_by_id[10].cohort is FrequencyCohort.FEW
    assert d.category_by_id[20].cohort is FrequencyCohort.MANY


def test_cohort_config_must_cover_all(small_coco):
    with pytest.raises(ValidationError):
        dataset_from_dict(small_coco, {"car": "few"})


def test_round_trip(tmp_path):
    rng = random.Random(8)
    d = dataset_from_dict(random_coco(rng), thresholds=(8, 3))
    p = tmp_path / "rt.json"
    save_dataset(d, p)
    d2 = load_dataset(p)
    assert d2 == d
    assert dataset_to_dict(d2) == dataset_to_dict(d)
    assert d2.digest == d.digest


def test_synonyms_carried(small_dataset):
    assert small_dataset.category_by_id[20].synonyms == ("trash_bag",)
