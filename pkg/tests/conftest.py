import json
import random

import pytest

from fsodbench.dataset import dataset_from_dict

from synth import random_coco


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def small_coco():
    """Two images, three classes; class 30 has no annotations."""
    return {
        "images": [{"id": 1, "width": 100, "height": 100}, {"id": 2, "width": 100, "height": 80}],
        "categories": [
            {"id": 10, "name": "car"},
            {"id": 20, "name": "debris", "synonyms": ["trash_bag"]},
            {"id": 30, "name": "stroller"},
        ],
        "annotations": [
            {"id": 1, "image_id": 1, "category_id": 10, "bbox": [0, 0, 10, 10]},
            {"id": 2, "image_id": 1, "category_id": 10, "bbox": [20, 20, 10, 10]},
            {"id": 3, "image_id": 2, "category_id": 10, "bbox": [5, 5, 30, 20]},
            {"id": 4, "image_id": 2, "category_id": 20, "bbox": [50, 40, 20, 20]},
        ],
    }


@pytest.fixture
def small_dataset(small_coco):
    return dataset_from_dict(small_coco, thresholds=(3, 1))


@pytest.fixture
def write_json(tmp_path):
    def _write(name, obj):
        p = tmp_path / name
        p.write_text(json.dumps(obj))
        return p

    return _write


@pytest.fixture
def random_coco_factory():
    return random_coco


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
