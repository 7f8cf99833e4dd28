import hashlib
import json
import random
from pathlib import Path

import pytest

from fsodbench.cli import main, split_filename
from fsodbench.config import RunConfig, load_config
from fsodbench.dataset import save_dataset
from fsodbench.splits import read_split, validate_split

from synth import random_dataset

BUNDLE = Path(__file__).parent / "fixtures" / "bundle"


@pytest.fixture
def dataset_file(tmp_path):
    d = random_dataset(random.Random(31), n_images=80, max_per_image=5)
    p = tmp_path / "train.json"
    save_dataset(d, p)
    return p, d


def _digests(folder):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(Path(folder).glob("*.json"))}


def test_make_splits_nine_files_and_idempotent(dataset_file, tmp_path, capsys):
    path, d = dataset_file
    args = ["make-splits", "--dataset", str(path), "--out", str(tmp_path / "a")]
    for k in (5, 10, 30):
        args += ["--k", str(k)]
    for s in (1, 2, 3):
        args += ["--seed", str(s)]
    assert main(args) == 0
    first = _digests(tmp_path / "a")
    assert len(first) == 9
    assert split_filename(10, 2) in first
    for name in first:
        validate_split(read_split(tmp_path / "a" / name), d)
    assert main(args) == 0
    assert _digests(tmp_path / "a") == first


def test_make_splits_single(dataset_file, tmp_path):
    path, _ = dataset_file
    assert main(["make-splits", "--dataset", str(path), "--k", "5", "--seed", "7", "--out", str(tmp_path / "o")]) == 0
    assert len(list((tmp_path / "o").glob("*.json"))) == 1


def test_make_splits_unwritable_dir(dataset_file, tmp_path):
    path, _ = dataset_file
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code = main(["make-splits", "--dataset", str(path), "--k", "5", "--seed", "1", "--out", str(blocker / "sub")])
    assert code == 1


def test_evaluate_echo_gives_ones(tmp_path, capsys):
    data = json.loads((BUNDLE / "dataset.json").read_text())
    echo = [
        {"image_id": a["image_id"], "category_id": a["category_id"], "bbox": a["bbox"], "score": 1.0}
        for a in data["annotations"]
    ]
    preds = tmp_path / "echo.json"
    preds.write_text(json.dumps(echo))
    out = tmp_path / "res.json"
    assert main(["evaluate", "--dataset", str(BUNDLE / "dataset.json"), "--predictions", str(preds), "--out", str(out)]) == 0
    table = capsys.readouterr().out
    assert table.splitlines()[1].split()[1:] == ["1.000"] * 4
    assert set(json.loads(out.read_text())["cohort_ap"].values()) == {1.0}


def test_evaluate_malformed_predictions_exit_2(tmp_path, capsys):
    preds = tmp_path / "bad.json"
    preds.write_text(json.dumps([
        {"image_id": 1, "category_id": 10, "bbox": [0, 0, 1, 1], "score": 0.5},
        {"image_id": 1, "category_id": 10, "score": 0.5},
    ]))
    code = main(["evaluate", "--dataset", str(BUNDLE / "dataset.json"), "--predictions", str(preds)])
    assert code == 2
    assert "record 1" in capsys.readouterr().err


def test_evaluate_reference_bundle(tmp_path):
    out = tmp_path / "res.json"
    code = main([
        "evaluate",
        "--dataset", str(BUNDLE / "dataset.json"),
        "--predictions", str(BUNDLE / "predictions.json"),
        "--out", str(out),
    ])
    assert code == 0
    got = json.loads(out.read_text())
    expected = json.loads((BUNDLE / "expected.json").read_text())
    assert got["per_class_ap"].keys() == expected["per_class_ap"].keys()
    for c, v in expected["per_class_ap"].items():
        assert got["per_class_ap"][c] == pytest.approx(v, abs=1e-9)
    for k, v in expected["cohort_ap"].items():
        assert got["cohort_ap"][k] == pytest.approx(v, abs=1e-9)


def test_evaluate_missing_dataset_exit_2(tmp_path):
    assert main(["evaluate", "--dataset", str(tmp_path / "nope.json"), "--predictions", "x"]) == 2


def test_best_split_cli(dataset_file, tmp_path):
    path, d = dataset_file
    main(["make-splits", "--dataset", str(path), "--k", "5", "--seed", "1", "--seed", "2", "--out", str(tmp_path)])
    cats = d.category_ids
    r1, r2 = tmp_path / "r1.json", tmp_path / "r2.json"
    r1.write_text(json.dumps({"per_class_ap": {str(c): (0.9 if i % 2 else 0.1) for i, c in enumerate(cats)}}))
    r2.write_text(json.dumps({"per_class_ap": {str(c): 0.5 for c in cats}}))
    out = tmp_path / "best.json"
    code = main([
        "best-split", "--dataset", str(path),
        "--splits", str(tmp_path / split_filename(5, 1)), str(tmp_path / split_filename(5, 2)),
        "--results", str(r1), str(r2), "--out", str(out),
    ])
    assert code == 0
    best = read_split(out)
    s1, s2 = read_split(tmp_path / split_filename(5, 1)), read_split(tmp_path / split_filename(5, 2))
    for i, c in enumerate(cats):
        assert best.credited[c] == (s1 if i % 2 else s2).credited[c]
    validate_split(best, d)


def test_loss_check_cli(tmp_path, capsys):
    bundle = tmp_path / "b.json"
    bundle.write_text(json.dumps({
        "logits": [[0.0, 1.0, -2.0], [0.5, 0.2, 3.0]],
        "targets": [[1, 0, 0], [0, 0, 1]],
        "mode": "pseudo_negative",
        "max_scores": {"0": 0.9, "1": 0.05, "2": 0.4},
        "gt_classes": [0],
    }))
    assert main(["loss-check", str(bundle)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["subset"] == [0, 1]
    assert out["mode"] == "pseudo_negative"
    assert out["fd_error"] < 1e-5
    assert out["grad"][0][2] == 0.0 and out["grad"][1][2] == 0.0


@pytest.mark.parametrize("mode,extra", [
    ("exhaustive", {}),
    ("true_negative", {"present_classes": [0, 2], "gt_classes": [0]}),
    ("fedloss", {"freqs": {"0": 4, "1": 1, "2": 9}, "gt_classes": [0], "subset_size": 2, "seed": 3}),
])
def test_loss_check_modes(tmp_path, capsys, mode, extra):
    bundle = tmp_path / "b.json"
    bundle.write_text(json.dumps({"logits": [[0.1, 0.2, 0.3]], "targets": [[1, 0, 0]], "mode": mode, **extra}))
    assert main(["loss-check", str(bundle)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert 0 in out["subset"]


def test_loss_check_bad_bundle(tmp_path):
    bundle = tmp_path / "b.json"
    bundle.write_text(json.dumps({"logits": [[0.1]], "targets": [[1, 0]], "subset": [0]}))
    assert main(["loss-check", str(bundle)]) == 2


def test_classify_cli(tmp_path):
    names = ["car", "truck", "debris"]
    data = {
        "images": [{"id": 1, "width": 100, "height": 100}],
        "categories": [{"id": i + 1, "name": n} for i, n in enumerate(names)],
        "annotations": [],
    }
    ds = tmp_path / "d.json"
    ds.write_text(json.dumps(data))
    emb = {"car": [1, 0, 0], "truck": [0, 1, 0], "lorry": [0, 1, 0.2], "debris": [0, 0, 1]}
    (tmp_path / "e.json").write_text(json.dumps(emb))
    (tmp_path / "s.json").write_text(json.dumps({"car": ["car"], "truck": ["truck", "lorry"], "debris": ["debris"]}))
    feats = [{"image_id": 1, "bbox": [0, 0, 10, 10], "feature": [0.1, 2.0, 0.0]}]
    (tmp_path / "f.json").write_text(json.dumps(feats))
    out = tmp_path / "dets.json"
    code = main([
        "classify", "--dataset", str(ds), "--features", str(tmp_path / "f.json"),
        "--embeddings", str(tmp_path / "e.json"), "--synonyms", str(tmp_path / "s.json"),
        "--top-k", "2", "--out", str(out),
    ])
    assert code == 0
    dets = json.loads(out.read_text())
    assert len(dets) == 2 and dets[0]["category_id"] == 2
    assert 0.5 < dets[0]["score"] < 1.0
    # the output is a valid predictions file for `evaluate`
    assert main(["evaluate", "--dataset", str(ds), "--predictions", str(out)]) == 0


def test_config_file_and_env_override(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"dataset": "a.json", "k_values": [5], "seeds": [1], "max_dets_per_image": 50}))
    rc = load_config(cfg, environ={"FSODBENCH_DATASET": "b.json", "FSODBENCH_MAX_DETS_PER_IMAGE": "20",
                                   "FSODBENCH_K_VALUES": "ignored"})
    assert rc.dataset == "b.json"
    assert rc.max_dets_per_image == 20
    assert rc.k_values == [5]
    assert rc.eval_config().max_dets_per_image == 20


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        RunConfig(seeds=[])
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ValueError):
        load_config(cfg, environ={})
    with pytest.raises(FileNotFoundError):
        RunConfig(dataset=str(tmp_path / "missing.json")).require_paths("dataset")


def test_make_splits_from_config(dataset_file, tmp_path):
    path, _ = dataset_file
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"dataset": str(path), "k_values": [5, 10], "seeds": [4], "out_dir": str(tmp_path / "cfg_out")}))
    assert main(["make-splits", "--config", str(cfg)]) == 0
    assert len(list((tmp_path / "cfg_out").glob("*.json"))) == 2
