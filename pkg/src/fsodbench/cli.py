"""Command-line entry point.

Exit codes: 0 success, 1 internal error, 2 input validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import fedloss
from .config import RunConfig, load_config
from .dataset import load_dataset
from .errors import FsodError
from .evaluation import format_table, load_predictions
from .evaluation import evaluate as run_evaluate
from .prompts import build_classifier, classify, load_embeddings, load_synonyms, synonym_table
from .splits import best_split, build_test_subset, read_split, sample_kshot_split, write_split

logger = logging.getLogger("fsodbench")

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Bad user input detected by the CLI itself."""


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    for name in ("dataset", "cohort_config", "out_dir", "port"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    return cfg


def _dataset(cfg: RunConfig, field="dataset"):
    if getattr(cfg, field) is None:
        raise InputError(f"--{field.replace('_', '-')} (or config '{field}') is required")
    cfg.require_paths(field)
    if cfg.cohort_config:
        cfg.require_paths("cohort_config")
    return load_dataset(getattr(cfg, field), cfg.cohort_config)


def split_filename(k: int, seed: int) -> str:
    return f"split_{k}shot_seed{seed}.json"


def cmd_make_splits(args) -> int:
    cfg = _config(args)
    if args.k:
        cfg.k_values = args.k
    if args.seed:
        cfg.seeds = args.seed
    d = _dataset(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k in cfg.k_values:
        for seed in cfg.seeds:
            path = out / split_filename(k, seed)
            write_split(sample_kshot_split(d, int(k), int(seed)), path)
            print(path)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    d = _dataset(cfg)
    preds = load_predictions(args.predictions)
    ecfg = cfg.eval_config()
    if args.federated:
        lists = json.loads(Path(args.federated).read_text())
        ecfg.federated_image_lists = {int(c): set(v) for c, v in lists.items()}
    restrict = build_test_subset(d) if args.test_subset else None
    result = run_evaluate(d, preds, ecfg, restrict)
    print(format_table(result))
    if args.out:
        Path(args.out).write_text(json.dumps(result.to_dict(), indent=2) + "\n")
    return EXIT_OK


def cmd_best_split(args) -> int:
    if len(args.splits) != len(args.results):
        raise InputError("--splits and --results must have the same length")
    candidates = []
    for split_path, result_path in zip(args.splits, args.results):
        aps = json.loads(Path(result_path).read_text())["per_class_ap"]
        candidates.append((read_split(split_path), {int(c): v for c, v in aps.items()}))
    d = load_dataset(args.dataset) if args.dataset else None
    composite = best_split(candidates, d)
    write_split(composite, args.out)
    print(args.out)
    return EXIT_OK


def _loss_subset(bundle: dict, num_classes: int) -> fedloss.ClassSubset:
    mode = bundle.get("mode", "explicit")
    all_classes = range(num_classes)
    gt = bundle.get("gt_classes", [])
    if "subset" in bundle:
        prov = fedloss.Provenance(mode) if mode != "explicit" else fedloss.Provenance.EXHAUSTIVE
        return fedloss.ClassSubset(frozenset(bundle["subset"]), prov)
    if mode == "exhaustive":
        return fedloss.exhaustive_subset(all_classes)
    if mode == "pseudo_negative":
        scores = {int(c): s for c, s in bundle["max_scores"].items()}
        return fedloss.pseudo_negative_subset(
            scores, gt, all_classes, bundle.get("thresh", fedloss.PSEUDO_LABEL_THRESHOLD)
        )
    if mode == "true_negative":
        return fedloss.true_negative_subset(bundle["present_classes"], gt, all_classes)
    if mode == "fedloss":
        freqs = {int(c): f for c, f in bundle["freqs"].items()}
        return fedloss.sample_fedloss_subset(
            gt, freqs, bundle.get("subset_size", fedloss.NUIMAGES_SUBSET_SIZE), bundle.get("seed", 0)
        )
    raise InputError(f"unknown loss mode {mode!r}")


def cmd_loss_check(args) -> int:
    bundle = json.loads(Path(args.bundle).read_text())
    try:
        logits = np.asarray(bundle["logits"], dtype=np.float64)
        targets = np.asarray(bundle["targets"], dtype=np.float64)
        if logits.ndim != 2:
            raise ValueError("logits must be a 2-D array")
        subset = _loss_subset(bundle, logits.shape[1])
        report = fedloss.federated_bce(logits, targets, subset)
        err = fedloss.finite_difference_check(logits, targets, subset, args.epsilon)
    except (KeyError, ValueError) as e:
        raise InputError(f"bad loss bundle: {e}") from None
    out = {
        "loss": report.loss,
        "grad": report.grad.tolist(),
        "fd_error": err,
        "subset": sorted(subset.classes),
        "mode": subset.provenance.value,
    }
    text = json.dumps(out, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_classify(args) -> int:
    cfg = _config(args)
    d = _dataset(cfg)
    emb = load_embeddings(args.embeddings)
    if args.synonyms:
        syn = load_synonyms(args.synonyms)
    else:
        syn = synonym_table({c.name: list(c.synonyms) for c in d.categories})
    cats = sorted(d.categories, key=lambda c: c.id)
    try:
        matrix = build_classifier([c.name for c in cats], syn, emb)
    except KeyError as e:
        raise InputError(str(e.args[0])) from None
    regions = json.loads(Path(args.features).read_text())
    if not regions:
        dets = []
    else:
        scores, _, _ = classify([r["feature"] for r in regions], matrix, args.temperature)
        dets = []
        for r, row in zip(regions, scores):
            for j in np.argsort(-row, kind="stable")[: args.top_k]:
                dets.append(
                    {
                        "image_id": r["image_id"],
                        "category_id": cats[j].id,
                        "bbox": r["bbox"],
                        "score": float(row[j]),
                    }
                )
    Path(args.out).write_text(json.dumps(dets) + "\n")
    print(f"{len(dets)} detections -> {args.out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .leaderboard import LeaderboardStore
    from .service import create_app

    cfg = _config(args)
    d = _dataset(cfg)
    restrict = build_test_subset(d) if args.test_subset else None
    app = create_app(
        d,
        LeaderboardStore(cfg.leaderboard),
        cfg.eval_config(),
        restrict=restrict,
        max_body_bytes=cfg.max_body_bytes,
        token=cfg.token,
    )
    uvicorn.run(app, host=cfg.host, port=cfg.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fsodbench", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="run config JSON")
        p.add_argument("--dataset", help="COCO-style annotation file")
        p.add_argument("--cohort-config", dest="cohort_config", help="category -> cohort JSON")
        return p

    p = common(sub.add_parser("make-splits", help="sample K-shot splits"))
    p.add_argument("--k", type=int, action="append", help="shots per class (repeatable)")
    p.add_argument("--seed", type=int, action="append", help="seed (repeatable)")
    p.add_argument("--out", dest="out_dir", help="output directory")
    p.set_defaults(func=cmd_make_splits)

    p = common(sub.add_parser("evaluate", help="score a predictions file"))
    p.add_argument("--predictions", required=True)
    p.add_argument("--federated", help="JSON {category_id: [image_id]} per-class image lists")
    p.add_argument("--test-subset", action="store_true", help="only images with Few/Medium GT")
    p.add_argument("--out", help="write EvalResult JSON here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("best-split", help="compose a split from per-class winners")
    p.add_argument("--splits", nargs="+", required=True)
    p.add_argument("--results", nargs="+", required=True, help="EvalResult JSON per split")
    p.add_argument("--dataset", help="source dataset, for an exact image list")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_best_split)

    p = sub.add_parser("loss-check", help="federated BCE loss, gradient and FD check")
    p.add_argument("bundle", help="JSON {logits, targets, subset | mode inputs, mode}")
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_loss_check)

    p = common(sub.add_parser("classify", help="score region features with synonym prompts"))
    p.add_argument("--features", required=True, help="JSON [{image_id, bbox, feature}]")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--synonyms", help="JSON {class: [synonyms]}")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--top-k", dest="top_k", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_classify)

    p = common(sub.add_parser("serve", help="run the evaluation server"))
    p.add_argument("--port", type=int)
    p.add_argument("--test-subset", action="store_true")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (FsodError, InputError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception:  # noqa: BLE001
        logger.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
