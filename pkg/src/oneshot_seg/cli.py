"""Command-line entry point: ``oneshot-seg <command> [flags]``.

Exit codes: 0 success, 2 usage, 3 missing file, 4 malformed input,
5 schema version mismatch, 6 episode/prediction mismatch, 7 weights.

Anchor count note (``anchors`` command): with 3 anchors per feature-map
location over strides 4..64, a 1024x1024 input has 3 * (256² + 128² + 64² +
32² + 16²) = 261,888 anchors.  The "about one million" figure sometimes quoted
for this configuration is 3 * (32² + 64² + 128² + 256² + 512²) = 1,047,552,
i.e. the same sum indexed by anchor scale instead of feature-map side; it is
not the number of anchors the RPN scores.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._version import __version__
from .categories import COCO_CATEGORIES
from .coco_data import load_dataset
from .episodes import make_split, sample_episodes
from .errors import EpisodeMismatchError, OneShotError
from .evaluation import (
    DEFAULT_CLUTTER_EDGES,
    METRIC_NAMES,
    Prediction,
    PredictionRecord,
    aggregate,
    clutter_report,
    confusion_matrix,
    evaluate,
    group_by_run,
    restrict_predictions,
    oracle_predictions,
    random_baseline,
)
from .formats import (
    REPORT_SCHEMA,
    emit_metrics_csv,
    make_header,
    read_episodes,
    read_predictions,
    write_episodes,
    write_predictions,
    write_report,
)
from .geometry import anchor_count, xyxy_to_xywh
from .matching import IMAGENET_MEAN_RGB
from .pipeline import DetectConfig, detect
from .svg import bar_chart_svg, heatmap_svg

ANCHOR_NOTE = (
    "RPN anchors for a 1024x1024 input: 3 per location over strides 4..64 = 261888; "
    "the 'about 1M' figure is 3 * (32^2 + 64^2 + 128^2 + 256^2 + 512^2) = 1047552, "
    "a sum over anchor scales rather than feature-map locations"
)

EXIT_USAGE = 2
EXIT_NOT_FOUND = 3


@dataclass
class RunConfig:
    split: str = "all"
    partition: str = "test"
    shots: int = 1
    runs: int = 5
    seed: int = 0
    exclude_same_image: bool = False
    kind: str = "both"
    bins: tuple = DEFAULT_CLUTTER_EDGES
    mean_rgb: tuple = IMAGENET_MEAN_RGB
    detect: dict = field(default_factory=lambda: asdict(DetectConfig()))
    annotations: str = ""
    episodes: str = ""
    predictions: str = ""
    weights: str = ""
    activations: str = ""

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        cfg = cls()
        for name in ("split", "partition", "shots", "runs", "seed", "exclude_same_image", "kind", "bins",
                     "annotations", "episodes", "predictions", "weights", "activations"):
            v = getattr(args, name, None)
            if v is not None:
                setattr(cfg, name, v)
        cfg.bins = tuple(cfg.bins)
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bins"] = list(self.bins)
        d["mean_rgb"] = list(self.mean_rgb)
        return d

    def split_indices(self) -> list:
        return [1, 2, 3, 4] if self.split == "all" else [int(self.split)]

    def kinds(self) -> list:
        return ["box", "mask"] if self.kind == "both" else [self.kind]


def _bins(text):
    try:
        edges = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bins must be comma-separated integers, got {text!r}") from None
    if not edges:
        raise argparse.ArgumentTypeError("empty bin specification")
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise argparse.ArgumentTypeError(f"bin edges must be strictly increasing: {edges}")
    return tuple(edges)


def _need(path, flag):
    if not path:
        raise OneShotError(f"{flag} is required for this command")
    if not Path(path).exists():
        raise FileNotFoundError(f"{flag}: no such file or directory: {path}")
    return path


def _out(args, name) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def _report_doc(cfg, command, body) -> dict:
    doc = make_header(REPORT_SCHEMA, cfg.to_dict())
    doc["command"] = command
    doc["notes"] = {"anchors": ANCHOR_NOTE}
    doc.update(body)
    return doc


def _load_episodes(cfg, dataset):
    """Episodes from ``--episodes`` or sampled from the config."""
    if cfg.episodes:
        _, eps = read_episodes(_need(cfg.episodes, "--episodes"))
        return eps
    out = []
    for i in cfg.split_indices():
        split = make_split(i, dataset.category_ids)
        out.extend(sample_episodes(dataset, split, cfg.partition, cfg.shots, cfg.runs, cfg.seed,
                                   cfg.exclude_same_image))
    return out


def _subset(dataset, split_index, partition, episodes):
    if split_index in (1, 2, 3, 4):
        return make_split(split_index, dataset.category_ids).ids(partition)
    return sorted({e.category_id for e in episodes})


def _position_names(dataset):
    ids = dataset.category_ids if dataset is not None else [c[0] for c in COCO_CATEGORIES]
    names = {c[0]: c[1] for c in COCO_CATEGORIES}
    if dataset is not None:
        names.update({c: d.name for c, d in dataset.categories.items()})
    return ids, names


# commands


def cmd_splits(args, cfg):
    dataset = load_dataset(_need(cfg.annotations, "--annotations")) if cfg.annotations else None
    ids, names = _position_names(dataset)
    pos = {c: i + 1 for i, c in enumerate(sorted(ids))}
    doc = {}
    for i in cfg.split_indices():
        s = make_split(i, ids)
        doc[f"S{i}"] = {"test": list(s.test_ids), "train": list(s.train_ids)}
        listing = ", ".join(f"{names[c]}({pos[c]})" for c in s.test_ids)
        print(f"S{i} test: {listing}")
    if args.out:
        write_report(_out(args, "splits.json"), _report_doc(cfg, "splits", {"splits": doc}))
    return 0


def cmd_episodes(args, cfg):
    dataset = load_dataset(_need(cfg.annotations, "--annotations"))
    cfg.episodes = ""
    eps = _load_episodes(cfg, dataset)
    path = _out(args, "episodes.jsonl")
    write_episodes(path, eps, cfg.to_dict())
    print(f"wrote {len(eps)} episodes to {path}")
    return 0


def cmd_baseline(args, cfg, oracle=False):
    dataset = load_dataset(_need(cfg.annotations, "--annotations"))
    eps = _load_episodes(cfg, dataset)
    if oracle:
        records, flagged = oracle_predictions(dataset, eps), []
    else:
        records, flagged = random_baseline(dataset, eps, cfg.seed)
    path = _out(args, "predictions.jsonl")
    write_predictions(path, records, cfg.to_dict())
    n = sum(len(r.detections) for r in records)
    print(f"wrote {n} detections for {len(records)} episodes to {path}")
    if flagged:
        print(f"{len(flagged)} boxes larger than their image were placed at the origin", file=sys.stderr)
    return 0


def _load_eval_inputs(cfg):
    dataset = load_dataset(_need(cfg.annotations, "--annotations"))
    _, eps = read_episodes(_need(cfg.episodes, "--episodes"))
    _, preds = read_predictions(_need(cfg.predictions, "--predictions"))
    known = {e.episode_id for e in eps}
    for r in preds:
        if r.episode_id not in known:
            raise EpisodeMismatchError(f"prediction for unknown episode_id {r.episode_id!r}")
    return dataset, eps, preds


def cmd_eval(args, cfg):
    dataset, eps, preds = _load_eval_inputs(cfg)
    results, rows = [], []
    per_kind = {k: {m: {} for m in METRIC_NAMES} for k in cfg.kinds()}
    for (split, run), group in group_by_run(eps).items():
        subset = _subset(dataset, split, cfg.partition, group)
        for kind in cfg.kinds():
            rep = evaluate(restrict_predictions(preds, group), group, dataset, subset, kind, workers=args.workers)
            results.append({"split": split, "run": run, **rep.to_dict()})
            rows.append({"split": split, "run": run, "kind": kind, **rep.metrics})
            for m, v in rep.metrics.items():
                if v is not None:
                    per_kind[kind][m][(split, run)] = v
    summary = {}
    for kind, metrics in per_kind.items():
        summary[kind] = {m: aggregate(vals).to_dict() for m, vals in metrics.items() if vals}
        for split in sorted({s for s, _ in metrics.get("AP50", {})}):
            row = {"split": split, "run": "mean", "kind": kind}
            for m, agg in summary[kind].items():
                entry = agg["per_split"].get(str(split))
                row[m] = None if entry is None else entry["mean"]
            rows.append(row)
        row = {"split": "mean", "run": "mean", "kind": kind}
        row.update({m: summary[kind][m]["grand_mean"] for m in summary[kind]})
        rows.append(row)
        ap50 = summary[kind].get("AP50")
        if ap50:
            ci = ap50["grand_ci95"]
            print(f"{kind} mAP50 {ap50['grand_mean']:.2f}" + ("" if ci is None else f" ± {ci:.2f}"))
    write_report(_out(args, "report.json"), _report_doc(cfg, "eval", {"results": results, "aggregate": summary}))
    _out(args, "metrics.csv").write_text(emit_metrics_csv(rows), encoding="utf-8")
    return 0


def cmd_confusion(args, cfg):
    dataset, eps, preds = _load_eval_inputs(cfg)
    ids, names = _position_names(dataset)
    body = {}
    for kind in cfg.kinds():
        cm = confusion_matrix(preds, eps, dataset, kind, ids, workers=args.workers)
        body[kind] = {
            "category_ids": cm.category_ids,
            "values": cm.values.tolist(),
            "column_sums": cm.column_sums.tolist(),
        }
        labels = [names[c] for c in cm.category_ids]
        _out(args, f"confusion_{kind}.svg").write_text(heatmap_svg(cm.values, labels, cm.column_sums), encoding="utf-8")
        top = np.argsort(-cm.column_sums, kind="stable")[:5]
        print(f"{kind}: most falsely detected: " + ", ".join(f"{labels[j]} ({cm.column_sums[j]:.1f})" for j in top))
    write_report(_out(args, "confusion.json"), _report_doc(cfg, "confusion", {"confusion": body}))
    return 0


def cmd_clutter(args, cfg):
    dataset, eps, preds = _load_eval_inputs(cfg)
    body = {}
    for kind in cfg.kinds():
        per_run = []
        for (split, run), group in group_by_run(eps).items():
            subset = _subset(dataset, split, cfg.partition, group)
            bins = clutter_report(restrict_predictions(preds, group), group, dataset, cfg.bins, subset, kind, workers=args.workers)
            per_run.append(bins)
        labels = [b.label for b in per_run[0]] if per_run else []
        means = []
        for i in range(len(labels)):
            vals = [r[i].ap50 for r in per_run if r[i].ap50 is not None]
            means.append(float(np.mean(vals)) if vals else None)
        body[kind] = {
            "bins": labels,
            "mean_ap50": means,
            "images": [b.n_images for b in per_run[0]] if per_run else [],
        }
        for label, v in zip(labels, means):
            print(f"{kind} {label:>6}: " + ("n/a" if v is None else f"{v:.2f}"))
        _out(args, f"clutter_{kind}.svg").write_text(bar_chart_svg(labels, means), encoding="utf-8")
    write_report(_out(args, "clutter.json"), _report_doc(cfg, "clutter", {"clutter": body}))
    return 0


def cmd_infer(args, cfg):
    from .weights import ActivationStore, WeightBundle

    _need(cfg.annotations, "--annotations")
    _, eps = read_episodes(_need(cfg.episodes, "--episodes"))
    w = WeightBundle.load(_need(cfg.weights, "--weights"))
    store = ActivationStore(_need(cfg.activations, "--activations"))
    records = []
    for e in sorted(eps, key=lambda e: e.episode_id):
        scene, lb = store.image(e.image_id)
        if lb is None:
            raise OneShotError(f"activations for image {e.image_id} lack letterbox metadata")
        refs = [store.reference(a)[0] for a in e.reference_ann_ids]
        # the network input size is whatever the stored activations were computed at
        dcfg = DetectConfig(**{**cfg.detect, "input_size": lb.size})
        dets = detect(scene, refs, w, lb, dcfg, (e.image_id, e.category_id))
        records.append(PredictionRecord(e.episode_id, [
            Prediction(tuple(float(v) for v in xyxy_to_xywh(d.box)), min(max(d.score, 0.0), 1.0), d.mask)
            for d in dets
        ]))
    path = _out(args, "predictions.jsonl")
    write_predictions(path, records, cfg.to_dict())
    print(f"wrote predictions for {len(records)} episodes to {path}")
    return 0


def cmd_anchors(args, cfg):
    size = args.size
    n = anchor_count(size)
    by_scale = 3 * sum(s * s for s in (32, 64, 128, 256, 512))
    print(f"{n} anchors for a {size}x{size} input (3 per location, strides 4..64)")
    print(f"3 * sum of squared anchor scales = {by_scale} (not an anchor count)")
    return 0


# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oneshot-seg", description="One-shot instance segmentation benchmark tools.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *flags):
        sp.add_argument("--annotations", help="COCO instances JSON")
        sp.add_argument("--out", default=".", help="output directory")
        if "sampling" in flags:
            sp.add_argument("--split", choices=["1", "2", "3", "4", "all"], default="all")
            sp.add_argument("--partition", choices=["test", "train"], default="test")
            sp.add_argument("--shots", type=int, default=1)
            sp.add_argument("--runs", type=int, default=5)
            sp.add_argument("--seed", type=int, default=0)
            sp.add_argument("--exclude-same-image", action="store_true", default=False)
        if "episodes" in flags:
            sp.add_argument("--episodes", help="episodes JSONL file")
        if "predictions" in flags:
            sp.add_argument("--predictions", help="predictions JSONL file")
        if "kind" in flags:
            sp.add_argument("--kind", choices=["box", "mask", "both"], default="both")
            sp.add_argument("--workers", type=int, default=1, help="threads for per-image matching")
        if "partition" in flags and "sampling" not in flags:
            sp.add_argument("--partition", choices=["test", "train"], default="test")

    sp = sub.add_parser("splits", help="list the four category splits")
    sp.add_argument("--annotations")
    sp.add_argument("--split", choices=["1", "2", "3", "4", "all"], default="all")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_splits)

    sp = sub.add_parser("episodes", help="sample evaluation episodes")
    common(sp, "sampling")
    sp.set_defaults(func=cmd_episodes)

    sp = sub.add_parser("baseline", help="random-shift baseline predictions")
    common(sp, "sampling", "episodes")
    sp.set_defaults(func=cmd_baseline)

    sp = sub.add_parser("oracle", help="ground truth written as predictions")
    common(sp, "sampling", "episodes")
    sp.set_defaults(func=lambda a, c: cmd_baseline(a, c, oracle=True))

    sp = sub.add_parser("eval", help="COCO-style metrics per split and run")
    common(sp, "episodes", "predictions", "kind", "partition")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("confusion", help="category confusion matrix and heatmap")
    common(sp, "episodes", "predictions", "kind")
    sp.set_defaults(func=cmd_confusion, kind="box")

    sp = sub.add_parser("clutter", help="mAP50 by number of instances per image")
    common(sp, "episodes", "predictions", "kind", "partition")
    sp.add_argument("--bins", type=_bins, default=DEFAULT_CLUTTER_EDGES, help="bin lower edges, e.g. 1,5,9,17,33")
    sp.set_defaults(func=cmd_clutter, kind="box")

    sp = sub.add_parser("infer", help="run the matching network on stored activations")
    common(sp, "episodes")
    sp.add_argument("--weights", help="weight container file")
    sp.add_argument("--activations", help="directory of activation containers")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("anchors", help="anchor count for an input size")
    sp.add_argument("--size", type=int, default=1024)
    sp.set_defaults(func=cmd_anchors)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    cfg = RunConfig.from_args(args)
    try:
        return args.func(args, cfg)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_FOUND
    except OneShotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except json.JSONDecodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
