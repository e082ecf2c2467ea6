import json

import numpy as np
import pytest

from oneshot_seg.cli import main
from oneshot_seg.episodes import Episode, make_split, sample_episodes
from oneshot_seg.errors import DataFormatError, SchemaVersionError
from oneshot_seg.evaluation import METRIC_NAMES, random_baseline
from oneshot_seg.formats import (
    emit_metrics_csv,
    parse_metrics_csv,
    read_episodes,
    read_predictions,
    read_report,
    write_episodes,
    write_predictions,
)
from oneshot_seg.matching import letterbox_geometry
from oneshot_seg.synthetic import synthetic_coco
from oneshot_seg.weights import ActivationStore, WeightBundle

from nets import random_backbone, random_weights


@pytest.fixture(scope="module")
def ann_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("coco") / "instances.json"
    p.write_text(json.dumps(synthetic_coco(40, seed=11)))
    return p


# file formats


def test_episode_and_prediction_round_trip(tmp_path, synth_coco):
    eps = sample_episodes(synth_coco, make_split(1, synth_coco.category_ids), runs=2)
    write_episodes(tmp_path / "e.jsonl", eps, {"seed": 0})
    header, back = read_episodes(tmp_path / "e.jsonl")
    assert header["config"] == {"seed": 0}
    assert sorted(back, key=lambda e: e.episode_id) == sorted(eps, key=lambda e: e.episode_id)
    preds, _ = random_baseline(synth_coco, eps)
    write_predictions(tmp_path / "p.jsonl", preds)
    _, got = read_predictions(tmp_path / "p.jsonl")
    assert {r.episode_id: r.detections for r in got} == {r.episode_id: r.detections for r in preds}
    # a rewrite of what was read is byte-identical
    write_predictions(tmp_path / "q.jsonl", got)
    assert (tmp_path / "p.jsonl").read_bytes() == (tmp_path / "q.jsonl").read_bytes()


def test_format_errors(tmp_path):
    p = tmp_path / "e.jsonl"
    p.write_text('{"schema":"oneshot-seg/episodes","version":99}\n')
    with pytest.raises(SchemaVersionError):
        read_episodes(p)
    p.write_text('{"schema":"oneshot-seg/predictions","version":1}\n')
    with pytest.raises(DataFormatError, match="expected schema"):
        read_episodes(p)
    p.write_text('{"schema":"oneshot-seg/predictions","version":1}\n{"episode_id":"a","detections":[[0,0,1,1,1.5]]}\n')
    with pytest.raises(DataFormatError, match="score"):
        read_predictions(p)
    p.write_text("{not json\n")
    with pytest.raises(DataFormatError):
        read_predictions(p)
    e = Episode(1, 1, (2,), 1).to_dict()
    p.write_text('{"schema":"oneshot-seg/episodes","version":1}\n' + json.dumps(e) + "\n" + json.dumps(e) + "\n")
    with pytest.raises(DataFormatError, match="duplicate"):
        read_episodes(p)


def test_metrics_csv_round_trip():
    rows = [{"split": 1, "run": 2, "kind": "box", **{m: 0.1 * i for i, m in enumerate(METRIC_NAMES)}},
            {"split": "mean", "run": "mean", "kind": "mask", "AP": 1 / 3}]
    back = parse_metrics_csv(emit_metrics_csv(rows))
    assert back[0] == rows[0]
    assert back[1]["AP"] == 1 / 3 and back[1]["AP50"] is None and back[1]["split"] == "mean"


# CLI


def test_cli_pipeline_deterministic(tmp_path, ann_file, capsys):
    out = tmp_path / "run"
    files = ("episodes.jsonl", "predictions.jsonl", "report.json", "metrics.csv", "clutter.json", "clutter_box.svg")
    snaps = []
    for _ in range(2):
        args = ["--annotations", str(ann_file), "--out", str(out)]
        assert main(["episodes", *args, "--runs", "2", "--seed", "5"]) == 0
        eps = ["--episodes", str(out / "episodes.jsonl")]
        assert main(["baseline", *args, *eps, "--seed", "5"]) == 0
        preds = ["--predictions", str(out / "predictions.jsonl")]
        assert main(["eval", *args, *eps, *preds]) == 0
        assert main(["clutter", *args, *eps, *preds, "--kind", "box", "--bins", "1,3"]) == 0
        snaps.append({f: (out / f).read_bytes() for f in files})
    for f in files:
        assert snaps[0][f] == snaps[1][f], f
    rep = read_report(out / "report.json")
    assert rep["command"] == "eval"
    assert {r["kind"] for r in rep["results"]} == {"box", "mask"}
    assert len(rep["results"]) == 2 * 4 * 2
    rows = parse_metrics_csv((out / "metrics.csv").read_text())
    assert rows[-1]["split"] == "mean" and rows[-1]["kind"] == "mask"
    assert "box mAP50" in capsys.readouterr().out


def test_cli_oracle_and_confusion(tmp_path, ann_file):
    args = ["--annotations", str(ann_file), "--out", str(tmp_path)]
    assert main(["episodes", *args, "--runs", "1", "--split", "2"]) == 0
    eps = ["--episodes", str(tmp_path / "episodes.jsonl")]
    assert main(["oracle", *args, *eps]) == 0
    preds = ["--predictions", str(tmp_path / "predictions.jsonl")]
    assert main(["eval", *args, *eps, *preds, "--kind", "mask"]) == 0
    agg = read_report(tmp_path / "report.json")["aggregate"]["mask"]
    assert agg["AP50"]["grand_mean"] == 100.0 and agg["AP"]["grand_mean"] == 100.0
    assert main(["confusion", *args, *eps, *preds, "--kind", "box"]) == 0
    cm = read_report(tmp_path / "confusion.json")["confusion"]["box"]
    vals = np.array(cm["values"])
    assert vals.shape == (80, 80)
    assert (tmp_path / "confusion_box.svg").read_text().startswith("<svg")


def test_cli_exit_codes(tmp_path, ann_file):
    assert main(["eval", "--annotations", str(tmp_path / "missing.json")]) == 3
    assert main(["nosuchcommand"]) == 2
    assert main(["clutter", "--bins", "5,3"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["episodes", "--annotations", str(bad), "--out", str(tmp_path)]) == 4
    args = ["--annotations", str(ann_file), "--out", str(tmp_path)]
    assert main(["episodes", *args, "--runs", "1", "--split", "1"]) == 0
    ep = tmp_path / "episodes.jsonl"
    old = tmp_path / "old.jsonl"
    old.write_text(ep.read_text().replace('"version":1', '"version":0', 1))
    assert main(["eval", *args, "--episodes", str(old), "--predictions", str(old)]) == 5
    pr = tmp_path / "p.jsonl"
    pr.write_text('{"schema":"oneshot-seg/predictions","version":1}\n{"episode_id":"x","detections":[]}\n')
    assert main(["eval", *args, "--episodes", str(ep), "--predictions", str(pr)]) == 6
    junk = tmp_path / "w.oswc"
    junk.write_bytes(b"not a container")
    infer = ["infer", *args, "--episodes", str(ep), "--activations", str(tmp_path), "--weights"]
    assert main([*infer, str(junk)]) == 4
    # a well-formed container that lacks the network's tensors
    sparse = tmp_path / "sparse.oswc"
    WeightBundle({"x": np.zeros(1, np.float32)}).save(sparse)
    store = ActivationStore(tmp_path)
    for e in read_episodes(ep)[1][:1]:
        store.save(store.image_path(e.image_id), random_backbone(128), letterbox_geometry(64, 64, 128))
        for a in e.reference_ann_ids:
            store.save(store.reference_path(a), random_backbone(64))
    eps1 = tmp_path / "one.jsonl"
    write_episodes(eps1, read_episodes(ep)[1][:1])
    assert main(["infer", *args, "--episodes", str(eps1), "--activations", str(tmp_path),
                 "--weights", str(sparse)]) == 7


def test_cli_splits_and_anchors(capsys):
    assert main(["splits", "--split", "3"]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("S3 test: car(3), train(7), fire hydrant(11), ")
    assert line.count("(") == 20
    assert main(["anchors", "--size", "1024"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("261888 anchors") and "1047552" in out


def test_cli_infer_with_stored_activations(tmp_path):
    doc = {"images": [{"id": 1, "width": 80, "height": 64}, {"id": 2, "width": 50, "height": 50}],
           "categories": [{"id": 1, "name": "person"}],
           "annotations": [{"id": 10, "image_id": 1, "category_id": 1, "bbox": [5, 5, 20, 20], "iscrowd": 0},
                           {"id": 11, "image_id": 2, "category_id": 1, "bbox": [5, 5, 20, 20], "iscrowd": 0}]}
    ann = tmp_path / "a.json"
    ann.write_text(json.dumps(doc))
    eps = [Episode(1, 1, (11,), 1, split=1)]
    write_episodes(tmp_path / "e.jsonl", eps)
    random_weights(0).save(tmp_path / "w.oswc")
    store = ActivationStore(tmp_path / "act")
    store.save(store.image_path(1), random_backbone(128, 1), letterbox_geometry(64, 80, 128))
    store.save(store.reference_path(11), random_backbone(64, 2))
    args = ["--annotations", str(ann), "--out", str(tmp_path / "o"), "--episodes", str(tmp_path / "e.jsonl"),
            "--weights", str(tmp_path / "w.oswc"), "--activations", str(tmp_path / "act")]
    assert main(["infer", *args]) == 0
    _, preds = read_predictions(tmp_path / "o" / "predictions.jsonl")
    assert [p.episode_id for p in preds] == [eps[0].episode_id]
    for d in preds[0].detections:
        x, y, w, h = d.bbox
        assert 0 <= x and x + w <= 80 + 1e-6 and 0 <= y and y + h <= 64 + 1e-6
        assert (d.mask.height, d.mask.width) == (64, 80)
    assert main(["infer", *args[:-1], str(tmp_path / "nowhere")]) == 3
