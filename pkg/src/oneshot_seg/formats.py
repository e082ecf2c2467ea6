"""JSONL episode/prediction files and JSON/CSV report documents.

Every file starts with a header line naming its schema and version.  Output
is written with sorted keys and fixed separators so identical inputs give
byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from ._version import __version__
from .coco_data import RleMask, encode_counts_string
from .episodes import Episode
from .errors import DataFormatError, SchemaVersionError
from .evaluation import METRIC_NAMES, Prediction, PredictionRecord

SCHEMA_VERSION = 1
EPISODES_SCHEMA = "oneshot-seg/episodes"
PREDICTIONS_SCHEMA = "oneshot-seg/predictions"
REPORT_SCHEMA = "oneshot-seg/report"


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def make_header(schema: str, config=None) -> dict:
    return {"schema": schema, "version": SCHEMA_VERSION, "tool_version": __version__, "config": config or {}}


def _check_header(header, schema, where):
    if not isinstance(header, dict) or "schema" not in header:
        raise DataFormatError(f"{where}: missing header line")
    if header["schema"] != schema:
        raise DataFormatError(f"{where}: expected schema {schema!r}, found {header['schema']!r}")
    if header.get("version") != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"{where}: schema version {header.get('version')!r}, this tool reads version {SCHEMA_VERSION}"
        )


def _read_lines(path, schema):
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    rows = []
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}:{n}: {exc.msg}") from exc
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    _check_header(rows[0], schema, str(path))
    return rows[0], rows[1:]


def _write_lines(path, header, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps(header) + "\n")
        for r in rows:
            f.write(dumps(r) + "\n")


# episodes


def write_episodes(path, episodes, config=None) -> None:
    rows = [e.to_dict() for e in sorted(episodes, key=lambda e: (e.split, e.run, e.image_id, e.category_id))]
    _write_lines(path, make_header(EPISODES_SCHEMA, config), rows)


def read_episodes(path):
    header, rows = _read_lines(path, EPISODES_SCHEMA)
    episodes = [Episode.from_dict(r) for r in rows]
    seen = set()
    for e in episodes:
        if e.episode_id in seen:
            raise DataFormatError(f"{path}: duplicate episode_id {e.episode_id}")
        seen.add(e.episode_id)
    return header, episodes


# predictions


def detection_to_json(d: Prediction) -> list:
    row = [float(v) for v in d.bbox] + [float(d.score)]
    if d.mask is not None:
        # compressed counts keep baseline prediction files a third of the size
        row.append({"size": [d.mask.height, d.mask.width], "counts": encode_counts_string(d.mask.counts)})
    return row


def detection_from_json(row, where="") -> Prediction:
    if not isinstance(row, list) or len(row) not in (5, 6):
        raise DataFormatError(f"{where}: detection must be [x, y, w, h, score, mask?], got {row!r}")
    try:
        x, y, w, h, s = (float(v) for v in row[:5])
    except (TypeError, ValueError) as exc:
        raise DataFormatError(f"{where}: non-numeric detection {row!r}") from exc
    if w < 0 or h < 0:
        raise DataFormatError(f"{where}: negative box size in {row[:4]}")
    if not 0.0 <= s <= 1.0:
        raise DataFormatError(f"{where}: score {s} outside [0, 1]")
    mask = None
    if len(row) == 6 and row[5] is not None:
        try:
            mask = RleMask.from_coco(row[5])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"{where}: bad mask: {exc}") from exc
    return Prediction((x, y, w, h), s, mask)


def write_predictions(path, records, config=None) -> None:
    rows = [
        {"episode_id": r.episode_id, "detections": [detection_to_json(d) for d in r.detections]}
        for r in sorted(records, key=lambda r: r.episode_id)
    ]
    _write_lines(path, make_header(PREDICTIONS_SCHEMA, config), rows)


def read_predictions(path):
    header, rows = _read_lines(path, PREDICTIONS_SCHEMA)
    out = []
    for n, r in enumerate(rows, start=2):
        where = f"{path}:{n}"
        if not isinstance(r, dict) or "episode_id" not in r:
            raise DataFormatError(f"{where}: record without episode_id")
        dets = [detection_from_json(d, where) for d in r.get("detections", [])]
        out.append(PredictionRecord(str(r["episode_id"]), dets))
    return header, out


# reports


def emit_report(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


def parse_report(text: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"report is not valid JSON: {exc.msg}") from exc
    _check_header(doc, REPORT_SCHEMA, "report")
    return doc


def write_report(path, doc) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(emit_report(doc), encoding="utf-8")


def read_report(path) -> dict:
    return parse_report(Path(path).read_text(encoding="utf-8"))


CSV_KEYS = ("split", "run", "kind")


def _cell(v):
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


def emit_metrics_csv(rows) -> str:
    """Rows of ``{"split", "run", "kind", AP, AP50, ...}``; absent values are empty cells."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_KEYS + METRIC_NAMES)
    for r in rows:
        w.writerow([_cell(r.get(k)) for k in CSV_KEYS + METRIC_NAMES])
    return buf.getvalue()


def parse_metrics_csv(text: str) -> list:
    reader = csv.reader(io.StringIO(text))
    try:
        head = next(reader)
    except StopIteration:
        raise DataFormatError("empty CSV") from None
    if tuple(head) != CSV_KEYS + METRIC_NAMES:
        raise DataFormatError(f"unexpected CSV columns {head}")
    out = []
    for row in reader:
        d = {}
        for k, v in zip(head, row):
            if k == "kind":
                d[k] = v
            elif k in ("split", "run"):
                d[k] = None if v == "" else (v if v == "mean" else int(v))
            else:
                d[k] = None if v == "" else float(v)
        out.append(d)
    return out
