"""Domain types and the on-disk formats for detection logs, ground truth and count series."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence


class ParseError(ValueError):
    """A record in an input stream could not be decoded."""

    def __init__(self, line: int, field_name: str, message: str) -> None:
        self.line = line
        self.field_name = field_name
        super().__init__(f"line {line}: field '{field_name}': {message}")


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        for name in ("x", "y", "w", "h"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"BBox.{name} must be finite")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"BBox needs positive size, got w={self.w} h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def scaled(self, s: float) -> BBox:
        return BBox(self.x * s, self.y * s, self.w * s, self.h * s)


def normalize_label(label: str) -> str:
    return label.strip().lower()


@dataclass(frozen=True)
class Detection:
    frame_id: int
    bbox: BBox
    class_label: str
    confidence: float

    def __post_init__(self) -> None:
        if self.frame_id < 0:
            raise ValueError("frame_id must be non-negative")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class GroundTruthObject:
    frame_id: int
    object_id: int
    bbox: BBox
    class_label: str

    def __post_init__(self) -> None:
        if self.frame_id < 0:
            raise ValueError("frame_id must be non-negative")


@dataclass(frozen=True)
class FrameSet:
    frames: tuple[int, ...]
    detections_by_frame: dict[int, tuple[Detection, ...]]
    ground_truth_by_frame: dict[int, tuple[GroundTruthObject, ...]]

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class TpSeries:
    """Per-frame true-positive and ground-truth counts."""

    frame_ids: tuple[int, ...]
    tp: tuple[int, ...]
    gt: tuple[int, ...]

    def __post_init__(self) -> None:
        if not (len(self.frame_ids) == len(self.tp) == len(self.gt)):
            raise ValueError("frame_ids, tp and gt must have equal length")
        if any(v < 0 for v in self.tp) or any(v < 0 for v in self.gt):
            raise ValueError("counts must be non-negative")

    def __len__(self) -> int:
        return len(self.tp)

    @classmethod
    def from_counts(cls, tp: Sequence[int], gt: Sequence[int], frame_ids: Sequence[int] | None = None) -> TpSeries:
        if frame_ids is None:
            frame_ids = range(len(tp))
        return cls(tuple(int(f) for f in frame_ids), tuple(int(v) for v in tp), tuple(int(v) for v in gt))


# ---------------------------------------------------------------------------
# parsing

DETECTION_CSV_HEADER = ("frame_id", "class", "confidence", "x", "y", "w", "h")
GT_CSV_HEADER = ("frame_id", "object_id", "x", "y", "w", "h", "class")
TP_CSV_HEADER = ("frame_id", "tp", "gt")


def _decode(data: bytes | str) -> str:
    if isinstance(data, str):
        return data
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(0, "<stream>", f"not valid UTF-8 ({exc.reason})") from None


def _lines(text: str) -> Iterable[tuple[int, str]]:
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line:
            yield lineno, line


def _int(value, lineno: int, name: str) -> int:
    try:
        if isinstance(value, bool):
            raise ValueError
        if isinstance(value, float):
            if not value.is_integer():
                raise ValueError
            return int(value)
        return int(str(value).strip())
    except (TypeError, ValueError):
        raise ParseError(lineno, name, f"expected an integer, got {value!r}") from None


def _float(value, lineno: int, name: str) -> float:
    try:
        if isinstance(value, bool):
            raise ValueError
        out = float(str(value).strip()) if not isinstance(value, (int, float)) else float(value)
    except (TypeError, ValueError):
        raise ParseError(lineno, name, f"expected a number, got {value!r}") from None
    if not math.isfinite(out):
        raise ParseError(lineno, name, f"non-finite value {value!r}")
    return out


def _bbox(values: Sequence, lineno: int) -> BBox:
    x, y, w, h = (_float(v, lineno, n) for v, n in zip(values, ("x", "y", "w", "h")))
    if w <= 0:
        raise ParseError(lineno, "w", f"box width must be positive, got {w}")
    if h <= 0:
        raise ParseError(lineno, "h", f"box height must be positive, got {h}")
    return BBox(x, y, w, h)


def _confidence(value, lineno: int, name: str) -> float:
    conf = _float(value, lineno, name)
    if not 0.0 <= conf <= 1.0:
        raise ParseError(lineno, name, f"confidence {conf} outside [0, 1]")
    return conf


def _frame_id(value, lineno: int, name: str) -> int:
    frame = _int(value, lineno, name)
    if frame < 0:
        raise ParseError(lineno, name, f"frame id must be non-negative, got {frame}")
    return frame


def _csv_rows(text: str, header: Sequence[str]) -> Iterable[tuple[int, list[str]]]:
    first = True
    for lineno, line in _lines(text):
        row = next(csv.reader([line]))
        if first:
            first = False
            if [c.strip().lower() for c in row] == list(header):
                continue
        if len(row) != len(header):
            raise ParseError(lineno, "<record>", f"expected {len(header)} columns, got {len(row)}")
        yield lineno, row


def parse_detection_log(data: bytes | str, format: str = "csv") -> list[Detection]:
    """Parse a detection log (``csv`` or ``jsonl``) into detections, in record order."""
    text = _decode(data)
    fmt = format.lower()
    out: list[Detection] = []
    if fmt == "csv":
        for lineno, row in _csv_rows(text, DETECTION_CSV_HEADER):
            frame = _frame_id(row[0], lineno, "frame_id")
            label = row[1].strip()
            if not label:
                raise ParseError(lineno, "class", "empty class label")
            conf = _confidence(row[2], lineno, "confidence")
            out.append(Detection(frame, _bbox(row[3:7], lineno), label, conf))
    elif fmt == "jsonl":
        for lineno, line in _lines(text):
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, "<record>", f"invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise ParseError(lineno, "<record>", "expected a JSON object")
            for key in ("frame", "class", "conf", "bbox"):
                if key not in rec:
                    raise ParseError(lineno, key, "missing")
            bbox = rec["bbox"]
            if not isinstance(bbox, list) or len(bbox) != 4:
                raise ParseError(lineno, "bbox", "expected [x, y, w, h]")
            label = rec["class"]
            if not isinstance(label, str) or not label.strip():
                raise ParseError(lineno, "class", "expected a non-empty string")
            out.append(
                Detection(
                    _frame_id(rec["frame"], lineno, "frame"),
                    _bbox(bbox, lineno),
                    label.strip(),
                    _confidence(rec["conf"], lineno, "conf"),
                )
            )
    else:
        raise ValueError(f"unknown detection log format {format!r}")
    return out


def parse_ground_truth(data: bytes | str) -> list[GroundTruthObject]:
    """Parse MOT-style ground truth ``frame_id,object_id,x,y,w,h,class``."""
    text = _decode(data)
    out: list[GroundTruthObject] = []
    seen: dict[tuple[int, int], int] = {}
    for lineno, row in _csv_rows(text, GT_CSV_HEADER):
        frame = _frame_id(row[0], lineno, "frame_id")
        oid = _int(row[1], lineno, "object_id")
        if (frame, oid) in seen:
            raise ParseError(
                lineno, "object_id", f"duplicate object {oid} in frame {frame} (first at line {seen[frame, oid]})"
            )
        seen[frame, oid] = lineno
        label = row[6].strip()
        if not label:
            raise ParseError(lineno, "class", "empty class label")
        out.append(GroundTruthObject(frame, oid, _bbox(row[2:6], lineno), label))
    return out


def parse_tp_series(data: bytes | str) -> TpSeries:
    text = _decode(data)
    frames, tps, gts = [], [], []
    for lineno, row in _csv_rows(text, TP_CSV_HEADER):
        frames.append(_frame_id(row[0], lineno, "frame_id"))
        for name, value, dest in (("tp", row[1], tps), ("gt", row[2], gts)):
            v = _int(value, lineno, name)
            if v < 0:
                raise ParseError(lineno, name, f"count must be non-negative, got {v}")
            dest.append(v)
    return TpSeries(tuple(frames), tuple(tps), tuple(gts))


# ---------------------------------------------------------------------------
# serialization

def _num(v: float) -> str:
    # repr round-trips floats exactly; integral values print without a trailing .0
    if float(v).is_integer() and abs(v) < 2**53:
        return str(int(v))
    return repr(float(v))


def _write_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def serialize_detections(dets: Iterable[Detection], format: str = "csv") -> str:
    if format == "csv":
        return _write_csv(
            DETECTION_CSV_HEADER,
            (
                (d.frame_id, d.class_label, _num(d.confidence), _num(d.bbox.x), _num(d.bbox.y), _num(d.bbox.w), _num(d.bbox.h))
                for d in dets
            ),
        )
    if format == "jsonl":
        return "".join(
            json.dumps(
                {
                    "frame": d.frame_id,
                    "class": d.class_label,
                    "conf": d.confidence,
                    "bbox": [d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h],
                }
            )
            + "\n"
            for d in dets
        )
    raise ValueError(f"unknown detection log format {format!r}")


def serialize_ground_truth(gts: Iterable[GroundTruthObject]) -> str:
    return _write_csv(
        GT_CSV_HEADER,
        ((g.frame_id, g.object_id, _num(g.bbox.x), _num(g.bbox.y), _num(g.bbox.w), _num(g.bbox.h), g.class_label) for g in gts),
    )


def serialize_tp_series(series: TpSeries) -> str:
    return _write_csv(TP_CSV_HEADER, zip(series.frame_ids, series.tp, series.gt))


# ---------------------------------------------------------------------------

def _det_key(d: Detection):
    return (-d.confidence, normalize_label(d.class_label), d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h, d.class_label)


def build_frameset(dets: Iterable[Detection], gts: Iterable[GroundTruthObject]) -> FrameSet:
    """Group records by frame; frames is the sorted union of frame ids seen in either input."""
    det_map: dict[int, list[Detection]] = {}
    gt_map: dict[int, list[GroundTruthObject]] = {}
    for d in dets:
        det_map.setdefault(d.frame_id, []).append(d)
    for g in gts:
        gt_map.setdefault(g.frame_id, []).append(g)
    frames = tuple(sorted(set(det_map) | set(gt_map)))
    return FrameSet(
        frames=frames,
        # canonical per-frame order keeps the frameset independent of input record order
        detections_by_frame={f: tuple(sorted(det_map.get(f, ()), key=_det_key)) for f in frames},
        ground_truth_by_frame={f: tuple(sorted(gt_map.get(f, ()), key=lambda g: g.object_id)) for f in frames},
    )
