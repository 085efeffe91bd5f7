"""Per-frame detection to ground-truth matching and the tp(i)/gt(i) count series."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

from camflux.core import BBox, Detection, FrameSet, GroundTruthObject, TpSeries, normalize_label


class Strategy(str, enum.Enum):
    GREEDY = "greedy"
    OPTIMAL = "optimal"


@dataclass(frozen=True)
class MatchConfig:
    iou_threshold: float = 0.5
    class_sensitive: bool = True
    strategy: Strategy = Strategy.GREEDY

    def __post_init__(self) -> None:
        if not (0.0 < self.iou_threshold <= 1.0):
            raise ValueError(f"iou_threshold must lie in (0, 1], got {self.iou_threshold}")
        object.__setattr__(self, "strategy", Strategy(self.strategy))


@dataclass(frozen=True)
class FrameMatchResult:
    frame_id: int | None
    pairs: tuple[tuple[int, int, float], ...]
    tp: int
    fp: int
    fn: int

    @property
    def total_iou(self) -> float:
        return sum(p[2] for p in self.pairs)


def iou(a: BBox, b: BBox) -> float:
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    return min(1.0, max(0.0, inter / union))


def iou_matrix(dets: Sequence[Detection], gts: Sequence[GroundTruthObject], cfg: MatchConfig) -> list[list[float]]:
    """IoU for every (detection, gt) pair; entries below threshold or of mismatched class are 0."""
    out = []
    for d in dets:
        dl = normalize_label(d.class_label)
        row = []
        for g in gts:
            if cfg.class_sensitive and dl != normalize_label(g.class_label):
                row.append(0.0)
                continue
            v = iou(d.bbox, g.bbox)
            row.append(v if v >= cfg.iou_threshold else 0.0)
        out.append(row)
    return out


def _greedy(dets: Sequence[Detection], ious: list[list[float]]) -> list[tuple[int, int, float]]:
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    taken: set[int] = set()
    pairs = []
    for i in order:
        best_j, best = -1, 0.0
        for j, v in enumerate(ious[i]):
            # strict > keeps the lowest gt index on ties
            if j not in taken and v > best:
                best_j, best = j, v
        if best_j >= 0:
            taken.add(best_j)
            pairs.append((i, best_j, best))
    return sorted(pairs)


def _optimal(ious: list[list[float]]) -> list[tuple[int, int, float]]:
    from camflux.tracker import hungarian

    # invalid pairs carry weight 0, i.e. the same cost as leaving both sides unmatched
    cost = [[1.0 - v for v in row] for row in ious]
    return [(r, c, ious[r][c]) for r, c in hungarian(cost) if ious[r][c] > 0.0]


def match_frame(
    dets: Sequence[Detection], gts: Sequence[GroundTruthObject], cfg: MatchConfig | None = None
) -> FrameMatchResult:
    """Match one frame's detections to its ground truth.

    Greedy visits detections by descending confidence (ties by index) and takes the
    free gt with the highest IoU; optimal maximizes total IoU over one-to-one pairs.
    """
    cfg = cfg or MatchConfig()
    frames = {d.frame_id for d in dets} | {g.frame_id for g in gts}
    if len(frames) > 1:
        raise ValueError(f"match_frame needs records from a single frame, got frames {sorted(frames)}")
    ious = iou_matrix(dets, gts, cfg)
    if not dets or not gts:
        pairs: list[tuple[int, int, float]] = []
    elif cfg.strategy is Strategy.GREEDY:
        pairs = _greedy(dets, ious)
    else:
        pairs = _optimal(ious)
    tp = len(pairs)
    return FrameMatchResult(
        frame_id=frames.pop() if frames else None,
        pairs=tuple(pairs),
        tp=tp,
        fp=len(dets) - tp,
        fn=len(gts) - tp,
    )


def match_frameset(fs: FrameSet, cfg: MatchConfig | None = None) -> list[FrameMatchResult]:
    return [match_frame(fs.detections_by_frame[f], fs.ground_truth_by_frame[f], cfg) for f in fs.frames]


def count_series(fs: FrameSet, cfg: MatchConfig | None = None) -> TpSeries:
    results = match_frameset(fs, cfg)
    return TpSeries(
        frame_ids=tuple(fs.frames),
        tp=tuple(r.tp for r in results),
        gt=tuple(len(fs.ground_truth_by_frame[f]) for f in fs.frames),
    )
