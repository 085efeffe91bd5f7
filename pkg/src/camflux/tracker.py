"""SORT-style tracking over detection logs and the track-id churn metric.

Every frame: predict live tracks, associate detections by IoU with an optimal
assignment, update matched tracks, spawn tracks for unmatched detections and
retire tracks that went unmatched for more than ``max_age`` frames. The total
number of ids handed out over a video is the churn count: an object that drops
out of detection long enough gets a fresh id when it reappears.
"""

from __future__ import annotations

import csv
import enum
import functools
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from camflux.core import BBox, Detection, FrameSet

FORBIDDEN = 1e6


# ---------------------------------------------------------------------------
# assignment

def hungarian(cost: Sequence[Sequence[float]] | np.ndarray) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one assignment of ``min(m, n)`` (row, col) pairs.

    Shortest augmenting path with row/column potentials, O(m^2 n). Forbidden
    pairs should be given a large finite cost and filtered by the caller. The
    result is sorted by row.
    """
    a = np.asarray(cost, dtype=float)
    if a.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    m, n = a.shape
    if m == 0 or n == 0:
        return []
    if not np.all(np.isfinite(a)):
        raise ValueError("cost entries must be finite")
    if m > n:
        return sorted((r, c) for c, r in hungarian(a.T))

    rows = a.tolist()
    inf = float("inf")
    u = [0.0] * (m + 1)
    v = [0.0] * (n + 1)
    owner = [0] * (n + 1)  # owner[j]: 1-based row matched to column j, 0 = free
    way = [0] * (n + 1)
    for i in range(1, m + 1):
        owner[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = owner[j0]
            row = rows[i0 - 1]
            ui0 = u[i0]
            delta, j1 = inf, 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - ui0 - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                # strict < picks the lowest column on ties
                if minv[j] < delta:
                    delta, j1 = minv[j], j
            for j in range(n + 1):
                if used[j]:
                    u[owner[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    return sorted((owner[j] - 1, j - 1) for j in range(1, n + 1) if owner[j])


# ---------------------------------------------------------------------------
# Kalman filter on (cx, cy, s, r, vcx, vcy, vs)

@dataclass(frozen=True)
class KalmanParams:
    measurement_sigma: float = 1.0
    measurement_scale: tuple[float, float, float, float] = (1.0, 1.0, 10.0, 10.0)
    process_position: float = 1.0
    process_velocity: float = 0.01
    process_scale_velocity: float = 1e-4
    init_position_var: float = 10.0
    init_velocity_var: float = 1e3


_F = np.eye(7)
_F[0, 4] = _F[1, 5] = _F[2, 6] = 1.0
_H = np.eye(4, 7)


@functools.lru_cache(maxsize=32)
def _process_noise(p: KalmanParams) -> np.ndarray:
    q = np.diag([p.process_position] * 4 + [p.process_velocity] * 2 + [p.process_scale_velocity])
    q.flags.writeable = False
    return q


@functools.lru_cache(maxsize=32)
def _measurement_noise(p: KalmanParams) -> np.ndarray:
    r = np.diag(np.asarray(p.measurement_scale) * p.measurement_sigma**2)
    r.flags.writeable = False
    return r


def bbox_to_z(b: BBox) -> np.ndarray:
    return np.array([b.x + b.w / 2.0, b.y + b.h / 2.0, b.w * b.h, b.w / b.h])


def z_to_bbox(z: Sequence[float]) -> BBox:
    cx, cy, s, r = z[:4]
    s = max(float(s), 1e-12)
    r = max(float(r), 1e-12)
    w = np.sqrt(s * r)
    h = s / w
    return BBox(float(cx - w / 2.0), float(cy - h / 2.0), float(w), float(h))


@dataclass(frozen=True)
class KalmanState:
    mean: np.ndarray
    covariance: np.ndarray

    @classmethod
    def from_bbox(cls, b: BBox, params: KalmanParams | None = None) -> KalmanState:
        p = params or KalmanParams()
        mean = np.zeros(7)
        mean[:4] = bbox_to_z(b)
        cov = np.diag([p.init_position_var] * 4 + [p.init_velocity_var] * 3)
        return cls(mean, cov)

    def bbox(self) -> BBox:
        return z_to_bbox(self.mean)


def _pairwise_iou(a: Sequence[BBox], b: Sequence[BBox]) -> np.ndarray:
    xa = np.array([(q.x, q.y, q.x + q.w, q.y + q.h) for q in a])
    xb = np.array([(q.x, q.y, q.x + q.w, q.y + q.h) for q in b])
    iw = np.clip(np.minimum(xa[:, None, 2], xb[None, :, 2]) - np.maximum(xa[:, None, 0], xb[None, :, 0]), 0, None)
    ih = np.clip(np.minimum(xa[:, None, 3], xb[None, :, 3]) - np.maximum(xa[:, None, 1], xb[None, :, 1]), 0, None)
    inter = iw * ih
    area_a = (xa[:, 2] - xa[:, 0]) * (xa[:, 3] - xa[:, 1])
    area_b = (xb[:, 2] - xb[:, 0]) * (xb[:, 3] - xb[:, 1])
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def _sym(p: np.ndarray) -> np.ndarray:
    return 0.5 * (p + p.T)


def kalman_predict(st: KalmanState, params: KalmanParams | None = None) -> KalmanState:
    p = params or KalmanParams()
    mean = st.mean.copy()
    # a shrinking box must not predict non-positive area
    if mean[2] + mean[6] <= 0:
        mean[6] = 0.0
    mean = _F @ mean
    cov = _sym(_F @ st.covariance @ _F.T + _process_noise(p))
    return KalmanState(mean, cov)


def kalman_update(st: KalmanState, z: BBox | np.ndarray, params: KalmanParams | None = None) -> KalmanState:
    p = params or KalmanParams()
    zv = bbox_to_z(z) if isinstance(z, BBox) else np.asarray(z, dtype=float)
    P = st.covariance
    S = _H @ P @ _H.T + _measurement_noise(p)
    K = np.linalg.solve(S, _H @ P).T
    innovation = zv - _H @ st.mean
    mean = st.mean + K @ innovation
    # Joseph form keeps the posterior symmetric PSD under rounding
    IKH = np.eye(7) - K @ _H
    cov = _sym(IKH @ P @ IKH.T + K @ _measurement_noise(p) @ K.T)
    return KalmanState(mean, cov)


# ---------------------------------------------------------------------------
# tracks

class TrackStatus(str, enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    DEAD = "dead"


@dataclass
class Track:
    id: int
    state: KalmanState
    hits: int = 1
    age_since_update: int = 0
    status: TrackStatus = TrackStatus.TENTATIVE
    was_confirmed: bool = False
    history: list[tuple[int, BBox]] = field(default_factory=list)

    @property
    def alive(self) -> bool:
        return self.status is not TrackStatus.DEAD


@dataclass(frozen=True)
class TrackerConfig:
    max_age: int = 1
    min_hits: int = 3
    iou_gate: float = 0.3
    kalman: KalmanParams = KalmanParams()

    def __post_init__(self) -> None:
        if self.max_age < 0:
            raise ValueError("max_age must be >= 0")
        if self.min_hits < 1:
            raise ValueError("min_hits must be >= 1")
        if not 0.0 <= self.iou_gate <= 1.0:
            raise ValueError("iou_gate must lie in [0, 1]")


@dataclass(frozen=True)
class ChurnReport:
    total_track_ids: int
    confirmed_track_ids: int
    ground_truth_tracks: int | None = None

    @property
    def churn_ratio(self) -> float | None:
        if not self.ground_truth_tracks:
            return None
        return self.confirmed_track_ids / self.ground_truth_tracks

    def as_dict(self) -> dict:
        return {
            "total_track_ids": self.total_track_ids,
            "confirmed_track_ids": self.confirmed_track_ids,
            "ground_truth_tracks": self.ground_truth_tracks,
            "churn_ratio": self.churn_ratio,
        }


class SortTracker:
    """Stateful frame loop; feed frames in ascending order through :meth:`step`."""

    def __init__(self, cfg: TrackerConfig | None = None) -> None:
        self.cfg = cfg or TrackerConfig()
        self.tracks: list[Track] = []
        self._next_id = 1

    @property
    def live(self) -> list[Track]:
        return [t for t in self.tracks if t.alive]

    def _confirm_if_ready(self, t: Track) -> None:
        if t.status is TrackStatus.TENTATIVE and t.hits >= self.cfg.min_hits:
            t.status = TrackStatus.CONFIRMED
            t.was_confirmed = True

    def step(self, frame_id: int, boxes: Sequence[BBox]) -> list[tuple[int, int]]:
        """Advance one frame; returns (detection index, track id) for every detection."""
        cfg = self.cfg
        live = self.live
        for t in live:
            t.state = kalman_predict(t.state, cfg.kalman)
            t.age_since_update += 1

        matched: list[tuple[int, Track]] = []
        unmatched = set(range(len(boxes)))
        if live and boxes:
            predicted = [t.state.bbox() for t in live]
            ious = _pairwise_iou(boxes, predicted)
            cost = np.where((ious >= cfg.iou_gate) & (ious > 0.0), 1.0 - ious, FORBIDDEN)
            for d, k in hungarian(cost):
                if cost[d, k] < FORBIDDEN:
                    matched.append((d, live[k]))
                    unmatched.discard(d)

        out = []
        for d, t in matched:
            t.state = kalman_update(t.state, boxes[d], cfg.kalman)
            t.hits += 1
            t.age_since_update = 0
            t.history.append((frame_id, boxes[d]))
            self._confirm_if_ready(t)
            out.append((d, t.id))
        for d in sorted(unmatched):
            t = Track(id=self._next_id, state=KalmanState.from_bbox(boxes[d], cfg.kalman))
            self._next_id += 1
            t.history.append((frame_id, boxes[d]))
            self._confirm_if_ready(t)
            self.tracks.append(t)
            out.append((d, t.id))
        for t in live:
            if t.age_since_update > cfg.max_age:
                t.status = TrackStatus.DEAD
        return sorted(out)

    def report(self, ground_truth_tracks: int | None = None) -> ChurnReport:
        return ChurnReport(
            total_track_ids=len(self.tracks),
            confirmed_track_ids=sum(t.was_confirmed for t in self.tracks),
            ground_truth_tracks=ground_truth_tracks,
        )


def track_sequence(
    frames: FrameSet | Iterable[tuple[int, Sequence[Detection]]],
    cfg: TrackerConfig | None = None,
    ground_truth_tracks: int | None = None,
) -> tuple[list[Track], ChurnReport]:
    """Run the tracker over a whole video.

    ``frames`` is a FrameSet (its detections are used) or ``(frame_id, detections)``
    pairs. Frames must be in ascending order; a frame with no detections still
    advances every track by one step.
    """
    if isinstance(frames, FrameSet):
        items: Iterable[tuple[int, Sequence[Detection]]] = ((f, frames.detections_by_frame[f]) for f in frames.frames)
    else:
        items = frames
    tracker = SortTracker(cfg)
    last = None
    for frame_id, dets in items:
        if last is not None and frame_id <= last:
            raise ValueError(f"frames must be strictly ascending ({frame_id} after {last})")
        last = frame_id
        tracker.step(frame_id, [d.bbox for d in dets])
    return tracker.tracks, tracker.report(ground_truth_tracks)


def serialize_tracks(tracks: Iterable[Track], confirmed_only: bool = True) -> str:
    rows = []
    for t in tracks:
        if confirmed_only and not t.was_confirmed:
            continue
        rows.extend((f, t.id, b) for f, b in t.history)
    rows.sort(key=lambda r: (r[0], r[1]))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("frame_id", "track_id", "x", "y", "w", "h"))
    for f, tid, b in rows:
        w.writerow((f, tid, repr(b.x), repr(b.y), repr(b.w), repr(b.h)))
    return buf.getvalue()
