"""Fluctuation of true-positive counts over sliding windows of consecutive frames.

For a window of ``n`` frames starting at position ``i`` the value is::

    (max(tp[i:i+n]) - min(tp[i:i+n])) / mean(gt[i:i+n])

``n = 2`` gives the two-frame metric (F2), ``n = 10`` the ten-frame one (F10).
Windows whose mean ground truth is zero have no defined value and are counted
in ``skipped`` instead.
"""

from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import dataclass

from camflux.core import TpSeries


class SeriesTooShort(ValueError):
    pass


@dataclass(frozen=True)
class FluxSeries:
    window: int
    values: tuple[float, ...]
    start_frames: tuple[int, ...]
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class FluxSummary:
    max: float
    mean: float
    window: int

    def as_dict(self) -> dict:
        return {"window": self.window, "max": self.max, "mean": self.mean}


def fwindow(series: TpSeries, n: int) -> FluxSeries:
    if n < 2:
        raise ValueError(f"window must be at least 2, got {n}")
    length = len(series)
    if length < n:
        raise SeriesTooShort(f"series of length {length} is shorter than window {n}")
    tp, gt = series.tp, series.gt
    values: list[float] = []
    starts: list[int] = []
    skipped = 0
    # monotone deques give O(length) sliding max/min
    hi: deque[int] = deque()
    lo: deque[int] = deque()
    gt_sum = sum(gt[: n - 1])
    for k in range(length):
        while hi and tp[hi[-1]] <= tp[k]:
            hi.pop()
        hi.append(k)
        while lo and tp[lo[-1]] >= tp[k]:
            lo.pop()
        lo.append(k)
        i = k - n + 1
        if i < 0:
            continue
        if hi[0] < i:
            hi.popleft()
        if lo[0] < i:
            lo.popleft()
        if i > 0:
            gt_sum += gt[k] - gt[i - 1]
        else:
            gt_sum += gt[k]
        if gt_sum == 0:
            skipped += 1
            continue
        values.append((tp[hi[0]] - tp[lo[0]]) / (gt_sum / n))
        starts.append(series.frame_ids[i])
    return FluxSeries(window=n, values=tuple(values), start_frames=tuple(starts), skipped=skipped)


def f2(series: TpSeries) -> FluxSeries:
    return fwindow(series, 2)


def f10(series: TpSeries) -> FluxSeries:
    return fwindow(series, 10)


def summarize(flux: FluxSeries) -> FluxSummary:
    if not flux.values:
        raise ValueError(f"no defined window values to summarize (window={flux.window}, skipped={flux.skipped})")
    return FluxSummary(max=max(flux.values), mean=sum(flux.values) / len(flux.values), window=flux.window)


def serialize_flux_series(flux: FluxSeries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("window_start_frame", "value"))
    for f, v in zip(flux.start_frames, flux.values):
        w.writerow((f, repr(v)))
    return buf.getvalue()
