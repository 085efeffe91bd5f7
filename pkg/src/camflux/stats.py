"""Repeated-measures (paired difference) t-test and the Student-t machinery behind it."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

from camflux.core import TpSeries

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 100_000
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# special functions

def _stirling_delta(x: float) -> float:
    """lgamma(x) minus its leading Stirling terms; small and smooth for x >= 10."""
    if x >= 10.0:
        r = 1.0 / x
        r2 = r * r
        return r * (
            1 / 12 - r2 * (1 / 360 - r2 * (1 / 1260 - r2 * (1 / 1680 - r2 * (1 / 1188 - r2 * (691 / 360360 - r2 / 156)))))
        )
    return math.lgamma(x) - ((x - 0.5) * math.log(x) - x + _HALF_LOG_2PI)


def log_beta(a: float, b: float) -> float:
    """log B(a, b), accurate when one argument is much larger than the other."""
    if a < b:
        a, b = b, a
    if a < 10.0:
        return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    # lgamma(a) - lgamma(a+b) expanded so the large terms cancel analytically
    diff = (
        _stirling_delta(a)
        - _stirling_delta(a + b)
        - (a - 0.5) * math.log1p(b / a)
        - b * math.log(a + b)
        + b
    )
    return math.lgamma(b) + diff


def _betacf(x: float, a: float, b: float) -> float:
    # modified Lentz evaluation of the incomplete beta continued fraction
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (x={x}, a={a}, b={b})")


def _log_power_terms(x: float, y: float, a: float, b: float) -> float:
    """log(x**a * y**b / B(a, b))."""
    if min(a, b) < 10.0:
        log_x = math.log(x) if x < 0.5 else math.log1p(-y)
        log_y = math.log(y) if y < 0.5 else math.log1p(-x)
        return a * log_x + b * log_y - log_beta(a, b)
    # both large: expand around the mode x0 = a/(a+b) so the O(a) terms cancel
    c = a + b
    # x0 + y0 == 1 exactly, so the first-order terms of dev cancel despite rounding
    if a <= b:
        x0 = a / c
        y0 = 1.0 - x0
    else:
        y0 = b / c
        x0 = 1.0 - y0
    if x <= 0.5:
        dx = x - x0
        dy = -dx
    else:
        dy = y - y0
        dx = -dy
    # far from the mode the ratio itself is exact enough; log1p would round to -1
    lx = math.log(x / x0) if x < 0.5 * x0 else math.log1p(dx / x0)
    ly = math.log(y / y0) if y < 0.5 * y0 else math.log1p(dy / y0)
    dev = a * lx + b * ly
    return (
        dev
        + 0.5 * math.log(a * b / c)
        - _HALF_LOG_2PI
        - _stirling_delta(a)
        - _stirling_delta(b)
        + _stirling_delta(c)
    )


def _ibeta(x: float, y: float, a: float, b: float) -> float:
    # x + y == 1, passed separately so callers can keep precision in the small one
    if x <= 0.0:
        return 0.0
    if y <= 0.0:
        return 1.0
    front = math.exp(_log_power_terms(x, y, a, b))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(x, a, b) / a
    return 1.0 - front * _betacf(y, b, a) / b


def incomplete_beta(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    return _ibeta(x, 1.0 - x, a, b)


def _t_tail(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with df degrees of freedom."""
    t2 = t * t
    if t2 == 0.0:
        return 1.0
    if math.isinf(t2):
        return 0.0
    denom = df + t2
    return _ibeta(df / denom, t2 / denom, 0.5 * df, 0.5)


def t_cdf(t: float, df: float) -> float:
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    half_tail = 0.5 * _t_tail(t, df)
    return half_tail if t < 0 else 1.0 - half_tail


def t_sf(t: float, df: float) -> float:
    """Upper tail P(T > t), without the cancellation of ``1 - t_cdf``."""
    return t_cdf(-t, df)


def t_ppf(p: float, df: float) -> float:
    """Inverse of :func:`t_cdf` by bracketed bisection."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -t_ppf(1.0 - p, df)
    hi = 1.0
    while t_cdf(hi, df) < p:
        hi *= 2.0
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if t_cdf(mid, df) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# paired test

@dataclass(frozen=True)
class DiffSeries:
    """Difference scores d = B - A, paired by position."""

    d: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.d) < 2:
            raise ValueError(f"a difference series needs at least 2 values, got {len(self.d)}")

    @property
    def n(self) -> int:
        return len(self.d)


def diff_series(a: TpSeries | Sequence[float], b: TpSeries | Sequence[float]) -> DiffSeries:
    """Pair two runs by position (not by frame id) and return B - A."""
    av = a.tp if isinstance(a, TpSeries) else tuple(a)
    bv = b.tp if isinstance(b, TpSeries) else tuple(b)
    if len(av) != len(bv):
        raise ValueError(f"cannot pair series of lengths {len(av)} and {len(bv)}")
    return DiffSeries(tuple(y - x for x, y in zip(av, bv)))


@dataclass(frozen=True)
class EffectSize:
    mean_diff: float
    sd: float
    ci_low: float
    ci_high: float
    level: float
    relative_effect: float | None


def effect_size(d: DiffSeries, alpha: float = 0.01, baseline_mean: float | None = None) -> EffectSize:
    """Mean paired difference with its (1 - alpha) two-sided confidence interval.

    ``relative_effect`` is ``mean_diff / baseline_mean``, e.g. extra detections per
    frame as a fraction of the baseline detector's mean count. It is ``None`` when
    no usable baseline is given.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    n = d.n
    mean = math.fsum(d.d) / n
    var = math.fsum((v - mean) ** 2 for v in d.d) / (n - 1)
    sd = math.sqrt(var)
    half = t_ppf(1.0 - alpha / 2.0, n - 1) * sd / math.sqrt(n) if sd > 0 else 0.0
    rel = mean / baseline_mean if baseline_mean else None
    return EffectSize(mean, sd, mean - half, mean + half, 1.0 - alpha, rel)


@dataclass(frozen=True)
class PairedTestReport:
    t_stat: float
    df: int
    p_value: float
    p_two_sided: float
    alternative: str
    alpha: float
    reject_null: bool
    mean_diff: float
    sd_diff: float
    n: int
    ci_low: float
    ci_high: float
    ci_level: float
    relative_effect: float | None
    baseline_mean: float | None
    degenerate: bool = False

    def as_dict(self) -> dict:
        out = asdict(self)
        if math.isinf(self.t_stat):
            # strict JSON has no infinity; the degenerate flag carries the meaning
            out["t_stat"] = None
        return out


ALTERNATIVES = ("two-sided", "greater", "less")


def paired_t_test(
    d: DiffSeries,
    alpha: float = 0.01,
    baseline_mean: float | None = None,
    alternative: str = "two-sided",
) -> PairedTestReport:
    """One-sample t-test of the difference scores against a zero population mean."""
    if alternative not in ALTERNATIVES:
        raise ValueError(f"alternative must be one of {ALTERNATIVES}, got {alternative!r}")
    es = effect_size(d, alpha, baseline_mean)
    n, df = d.n, d.n - 1
    degenerate = False
    if es.sd == 0.0:
        if es.mean_diff == 0.0:
            t, p2, p_greater = 0.0, 1.0, 0.5
        else:
            degenerate = True
            t = math.copysign(math.inf, es.mean_diff)
            p2, p_greater = 0.0, (0.0 if t > 0 else 1.0)
    else:
        t = es.mean_diff / (es.sd / math.sqrt(n))
        p2, p_greater = _t_tail(t, df), t_sf(t, df)
    if alternative == "two-sided":
        p = p2
    elif alternative == "greater":
        p = p_greater
    else:
        p = 1.0 - p_greater if degenerate or t == 0.0 else t_cdf(t, df)
    return PairedTestReport(
        t_stat=t,
        df=df,
        p_value=p,
        p_two_sided=p2,
        alternative=alternative,
        alpha=alpha,
        reject_null=p < alpha,
        mean_diff=es.mean_diff,
        sd_diff=es.sd,
        n=n,
        ci_low=es.ci_low,
        ci_high=es.ci_high,
        ci_level=es.level,
        relative_effect=es.relative_effect,
        baseline_mean=baseline_mean,
        degenerate=degenerate,
    )
