"""Signal-level simulation of a camera's auto exposure / auto gain loop under flicker.

Nothing is rendered. Per frame the camera integrates the scene illumination over
its exposure window, multiplies by gain, optionally quantizes the result (a
stand-in for lossy compression) and feeds the captured level back into its
exposure/gain controller. A surrogate detector turns each object's SNR into a
detection probability, and seeded draws turn those into a true-positive count.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from camflux.core import TpSeries


def default_contrasts() -> tuple[float, ...]:
    # 16 static objects, dim to clearly visible at the default exposure ceiling
    return tuple(float(c) for c in np.round(np.linspace(0.05, 0.20, 16), 6))


@dataclass(frozen=True)
class CamSimConfig:
    fps: float = 30.0
    n_frames: int = 1000
    e_max: float = 0.25
    e_min: float = 1.0 / 8000.0
    g_max: float = 8.0
    flicker_depth: float = 0.0
    mains_hz: float = 60.0
    target_signal: float = 1.0
    controller_alpha: float = 0.5
    read_noise: float = 0.02
    quantization_levels: int | None = None
    seed: int = 0
    init_exposure: float | None = None  # None: start at e_max
    init_gain: float = 1.0

    def __post_init__(self) -> None:
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if not 0.0 < self.e_min <= self.e_max:
            raise ValueError(f"need 0 < e_min <= e_max, got e_min={self.e_min} e_max={self.e_max}")
        if self.g_max < 1.0:
            raise ValueError("g_max must be >= 1")
        if not 0.0 <= self.flicker_depth <= 1.0:
            raise ValueError("flicker_depth must lie in [0, 1]")
        if self.mains_hz <= 0:
            raise ValueError("mains_hz must be positive")
        if self.target_signal <= 0:
            raise ValueError("target_signal must be positive")
        if not 0.0 < self.controller_alpha <= 1.0:
            raise ValueError("controller_alpha must lie in (0, 1]")
        if self.read_noise <= 0:
            raise ValueError("read_noise must be positive")
        if self.quantization_levels is not None and self.quantization_levels < 2:
            raise ValueError("quantization_levels must be >= 2 (or None)")
        if not 1.0 <= self.init_gain <= self.g_max:
            raise ValueError("init_gain must lie in [1, g_max]")
        if self.init_exposure is not None and not self.e_min <= self.init_exposure <= self.e_max:
            raise ValueError("init_exposure must lie in [e_min, e_max]")


@dataclass(frozen=True)
class SceneConfig:
    contrasts: tuple[float, ...] = field(default_factory=default_contrasts)
    detector_beta: float = 8.0
    detector_theta: float = 1.0

    def __post_init__(self) -> None:
        if any(not 0.0 < c <= 1.0 for c in self.contrasts):
            raise ValueError("object contrasts must lie in (0, 1]")
        if self.detector_beta <= 0:
            raise ValueError("detector_beta must be positive")

    @property
    def n_objects(self) -> int:
        return len(self.contrasts)


@dataclass(frozen=True)
class FrameSignal:
    frame_id: int
    exposure: float
    gain: float
    signal: float
    sigma: float
    per_object_snr: tuple[float, ...] = ()


def illumination(t: float, cfg: CamSimConfig) -> float:
    """Lamp output 1 + m sin^2(2 pi f_mains t); period 1/(2 f_mains)."""
    return 1.0 + cfg.flicker_depth * math.sin(2.0 * math.pi * cfg.mains_hz * t) ** 2


def integrated_illumination(t0: float, e: float, cfg: CamSimConfig) -> float:
    """Closed-form integral of :func:`illumination` over [t0, t0 + e]."""
    m = cfg.flicker_depth
    if m == 0.0:
        return e
    w2 = 4.0 * math.pi * cfg.mains_hz  # angular frequency of the sin^2 ripple
    period = 1.0 / (2.0 * cfg.mains_hz)
    phase0 = w2 * math.fmod(t0, period)
    # sin(a) - sin(b) as a product avoids cancellation for short exposures
    ripple = 2.0 * math.cos(phase0 + 0.5 * w2 * e) * math.sin(0.5 * w2 * e)
    return e * (1.0 + 0.5 * m) - m * ripple / (2.0 * w2)


def quantize(signal: float, cfg: CamSimConfig) -> float:
    q = cfg.quantization_levels
    if q is None:
        return signal
    step = 2.0 * cfg.target_signal / (q - 1)
    return min(q - 1, max(0, round(signal / step))) * step


def capture_frame(
    k: int, e: float, g: float, cfg: CamSimConfig, contrasts: tuple[float, ...] = ()
) -> FrameSignal:
    """Capture frame ``k`` (starting at t = k / fps) with exposure ``e`` and gain ``g``."""
    signal = quantize(g * integrated_illumination(k / cfg.fps, e, cfg), cfg)
    sigma = cfg.read_noise * g
    return FrameSignal(k, e, g, signal, sigma, tuple(c * signal / sigma for c in contrasts))


def auto_controller_step(prev: FrameSignal, cfg: CamSimConfig) -> tuple[float, float]:
    """Exposure-first proportional-in-log control toward the target signal level.

    Exposure moves by (target / captured) ** alpha. Gain only rises once exposure
    is pinned at its ceiling and the frame is still too dark; otherwise it relaxes
    toward 1 by the same factor.
    """
    if prev.signal <= 0.0:
        return cfg.e_max, cfg.g_max
    ratio = (cfg.target_signal / prev.signal) ** cfg.controller_alpha
    e_next = min(cfg.e_max, max(cfg.e_min, prev.exposure * ratio))
    if e_next >= cfg.e_max and prev.signal < cfg.target_signal:
        g_next = prev.gain * ratio
    else:
        g_next = prev.gain * min(1.0, ratio)
    return e_next, min(cfg.g_max, max(1.0, g_next))


def detection_probability(snr: np.ndarray, scene: SceneConfig) -> np.ndarray:
    x = scene.detector_beta * (np.asarray(snr, dtype=float) - scene.detector_theta)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def frame_uniforms(seed: int, k: int, n: int) -> np.ndarray:
    """Uniform draws for frame ``k``; independent of how many frames are simulated."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,))).random(n)


@dataclass(frozen=True)
class SimulationResult:
    frames: tuple[FrameSignal, ...]
    series: TpSeries
    detected: np.ndarray  # (n_frames, n_objects) bool


def simulate(cam: CamSimConfig, scene: SceneConfig | None = None) -> SimulationResult:
    scene = scene or SceneConfig()
    contrasts = tuple(scene.contrasts)
    n_obj = len(contrasts)
    e = cam.e_max if cam.init_exposure is None else cam.init_exposure
    g = cam.init_gain
    frames = []
    detected = np.zeros((cam.n_frames, n_obj), dtype=bool)
    for k in range(cam.n_frames):
        sig = capture_frame(k, e, g, cam, contrasts)
        frames.append(sig)
        if n_obj:
            p = detection_probability(np.asarray(sig.per_object_snr), scene)
            detected[k] = frame_uniforms(cam.seed, k, n_obj) < p
        e, g = auto_controller_step(sig, cam)
    tp = detected.sum(axis=1)
    series = TpSeries(tuple(range(cam.n_frames)), tuple(int(v) for v in tp), (n_obj,) * cam.n_frames)
    return SimulationResult(tuple(frames), series, detected)


def with_overrides(cfg: CamSimConfig, **kw) -> CamSimConfig:
    return replace(cfg, **kw)


def serialize_frame_signals(frames: tuple[FrameSignal, ...] | list[FrameSignal]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("frame_id", "exposure_s", "gain", "E", "sigma"))
    for f in frames:
        w.writerow((f.frame_id, repr(f.exposure), repr(f.gain), repr(f.signal), repr(f.sigma)))
    return buf.getvalue()
