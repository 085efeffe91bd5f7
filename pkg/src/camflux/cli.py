"""Command-line front end: ``camflux analyze|compare|track|simulate``.

Exit codes: 0 success, 2 input or configuration error, 3 semantic error
(series too short for a window, runs that cannot be paired).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path
from typing import Any, Callable

from camflux import __version__
from camflux.camsim import CamSimConfig, SceneConfig, serialize_frame_signals, simulate
from camflux.core import (
    ParseError,
    TpSeries,
    build_frameset,
    normalize_label,
    parse_detection_log,
    parse_ground_truth,
    parse_tp_series,
    serialize_tp_series,
)
from camflux.fluxmetrics import SeriesTooShort, fwindow, serialize_flux_series, summarize
from camflux.matcher import MatchConfig, count_series
from camflux.stats import ALTERNATIVES, diff_series, paired_t_test
from camflux.tracker import TrackerConfig, serialize_tracks, track_sequence

log = logging.getLogger("camflux")

EXIT_OK, EXIT_INPUT, EXIT_SEMANTIC = 0, 2, 3


class InputError(Exception):
    pass


class SemanticError(Exception):
    pass


# ---------------------------------------------------------------------------
# option parsing helpers

def _bool(s: str) -> bool:
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_int(s: str) -> int | None:
    return None if str(s).strip().lower() in ("", "none") else int(s)


def _opt_float(s: str) -> float | None:
    return None if str(s).strip().lower() in ("", "none") else float(s)


def _float_list(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in str(s).split(",") if v.strip())


def _int_list(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in str(s).split(",") if v.strip())


# name -> (converter, default); names double as config-file keys
MATCH_KEYS: dict[str, tuple[Callable, Any]] = {
    "iou_threshold": (float, 0.5),
    "strategy": (str, "greedy"),
    "class_sensitive": (_bool, True),
    "det_format": (str, "auto"),
}
ANALYZE_KEYS = {**MATCH_KEYS, "windows": (_int_list, (2, 10)), "format": (str, "csv")}
COMPARE_KEYS = {
    **MATCH_KEYS,
    "alpha": (float, 0.01),
    "alternative": (str, "two-sided"),
    "windows": (_int_list, (2, 10)),
}
TRACK_KEYS = {
    "max_age": (int, 1),
    "min_hits": (int, 3),
    "iou_gate": (float, 0.3),
    "class_filter": (str, ""),
    "det_format": (str, "auto"),
    "all_tracks": (_bool, False),
}
_CAM_DEFAULTS = CamSimConfig()
_SCENE_DEFAULTS = SceneConfig()
SIM_KEYS: dict[str, tuple[Callable, Any]] = {
    "fps": (float, _CAM_DEFAULTS.fps),
    "n_frames": (int, _CAM_DEFAULTS.n_frames),
    "e_max": (float, _CAM_DEFAULTS.e_max),
    "e_min": (float, _CAM_DEFAULTS.e_min),
    "g_max": (float, _CAM_DEFAULTS.g_max),
    "flicker_depth": (float, _CAM_DEFAULTS.flicker_depth),
    "mains_hz": (float, _CAM_DEFAULTS.mains_hz),
    "target_signal": (float, _CAM_DEFAULTS.target_signal),
    "controller_alpha": (float, _CAM_DEFAULTS.controller_alpha),
    "read_noise": (float, _CAM_DEFAULTS.read_noise),
    "quantization_levels": (_opt_int, _CAM_DEFAULTS.quantization_levels),
    "seed": (int, _CAM_DEFAULTS.seed),
    "init_exposure": (_opt_float, _CAM_DEFAULTS.init_exposure),
    "init_gain": (float, _CAM_DEFAULTS.init_gain),
    "contrasts": (_float_list, _SCENE_DEFAULTS.contrasts),
    "detector_beta": (float, _SCENE_DEFAULTS.detector_beta),
    "detector_theta": (float, _SCENE_DEFAULTS.detector_theta),
    "alpha": (float, 0.01),
    "format": (str, "csv"),
}


def read_config_file(path: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    text = _read_text(path)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def merge_config(spec: dict[str, tuple[Callable, Any]], file_values: dict[str, str], flags: dict[str, Any]) -> dict:
    """flags > config file > built-in defaults."""
    unknown = sorted(set(file_values) - set(spec))
    if unknown:
        raise InputError(f"unknown config key(s): {', '.join(unknown)}")
    cfg = {}
    for key, (conv, default) in spec.items():
        value = default
        if key in file_values:
            try:
                value = conv(file_values[key])
            except ValueError as exc:
                raise InputError(f"config key {key}: {exc}") from None
        if flags.get(key) is not None:
            value = flags[key]
        cfg[key] = value
    return cfg


# ---------------------------------------------------------------------------
# io

def _read_bytes(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None


def _read_text(path: str) -> str:
    data = _read_bytes(path)
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError:
        raise InputError(f"{path}: not valid UTF-8") from None


class Run:
    """Collects input digests and writes artifacts for one command invocation."""

    def __init__(self, command: str, out_dir: str) -> None:
        self.command = command
        self.out = Path(out_dir)
        self.digests: dict[str, str] = {}
        self.config: dict[str, Any] = {}

    def read(self, path: str) -> bytes:
        data = _read_bytes(path)
        self.digests[path] = "sha256:" + hashlib.sha256(data).hexdigest()
        return data

    def manifest(self) -> dict:
        return {
            "command": self.command,
            "config_snapshot": _jsonable(self.config),
            "input_digests": dict(sorted(self.digests.items())),
            "tool_version": __version__,
        }

    def write(self, name: str, text: str) -> Path:
        path = self.out / name
        try:
            self.out.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot write {path}: {exc.strerror or exc}") from None
        log.info("wrote %s", path)
        return path

    def write_json(self, name: str, payload: dict) -> Path:
        body = {**payload, "manifest": self.manifest()}
        return self.write(name, json.dumps(_jsonable(body), indent=2, sort_keys=True, allow_nan=False) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "item") and callable(obj.item):  # numpy scalars
        return obj.item()
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):  # str enums
        return obj.value
    return obj


def _det_format(path: str, fmt: str) -> str:
    if fmt != "auto":
        return fmt
    return "jsonl" if path.lower().endswith((".jsonl", ".json", ".ndjson")) else "csv"


def _load_dets(run: Run, path: str, fmt: str):
    try:
        return parse_detection_log(run.read(path), _det_format(path, fmt))
    except ParseError as exc:
        raise InputError(f"{path}: {exc}") from None
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _load_gt(run: Run, path: str):
    try:
        return parse_ground_truth(run.read(path))
    except ParseError as exc:
        raise InputError(f"{path}: {exc}") from None


def _load_series(run: Run, path: str) -> TpSeries:
    try:
        return parse_tp_series(run.read(path))
    except ParseError as exc:
        raise InputError(f"{path}: {exc}") from None


def _match_config(cfg: dict) -> MatchConfig:
    try:
        return MatchConfig(cfg["iou_threshold"], cfg["class_sensitive"], cfg["strategy"])
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _series_text(series: TpSeries, fmt: str) -> str:
    if fmt == "json":
        return json.dumps({"frame_id": series.frame_ids, "tp": series.tp, "gt": series.gt}) + "\n"
    return serialize_tp_series(series)


def _flux_text(flux, fmt: str) -> str:
    if fmt == "json":
        return json.dumps({"window": flux.window, "window_start_frame": flux.start_frames, "value": flux.values}) + "\n"
    return serialize_flux_series(flux)


def _summaries(series: TpSeries, windows) -> dict[str, dict]:
    out = {}
    for n in windows:
        try:
            flux = fwindow(series, n)
        except SeriesTooShort as exc:
            raise SemanticError(str(exc)) from None
        entry = {"window": n, "skipped": flux.skipped, "n_values": len(flux)}
        if flux.values:
            entry.update(summarize(flux).as_dict())
        out[f"F{n}"] = entry
    return out


def _pct(x) -> str:
    return "n/a" if x is None else f"{100.0 * x:.1f}%"


# ---------------------------------------------------------------------------
# commands

def cmd_analyze(args: argparse.Namespace) -> int:
    run = Run("analyze", args.out)
    cfg = merge_config(ANALYZE_KEYS, read_config_file(args.config) if args.config else {}, vars(args))
    run.config = dict(cfg)
    if args.series:
        series = _load_series(run, args.series)
    else:
        if not (args.det and args.gt):
            raise InputError("analyze needs --det and --gt, or --series")
        dets = _load_dets(run, args.det, cfg["det_format"])
        gts = _load_gt(run, args.gt)
        series = count_series(build_frameset(dets, gts), _match_config(cfg))
    windows = sorted(set(cfg["windows"]))
    if any(n < 2 for n in windows):
        raise InputError("windows must be >= 2")
    fmt = cfg["format"]
    ext = "json" if fmt == "json" else "csv"
    summaries = _summaries(series, windows)
    run.write(f"tp_series.{ext}", _series_text(series, fmt))
    for n in windows:
        run.write(f"flux_F{n}.{ext}", _flux_text(fwindow(series, n), fmt))
    run.write_json("flux_summary.json", {"n_frames": len(series), "summaries": summaries})
    for key, s in summaries.items():
        print(f"{key}: max {_pct(s.get('max'))}  mean {_pct(s.get('mean'))}  ({s['n_values']} windows, {s['skipped']} skipped)")
    return EXIT_OK


def _compare_series(a: TpSeries, b: TpSeries, alpha: float, alternative: str, windows) -> dict:
    try:
        d = diff_series(a, b)
    except ValueError as exc:
        raise SemanticError(str(exc)) from None
    baseline = sum(a.tp) / len(a.tp)
    report = paired_t_test(d, alpha, baseline, alternative)
    return {
        "paired_test": report.as_dict(),
        "flux_a": _summaries(a, windows),
        "flux_b": _summaries(b, windows),
        "mean_tp_a": baseline,
        "mean_tp_b": sum(b.tp) / len(b.tp),
        "n_frames": len(a),
    }


def _print_compare(payload: dict) -> None:
    r = payload["paired_test"]
    verdict = "reject" if r["reject_null"] else "retain"
    print(
        f"paired t-test (B - A): t={r['t_stat']} df={r['df']} p={r['p_value']:.3g} -> {verdict} H0 at alpha={r['alpha']}"
    )
    print(
        f"mean difference {r['mean_diff']:.4g} detections/frame, {100 * r['ci_level']:.0f}% CI "
        f"[{r['ci_low']:.4g}, {r['ci_high']:.4g}], relative {_pct(r['relative_effect'])}"
    )


def _check_alpha(cfg: dict) -> None:
    if not 0.0 < cfg["alpha"] < 1.0:
        raise InputError(f"alpha must lie in (0, 1), got {cfg['alpha']}")


def cmd_compare(args: argparse.Namespace) -> int:
    run = Run("compare", args.out)
    cfg = merge_config(COMPARE_KEYS, read_config_file(args.config) if args.config else {}, vars(args))
    run.config = dict(cfg)
    _check_alpha(cfg)
    if cfg["alternative"] not in ALTERNATIVES:
        raise InputError(f"alternative must be one of {ALTERNATIVES}")
    if args.series_a or args.series_b:
        if not (args.series_a and args.series_b):
            raise InputError("compare needs both --series-a and --series-b")
        a, b = _load_series(run, args.series_a), _load_series(run, args.series_b)
    else:
        if not (args.det_a and args.det_b and args.gt):
            raise InputError("compare needs --det-a, --det-b and --gt, or --series-a and --series-b")
        mcfg = _match_config(cfg)
        gts = _load_gt(run, args.gt)
        a = count_series(build_frameset(_load_dets(run, args.det_a, cfg["det_format"]), gts), mcfg)
        b = count_series(build_frameset(_load_dets(run, args.det_b, cfg["det_format"]), gts), mcfg)
    payload = _compare_series(a, b, cfg["alpha"], cfg["alternative"], cfg["windows"])
    run.write("series_a.csv", serialize_tp_series(a))
    run.write("series_b.csv", serialize_tp_series(b))
    run.write_json("compare_report.json", payload)
    _print_compare(payload)
    return EXIT_OK


def cmd_track(args: argparse.Namespace) -> int:
    run = Run("track", args.out)
    cfg = merge_config(TRACK_KEYS, read_config_file(args.config) if args.config else {}, vars(args))
    run.config = dict(cfg)
    dets = _load_dets(run, args.det, cfg["det_format"])
    if cfg["class_filter"]:
        wanted = normalize_label(cfg["class_filter"])
        dets = [d for d in dets if normalize_label(d.class_label) == wanted]
    gt_tracks = None
    if args.gt:
        gts = _load_gt(run, args.gt)
        if cfg["class_filter"]:
            gts = [g for g in gts if normalize_label(g.class_label) == normalize_label(cfg["class_filter"])]
        gt_tracks = len({g.object_id for g in gts})
    try:
        tcfg = TrackerConfig(max_age=cfg["max_age"], min_hits=cfg["min_hits"], iou_gate=cfg["iou_gate"])
    except ValueError as exc:
        raise InputError(str(exc)) from None
    tracks, report = track_sequence(build_frameset(dets, []), tcfg, gt_tracks)
    run.write("tracks.csv", serialize_tracks(tracks, confirmed_only=not cfg["all_tracks"]))
    run.write_json("churn_report.json", {"churn": report.as_dict(), "tracker": asdict(tcfg)})
    ratio = report.churn_ratio
    print(
        f"track ids: {report.total_track_ids} total, {report.confirmed_track_ids} confirmed"
        + (f", {gt_tracks} ground-truth tracks (ratio {ratio:.2f})" if ratio is not None else "")
    )
    return EXIT_OK


def _sim_configs(cfg: dict) -> tuple[CamSimConfig, SceneConfig]:
    cam_fields = {f.name for f in fields(CamSimConfig)}
    scene_fields = {f.name for f in fields(SceneConfig)}
    try:
        cam = CamSimConfig(**{k: v for k, v in cfg.items() if k in cam_fields})
        scene = SceneConfig(**{k: v for k, v in cfg.items() if k in scene_fields})
    except (ValueError, TypeError) as exc:
        raise InputError(str(exc)) from None
    return cam, scene


def _parse_ab(spec: str) -> tuple[str, str, str]:
    try:
        key, values = spec.split("=", 1)
        va, vb = values.split(",")
    except ValueError:
        raise InputError(f"--ab expects key=A,B, got {spec!r}") from None
    key = key.strip().replace("-", "_")
    if key not in SIM_KEYS or key in ("alpha", "format", "seed"):
        raise InputError(f"--ab: {key!r} is not a simulator setting")
    return key, va.strip(), vb.strip()


def _write_sim(run: Run, prefix: str, result, fmt: str) -> None:
    ext = "json" if fmt == "json" else "csv"
    if fmt == "json":
        frames = [asdict(f) for f in result.frames]
        run.write(f"{prefix}frames.json", json.dumps(_jsonable(frames)) + "\n")
    else:
        run.write(f"{prefix}frames.csv", serialize_frame_signals(result.frames))
    run.write(f"{prefix}tp_series.{ext}", _series_text(result.series, fmt))


def cmd_simulate(args: argparse.Namespace) -> int:
    run = Run("simulate", args.out)
    cfg = merge_config(SIM_KEYS, read_config_file(args.config) if args.config else {}, vars(args))
    run.config = dict(cfg)
    _check_alpha(cfg)
    if not args.ab:
        cam, scene = _sim_configs(cfg)
        result = simulate(cam, scene)
        _write_sim(run, "", result, cfg["format"])
        run.write_json("simulation_summary.json", {"summaries": _summaries_or_empty(result.series)})
        print(f"simulated {cam.n_frames} frames, mean tp {sum(result.series.tp) / cam.n_frames:.3f} of {scene.n_objects}")
        return EXIT_OK

    key, va, vb = _parse_ab(args.ab)
    conv = SIM_KEYS[key][0]
    try:
        legs = [{**cfg, key: conv(v)} for v in (va, vb)]
    except ValueError as exc:
        raise InputError(f"--ab: {exc}") from None
    run.config["ab"] = {"key": key, "a": legs[0][key], "b": legs[1][key]}
    configs = [_sim_configs(leg) for leg in legs]
    # the two legs share the seed, so they see the same detector draws
    with ThreadPoolExecutor(max_workers=2) as pool:
        results = list(pool.map(lambda cs: simulate(*cs), configs))
    _write_sim(run, "a_", results[0], cfg["format"])
    _write_sim(run, "b_", results[1], cfg["format"])
    payload = _compare_series(results[0].series, results[1].series, cfg["alpha"], "two-sided", (2, 10))
    run.write_json("compare_report.json", payload)
    print(f"A: {key}={legs[0][key]}  B: {key}={legs[1][key]}")
    for leg, name in (("flux_a", "A"), ("flux_b", "B")):
        f2s = payload[leg]["F2"]
        print(f"{name}: max F2 {_pct(f2s.get('max'))}  mean F2 {_pct(f2s.get('mean'))}")
    _print_compare(payload)
    return EXIT_OK


def _summaries_or_empty(series: TpSeries) -> dict:
    windows = [n for n in (2, 10) if len(series) >= n]
    return _summaries(series, windows)


# ---------------------------------------------------------------------------

def _add_match_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--iou", dest="iou_threshold", type=float, default=None, help="IoU threshold for a true positive")
    p.add_argument("--strategy", choices=("greedy", "optimal"), default=None)
    p.add_argument(
        "--class-agnostic", dest="class_sensitive", action="store_const", const=False, default=None,
        help="match detections to ground truth regardless of class",
    )
    p.add_argument("--det-format", choices=("auto", "csv", "jsonl"), default=None)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file; flags override it")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="camflux", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"camflux {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="F2/F10 fluctuation of one run")
    _add_common(p)
    p.add_argument("--det", help="detection log (CSV or JSONL)")
    p.add_argument("--gt", help="ground truth CSV")
    p.add_argument("--series", help="precomputed tp series CSV instead of --det/--gt")
    p.add_argument("--window", dest="windows", type=int, action="append", default=None)
    p.add_argument("--format", choices=("csv", "json"), default=None)
    _add_match_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("compare", help="paired t-test between two runs, B - A")
    _add_common(p)
    p.add_argument("--det-a")
    p.add_argument("--det-b")
    p.add_argument("--gt")
    p.add_argument("--series-a")
    p.add_argument("--series-b")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--alternative", choices=ALTERNATIVES, default=None)
    p.add_argument("--window", dest="windows", type=int, action="append", default=None)
    _add_match_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("track", help="SORT tracking and track-id churn")
    _add_common(p)
    p.add_argument("--det", required=True)
    p.add_argument("--gt", help="ground truth; distinct object ids give the reference track count")
    p.add_argument("--max-age", type=int, default=None)
    p.add_argument("--min-hits", type=int, default=None)
    p.add_argument("--iou-gate", type=float, default=None)
    p.add_argument("--class", dest="class_filter", default=None, help="only track this class")
    p.add_argument("--det-format", choices=("auto", "csv", "jsonl"), default=None)
    p.add_argument("--all-tracks", action="store_const", const=True, default=None,
                   help="also write tracks that never reached min_hits")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("simulate", help="auto exposure / gain / flicker simulation")
    _add_common(p)
    p.add_argument("--frames", dest="n_frames", type=int, default=None)
    p.add_argument("--fps", type=float, default=None)
    p.add_argument("--e-max", type=float, default=None, help="exposure ceiling in seconds")
    p.add_argument("--e-min", type=float, default=None)
    p.add_argument("--g-max", type=float, default=None)
    p.add_argument("--flicker", dest="flicker_depth", type=float, default=None, help="flicker depth m in [0, 1]")
    p.add_argument("--mains-hz", type=float, default=None)
    p.add_argument("--target", dest="target_signal", type=float, default=None)
    p.add_argument("--controller-alpha", type=float, default=None)
    p.add_argument("--read-noise", type=float, default=None)
    p.add_argument("--quant", dest="quantization_levels", type=_opt_int, default=None)
    p.add_argument("--contrasts", type=_float_list, default=None, help="comma-separated object contrasts")
    p.add_argument("--beta", dest="detector_beta", type=float, default=None)
    p.add_argument("--theta", dest="detector_theta", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--format", choices=("csv", "json"), default=None)
    p.add_argument("--ab", help="run two legs differing in one setting, e.g. e_max=0.25,0.008333")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s", stream=sys.stderr
    )
    if getattr(args, "windows", None) is not None:
        args.windows = tuple(args.windows)
    if getattr(args, "n_frames", None) is not None and args.n_frames < 1:
        print(f"camflux: error: --frames must be >= 1, got {args.n_frames}", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except InputError as exc:
        print(f"camflux: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SemanticError as exc:
        print(f"camflux: error: {exc}", file=sys.stderr)
        return EXIT_SEMANTIC


if __name__ == "__main__":
    sys.exit(main())
