"""Command-line surface: segment, eval, coherence, sweep.

Configuration comes from built-in defaults, then an optional JSON config
file, then flags; later layers win. Exit codes: 0 success, 1 validation
or configuration problem (the message names the offending field), 2 I/O
failure. Set PROXYSEG_LOG to error/warn/info/debug for logging verbosity.
"""

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .attention import ATTN_SOURCES, MASK_MODES, AttentionConfig, correspondence_scores
from .errors import ConfigError, ProxysegError
from .feature_io import load_bundle, load_text, load_weights
from .maps import load_palette, read_label_map, write_color_map, write_label_map
from .metrics import (
    ConfusionMatrix,
    accumulate,
    coherence_pooled,
    merge,
    miou,
    patch_majority,
    write_iou_csv,
    write_pr_csv,
)
from .segmenter import run_pipeline

log = logging.getLogger("proxyseg")

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

_DEFAULTS = {
    "bundles": None,
    "weights": None,
    "text": None,
    "beta": 1.2,
    "gamma": 3.0,
    "mask_mode": "adaptive",
    "alpha": 0.0,
    "attn_source": "proxy",
    "out": None,
    "palette": None,
    "jobs": 1,
    "background_threshold": None,
    "pred": None,
    "gt": None,
    "ignore_index": 255,
    "param": None,
    "values": None,
    "sources": None,
}

_SWEEP_GRIDS = {
    "beta": [round(1.0 + 0.1 * i, 10) for i in range(7)],
    "gamma": [round(2.0 + 0.5 * i, 10) for i in range(7)],
    "alpha": [round(0.2 * i, 10) for i in range(5)],
}


def setup_logging():
    raw = os.environ.get("PROXYSEG_LOG", "warn").lower()
    if raw not in _LOG_LEVELS:
        raise ConfigError("PROXYSEG_LOG", f"must be one of {sorted(_LOG_LEVELS)}, got {raw!r}")
    logging.basicConfig(stream=sys.stderr, level=_LOG_LEVELS[raw], format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(_LOG_LEVELS[raw])


class _Parser(argparse.ArgumentParser):
    # usage problems are configuration errors (exit 1), not I/O (exit 2)
    def error(self, message):
        raise ConfigError("usage", message)


def build_parser():
    parser = _Parser(prog="proxyseg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"proxyseg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def shared(p):
        p.add_argument("--bundles", help="bundle manifest file or directory of manifests")
        p.add_argument("--weights", help="projection weights manifest")
        p.add_argument("--text", help="text embeddings manifest")
        p.add_argument("--beta", type=float, help="similarity shift factor (default 1.2)")
        p.add_argument("--gamma", type=float, help="similarity scale factor (default 3.0)")
        p.add_argument("--mask-mode", choices=MASK_MODES, dest="mask_mode")
        p.add_argument("--alpha", type=float, help="raw-cosine threshold for hard masking")
        p.add_argument("--attn-source", choices=ATTN_SOURCES, dest="attn_source")
        p.add_argument("--out", help="output directory")
        p.add_argument("--palette", help="JSON palette for colorized PNGs")
        p.add_argument("--jobs", type=int, help="parallel workers (default 1)")
        p.add_argument("--config", help="JSON config file; flags override it")

    p_seg = sub.add_parser("segment", help="write one label map per bundle")
    shared(p_seg)
    p_seg.add_argument("--background-threshold", type=float, dest="background_threshold",
                       help="assign class 0 when the best mean logit falls below this")

    p_eval = sub.add_parser("eval", help="mIoU of predicted maps against ground truth")
    shared(p_eval)
    p_eval.add_argument("--pred", help="predicted label map file or directory")
    p_eval.add_argument("--gt", help="ground-truth label map file or directory")
    p_eval.add_argument("--ignore-index", type=int, dest="ignore_index",
                        help="ground-truth label excluded from scoring (default 255)")

    p_coh = sub.add_parser("coherence", help="same-label PR analysis of correspondence scores")
    shared(p_coh)
    p_coh.add_argument("--gt", help="ground-truth label map file or directory")
    p_coh.add_argument("--ignore-index", type=int, dest="ignore_index")
    p_coh.add_argument("--sources", help="comma-separated attention sources (default: attn_source)")

    p_sweep = sub.add_parser("sweep", help="grid a parameter and report mIoU per value")
    shared(p_sweep)
    p_sweep.add_argument("--gt", help="ground-truth label map file or directory")
    p_sweep.add_argument("--ignore-index", type=int, dest="ignore_index")
    p_sweep.add_argument("--param", choices=sorted(_SWEEP_GRIDS))
    p_sweep.add_argument("--values", help="comma-separated grid values overriding the default grid")
    p_sweep.add_argument("--background-threshold", type=float, dest="background_threshold")

    return parser


def resolve_config(args):
    """Layer defaults, then the JSON config file, then explicit flags."""
    cfg = dict(_DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path, "r", encoding="utf-8") as f:
            try:
                loaded = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError("config", f"{config_path} is not valid JSON: {e}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config", f"{config_path} must hold a JSON object")
        for key, value in loaded.items():
            if key not in cfg:
                raise ConfigError(key, "unknown config key")
            cfg[key] = value
    explicit = set()
    for key in cfg:
        if hasattr(args, key) and getattr(args, key) is not None:
            cfg[key] = getattr(args, key)
            explicit.add(key)
    cfg["_explicit"] = explicit

    if cfg["jobs"] is None or int(cfg["jobs"]) < 1:
        raise ConfigError("jobs", f"must be >= 1, got {cfg['jobs']}")
    cfg["jobs"] = int(cfg["jobs"])
    return cfg


def _require(cfg, key, command):
    if cfg.get(key) in (None, ""):
        raise ConfigError(key, f"is required for {command}")
    return cfg[key]


def _attention_config(cfg):
    return AttentionConfig(
        beta=float(cfg["beta"]),
        gamma=float(cfg["gamma"]),
        mask_mode=cfg["mask_mode"],
        alpha=float(cfg["alpha"]),
        attn_source=cfg["attn_source"],
    )


def discover_bundles(spec):
    """A manifest path, or a directory tree scanned for JSON files with windows."""
    path = Path(spec)
    if path.is_dir():
        found = []
        for candidate in sorted(path.rglob("*.json")):
            try:
                with open(candidate, "r", encoding="utf-8") as f:
                    doc = json.load(f)
            except (json.JSONDecodeError, UnicodeDecodeError):
                continue
            if isinstance(doc, dict) and "windows" in doc:
                found.append(candidate)
        if not found:
            raise ConfigError("bundles", f"no bundle manifests found in {path}")
        return found
    if not path.exists():
        raise ConfigError("bundles", f"{path} does not exist")
    return [path]


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _bundle_file_inventory(manifest_path):
    paths = [Path(manifest_path)]
    base = Path(manifest_path).parent
    with open(manifest_path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    for win in doc.get("windows", []):
        for key in ("x_path", "v_path", "q_path", "k_path"):
            if win.get(key):
                paths.append(base / win[key])
    return paths


def _hash_inputs(cfg, bundle_paths):
    inputs = {}
    for manifest in bundle_paths:
        for p in _bundle_file_inventory(manifest):
            inputs[str(p)] = _sha256(p)
    for key in ("weights", "text", "palette", "gt", "pred"):
        value = cfg.get(key)
        if value and Path(value).is_file():
            inputs[str(value)] = _sha256(Path(value))
    return inputs


def _config_echo(cfg):
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


def _write_run_manifest(cfg, command, images, extra=None):
    out = Path(cfg["out"])
    doc = {
        "command": command,
        "version": __version__,
        "config": _config_echo(cfg),
        "inputs": cfg.get("_input_hashes", {}),
        "images": images,
    }
    if extra:
        doc.update(extra)
    with open(out / "run_manifest.json", "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def _safe_name(image_id):
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in image_id) or "image"


def _segment_one(manifest_path, weights, text, attn_cfg, cfg, palette):
    started = time.perf_counter()
    bundle = load_bundle(manifest_path)
    if weights is None:
        # no --weights override: every bundle names the weights it was
        # extracted against
        weights = load_weights(bundle.weights_path)
    result = run_pipeline(
        bundle,
        weights,
        text,
        attn_cfg,
        background_threshold=cfg["background_threshold"],
    )
    name = _safe_name(bundle.image_id)
    out = Path(cfg["out"])
    pgm_path = out / f"{name}.pgm"
    write_label_map(pgm_path, result.labels)
    record = {
        "image_id": bundle.image_id,
        "bundle": str(manifest_path),
        "output": str(pgm_path),
        "seconds": round(time.perf_counter() - started, 6),
    }
    if palette is not None:
        png_path = out / f"{name}.png"
        write_color_map(png_path, result.labels, palette)
        record["color_output"] = str(png_path)
    return record


def cmd_segment(cfg):
    bundles = discover_bundles(_require(cfg, "bundles", "segment"))
    weights = load_weights(cfg["weights"]) if cfg["weights"] else None
    text = load_text(_require(cfg, "text", "segment"))
    _require(cfg, "out", "segment")
    Path(cfg["out"]).mkdir(parents=True, exist_ok=True)
    palette = load_palette(cfg["palette"]) if cfg["palette"] else None
    attn_cfg = _attention_config(cfg)
    cfg["_input_hashes"] = _hash_inputs(cfg, bundles)

    log.info("segmenting %d bundle(s) with %d job(s)", len(bundles), cfg["jobs"])
    if cfg["jobs"] > 1 and len(bundles) > 1:
        with ThreadPoolExecutor(max_workers=cfg["jobs"]) as pool:
            records = list(pool.map(
                lambda m: _segment_one(m, weights, text, attn_cfg, cfg, palette), bundles
            ))
    else:
        records = [_segment_one(m, weights, text, attn_cfg, cfg, palette) for m in bundles]

    _write_run_manifest(cfg, "segment", records)
    for record in records:
        print(f"{record['image_id']}: {record['output']} ({record['seconds']:.3f}s)")
    return 0


def _map_pairs(pred_spec, gt_spec):
    """Match predicted maps to ground truth by file stem."""
    pred_path, gt_path = Path(pred_spec), Path(gt_spec)
    if pred_path.is_dir():
        preds = sorted(pred_path.glob("*.pgm"))
        if not preds:
            raise ConfigError("pred", f"no .pgm files in {pred_path}")
    else:
        if not pred_path.exists():
            raise ConfigError("pred", f"{pred_path} does not exist")
        preds = [pred_path]
    pairs = []
    for pred in preds:
        if gt_path.is_dir():
            gt = gt_path / pred.name
            if not gt.exists():
                raise ConfigError("gt", f"no ground truth named {pred.name} in {gt_path}")
        else:
            if not gt_path.exists():
                raise ConfigError("gt", f"{gt_path} does not exist")
            gt = gt_path
        pairs.append((pred, gt))
    return pairs


def cmd_eval(cfg):
    pairs = _map_pairs(_require(cfg, "pred", "eval"), _require(cfg, "gt", "eval"))
    text = load_text(_require(cfg, "text", "eval"))
    _require(cfg, "out", "eval")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    classes = len(text.class_names)
    cfg["_input_hashes"] = {str(p): _sha256(p) for pair in pairs for p in pair}
    cfg["_input_hashes"][str(cfg["text"])] = _sha256(cfg["text"])

    def score_one(pair):
        pred_path, gt_path = pair
        started = time.perf_counter()
        cm = ConfusionMatrix.empty(classes, ignore_index=int(cfg["ignore_index"]))
        accumulate(cm, read_label_map(pred_path), read_label_map(gt_path))
        record = {
            "pred": str(pred_path),
            "gt": str(gt_path),
            "seconds": round(time.perf_counter() - started, 6),
        }
        return cm, record

    if cfg["jobs"] > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=cfg["jobs"]) as pool:
            scored = list(pool.map(score_one, pairs))
    else:
        scored = [score_one(pair) for pair in pairs]
    total = scored[0][0]
    for cm, _ in scored[1:]:
        total = merge(total, cm)
    records = [record for _, record in scored]

    per_class, mean = miou(total)
    write_iou_csv(out / "iou.csv", text.class_names, per_class)
    _write_run_manifest(cfg, "eval", records, extra={"miou": mean})
    for name, value in zip(text.class_names, per_class):
        print(f"{name}: {'undefined' if value is None else f'{value:.4f}'}")
    print(f"mIoU: {mean:.4f}")
    return 0


def _gt_for_bundle(gt_spec, bundle):
    gt_path = Path(gt_spec)
    if gt_path.is_dir():
        candidate = gt_path / f"{_safe_name(bundle.image_id)}.pgm"
        if not candidate.exists():
            raise ConfigError("gt", f"no ground truth named {candidate.name} in {gt_path}")
        gt_path = candidate
    elif not gt_path.exists():
        raise ConfigError("gt", f"{gt_path} does not exist")
    gt = read_label_map(gt_path)
    if gt.shape != bundle.resized_size:
        raise ConfigError(
            "gt", f"{gt_path} is {gt.shape}, bundle {bundle.image_id} is {bundle.resized_size}"
        )
    return gt, gt_path


def cmd_coherence(cfg):
    bundles = discover_bundles(_require(cfg, "bundles", "coherence"))
    _require(cfg, "gt", "coherence")
    _require(cfg, "out", "coherence")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    raw_sources = cfg["sources"] or cfg["attn_source"]
    sources = [s.strip() for s in str(raw_sources).split(",") if s.strip()]
    for s in sources:
        if s not in ATTN_SOURCES:
            raise ConfigError("sources", f"must be among {ATTN_SOURCES}, got {s!r}")
    cfg["_input_hashes"] = _hash_inputs(cfg, bundles)

    loaded = []
    records = []
    for manifest in bundles:
        started = time.perf_counter()
        bundle = load_bundle(manifest)
        gt, gt_path = _gt_for_bundle(cfg["gt"], bundle)
        loaded.append((bundle, gt))
        records.append({
            "image_id": bundle.image_id,
            "bundle": str(manifest),
            "gt": str(gt_path),
            "seconds": round(time.perf_counter() - started, 6),
        })

    results = {}
    for source in sources:
        instances = []
        for bundle, gt in loaded:
            for win in bundle.windows:
                scores, grid = correspondence_scores(win, source)
                gh, gw = grid
                x0, y0, w, h = win.rect
                if h % gh or w % gw or h // gh != w // gw:
                    raise ConfigError(
                        "bundles",
                        f"window {win.rect} of {bundle.image_id} is not an integer multiple "
                        f"of its {gh}x{gw} score grid",
                    )
                crop = gt[y0 : y0 + h, x0 : x0 + w]
                labels = patch_majority(crop, h // gh, ignore_index=int(cfg["ignore_index"]))
                instances.append((scores, labels))
        curve = coherence_pooled(instances)
        write_pr_csv(out / f"pr_{source}.csv", curve)
        results[source] = curve.ap
        print(f"AP[{source}]: {curve.ap:.6f}")

    _write_run_manifest(cfg, "coherence", records, extra={"ap": results})
    return 0


def cmd_sweep(cfg):
    param = _require(cfg, "param", "sweep")
    bundles = discover_bundles(_require(cfg, "bundles", "sweep"))
    override = load_weights(cfg["weights"]) if cfg["weights"] else None
    text = load_text(_require(cfg, "text", "sweep"))
    _require(cfg, "gt", "sweep")
    _require(cfg, "out", "sweep")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    if cfg["values"]:
        try:
            grid = [float(v) for v in str(cfg["values"]).split(",") if v.strip()]
        except ValueError:
            raise ConfigError("values", f"not a comma-separated float list: {cfg['values']!r}") from None
        if not grid:
            raise ConfigError("values", "empty grid")
    else:
        grid = _SWEEP_GRIDS[param]
    # alpha only acts through hard masking; switch it on unless the user
    # pinned a mode themselves
    if param == "alpha" and "mask_mode" not in cfg["_explicit"]:
        cfg["mask_mode"] = "hard"
    cfg["_input_hashes"] = _hash_inputs(cfg, bundles)

    loaded = []
    records = []
    weight_cache = {}
    for manifest in bundles:
        started = time.perf_counter()
        bundle = load_bundle(manifest)
        gt, gt_path = _gt_for_bundle(cfg["gt"], bundle)
        if override is not None:
            bundle_weights = override
        else:
            if bundle.weights_path not in weight_cache:
                weight_cache[bundle.weights_path] = load_weights(bundle.weights_path)
            bundle_weights = weight_cache[bundle.weights_path]
        loaded.append((bundle, gt, bundle_weights))
        records.append({
            "image_id": bundle.image_id,
            "bundle": str(manifest),
            "gt": str(gt_path),
            "seconds": round(time.perf_counter() - started, 6),
        })

    classes = len(text.class_names)

    def point(value):
        point_cfg = dict(cfg)
        point_cfg[param] = value
        attn_cfg = _attention_config(point_cfg)
        cm = ConfusionMatrix.empty(classes, ignore_index=int(cfg["ignore_index"]))
        for bundle, gt, bundle_weights in loaded:
            result = run_pipeline(bundle, bundle_weights, text, attn_cfg,
                                  background_threshold=cfg["background_threshold"])
            accumulate(cm, result.labels, gt)
        _, mean = miou(cm)
        return value, mean

    if cfg["jobs"] > 1 and len(grid) > 1:
        with ThreadPoolExecutor(max_workers=cfg["jobs"]) as pool:
            rows = list(pool.map(point, grid))
    else:
        rows = [point(v) for v in grid]

    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow([param, "miou"])
        for value, mean in rows:
            writer.writerow([f"{value:.9g}", f"{mean:.6f}"])
    _write_run_manifest(cfg, "sweep", records, extra={"param": param, "grid": grid,
                                                      "miou": {f"{v:.9g}": m for v, m in rows}})
    for value, mean in rows:
        print(f"{param}={value:.9g}: mIoU {mean:.4f}")
    return 0


_COMMANDS = {
    "segment": cmd_segment,
    "eval": cmd_eval,
    "coherence": cmd_coherence,
    "sweep": cmd_sweep,
}


def main(argv=None):
    try:
        setup_logging()
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        return _COMMANDS[args.command](cfg)
    except ProxysegError as e:
        log.debug("failing with validation error", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        log.debug("failing with I/O error", exc_info=True)
        print(f"i/o error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
