"""End-to-end extraction: images in, engine-format bundles out.

Per image: resize the shorter side to the configured size (bilinear, aspect
preserved), tile with the shared window rule, and for every window capture
VFM patch features and CLIP per-head value embeddings (optionally q/k).
Head weights and averaged prompt embeddings are written once per run.
"""

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import ExtractorError
from .gt import extract_gt
from .models import load_clip, load_vfm
from .tiling import window_rects
from .writer import safe_name, write_bundle, write_text, write_weights

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".webp")


@dataclass(frozen=True)
class ExtractionSpec:
    clip_spec: str
    vfm_spec: str
    short_side: int
    window: int
    stride: int
    class_names: list
    templates: list
    with_qk: bool = False
    device: str = "cpu"

    def __post_init__(self):
        if self.short_side not in (336, 448):
            raise ExtractorError(f"short side must be 336 or 448, got {self.short_side}")
        if self.window < 1 or self.stride < 1:
            raise ExtractorError("window and stride must be >= 1")
        if self.window > self.short_side:
            raise ExtractorError(f"window {self.window} exceeds the short side {self.short_side}")


def resized_size(h, w, short_side):
    if h <= w:
        return short_side, max(1, round(w * short_side / h))
    return max(1, round(h * short_side / w)), short_side


def discover_images(images_dir):
    images_dir = Path(images_dir)
    found = sorted(
        p for p in images_dir.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not found:
        raise ExtractorError(f"no images found in {images_dir}")
    return found


def _normalized_tensor(resized, mean, std):
    arr = np.asarray(resized, dtype=np.float32) / 255.0
    t = torch.from_numpy(arr).permute(2, 0, 1)
    mean = torch.tensor(mean, dtype=torch.float32).reshape(3, 1, 1)
    std = torch.tensor(std, dtype=torch.float32).reshape(3, 1, 1)
    return (t - mean) / std


def _find_annotation(gt_dir, stem):
    matches = sorted(p for p in Path(gt_dir).glob(f"{stem}.*") if p.is_file())
    if not matches:
        raise ExtractorError(f"no annotation named {stem}.* in {gt_dir}")
    return matches[0]


def extract_image(spec, clip, vfm, image_path, out_dir, gt_dir=None):
    started = time.perf_counter()
    image_id = image_path.stem
    with Image.open(image_path) as img:
        rgb = img.convert("RGB")
        h, w = resized_size(rgb.height, rgb.width, spec.short_side)
        resized = rgb.resize((w, h), Image.BILINEAR)

    clip_px = _normalized_tensor(resized, clip.mean, clip.std)
    vfm_px = _normalized_tensor(resized, vfm.mean, vfm.std)

    windows = []
    hook_errors = []
    for rect in window_rects(h, w, spec.window, spec.stride):
        x0, y0, ww, wh = rect
        clip_crop = clip_px[:, y0:y0 + wh, x0:x0 + ww]
        vfm_crop = vfm_px[:, y0:y0 + wh, x0:x0 + ww]
        v, q, k, hook_error, v_grid = clip.window_features(clip_crop, spec.with_qk)
        x, x_grid = vfm.patch_features(vfm_crop)
        hook_errors.append(hook_error)
        windows.append({
            "rect": rect, "x": x, "x_grid": x_grid,
            "v": v, "v_grid": v_grid, "q": q, "k": k,
        })

    meta = {
        "image_id": image_id,
        "resized_h": h,
        "resized_w": w,
        "window": spec.window,
        "stride": spec.stride,
        "clip_model": spec.clip_spec,
        "vfm_model": spec.vfm_spec,
        "clip_patch": clip.patch,
        "vfm_patch": vfm.patch,
        "d": clip.d,
        "d_joint": clip.d_joint,
        "n_heads": clip.n_heads,
        "weights_path": "../weights.json",
    }
    bundle_dir = Path(out_dir) / safe_name(image_id)
    write_bundle(bundle_dir, meta, windows)

    if gt_dir is not None:
        gt_out = Path(out_dir) / "gt"
        gt_out.mkdir(parents=True, exist_ok=True)
        extract_gt(_find_annotation(gt_dir, image_id), gt_out / f"{safe_name(image_id)}.pgm", h, w)

    return {
        "image_id": image_id,
        "windows": len(windows),
        "hook_max_error": max(hook_errors),
        "seconds": round(time.perf_counter() - started, 6),
    }


def run_extraction(spec, images_dir, out_dir, gt_dir=None, jobs=1):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = discover_images(images_dir)

    clip = load_clip(spec.clip_spec, spec.device)
    vfm = load_vfm(spec.vfm_spec, spec.device)
    if spec.window % clip.patch:
        raise ExtractorError(f"window {spec.window} not divisible by CLIP patch {clip.patch}")
    if spec.window % vfm.patch:
        raise ExtractorError(f"window {spec.window} not divisible by VFM patch {vfm.patch}")

    write_weights(out_dir, clip.head_weights())
    write_text(out_dir, spec.class_names, clip.encode_classes(spec.class_names, spec.templates))

    local = threading.local()
    build_lock = threading.Lock()

    def adapters():
        # one model instance per worker thread; construction is serialized
        # because weight init draws from the global torch RNG
        if not hasattr(local, "clip"):
            if threading.current_thread() is threading.main_thread():
                local.clip, local.vfm = clip, vfm
            else:
                with build_lock:
                    local.clip = load_clip(spec.clip_spec, spec.device)
                    local.vfm = load_vfm(spec.vfm_spec, spec.device)
        return local.clip, local.vfm

    def one(path):
        worker_clip, worker_vfm = adapters()
        record = extract_image(spec, worker_clip, worker_vfm, path, out_dir, gt_dir)
        print(f"{record['image_id']}: {record['windows']} windows, "
              f"hook error {record['hook_max_error']:.2e} ({record['seconds']:.2f}s)")
        return record

    if jobs > 1 and len(images) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(one, images))
    else:
        records = [one(path) for path in images]

    manifest = {
        "command": "extract",
        "config": {
            "clip": spec.clip_spec,
            "vfm": spec.vfm_spec,
            "short_side": spec.short_side,
            "window": spec.window,
            "stride": spec.stride,
            "classes": list(spec.class_names),
            "templates": len(spec.templates),
            "with_qk": spec.with_qk,
            "device": spec.device,
            "jobs": jobs,
        },
        "images": records,
    }
    (out_dir / "extract_manifest.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8"
    )
    return manifest
