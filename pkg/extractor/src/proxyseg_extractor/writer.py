"""Writers for the engine's on-disk formats.

Arrays go through np.save (plain NPY v1), manifests through json. Field
names and layouts follow the engine's published bundle schema; nothing
here imports the engine.
"""

import json

import numpy as np

from .errors import ExtractorError

PGM_MAXVAL = 65535


def safe_name(image_id):
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in image_id) or "image"


def write_label_map(path, labels):
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ExtractorError(f"label map must be 2-d, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() > PGM_MAXVAL:
        raise ExtractorError(f"labels outside [0, {PGM_MAXVAL}] cannot be stored")
    h, w = labels.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n%d\n" % (w, h, PGM_MAXVAL))
        f.write(labels.astype(">u2").tobytes())


def write_weights(out_dir, weights):
    names = ("out_proj_weight", "out_proj_bias", "ln_post_weight", "ln_post_bias", "visual_proj")
    manifest = {"schema_version": 1, "ln_eps": weights["ln_eps"]}
    d, d_joint = weights["visual_proj"].shape
    manifest["d"], manifest["d_joint"] = int(d), int(d_joint)
    for name in names:
        np.save(out_dir / f"{name}.npy", np.ascontiguousarray(weights[name], dtype=np.float32))
        manifest[name] = f"{name}.npy"
    path = out_dir / "weights.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    return path


def write_text(out_dir, class_names, embeddings):
    np.save(out_dir / "text_embeddings.npy", np.ascontiguousarray(embeddings, dtype=np.float32))
    path = out_dir / "text.json"
    path.write_text(
        json.dumps(
            {
                "schema_version": 1,
                "class_names": list(class_names),
                "embeddings_path": "text_embeddings.npy",
            },
            indent=1,
            sort_keys=True,
        ),
        encoding="utf-8",
    )
    return path


def write_bundle(bundle_dir, meta, windows):
    """windows: list of dicts with rect, x, x_grid, v, v_grid, optional q/k."""
    bundle_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, win in enumerate(windows):
        x0, y0, w, h = win["rect"]
        entry = {"x0": x0, "y0": y0, "w": w, "h": h}
        np.save(bundle_dir / f"w{i}_x.npy", win["x"])
        entry["x_path"] = f"w{i}_x.npy"
        entry["hx"], entry["wx"] = win["x_grid"]
        entry["dx"] = int(win["x"].shape[1])
        np.save(bundle_dir / f"w{i}_v.npy", win["v"])
        entry["v_path"] = f"w{i}_v.npy"
        entry["hv"], entry["wv"] = win["v_grid"]
        entry["dv"] = int(win["v"].shape[2])
        if win.get("q") is not None:
            np.save(bundle_dir / f"w{i}_q.npy", win["q"])
            np.save(bundle_dir / f"w{i}_k.npy", win["k"])
            entry["q_path"] = f"w{i}_q.npy"
            entry["k_path"] = f"w{i}_k.npy"
        entries.append(entry)
    manifest = dict(meta, schema_version=1, windows=entries)
    path = bundle_dir / "bundle.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    return path
