"""Regenerate the committed golden fixture with a from-scratch oracle.

Everything here is computed with plain numpy and explicit loops, with no
imports from the package under test, so the committed expectations form an
independent cross-check. Inputs are seeded and the script is deterministic:
rerunning must reproduce the committed files exactly.

Usage: python3 tests/fixtures/make_golden.py [output_dir]
"""

import json
import sys
from pathlib import Path

import numpy as np

SEED = 7
IMAGE_ID = "golden-0"
H, W = 16, 24
WINDOW, STRIDE = 16, 8
HX, WX, DX = 4, 4, 5  # attention grid and feature width
HV, WV, DV, HEADS = 2, 2, 3, 2  # value grid, per-head width, head count
D = HEADS * DV
D_JOINT = 4
CLASSES = 3
BETA, GAMMA = 1.2, 3.0
LN_EPS = 1e-5
IGNORE = 255


def window_rects():
    # offsets 0, stride, ... with the border offset clamped in
    xs = [0]
    while xs[-1] + STRIDE <= W - WINDOW:
        xs.append(xs[-1] + STRIDE)
    if xs[-1] != W - WINDOW:
        xs.append(W - WINDOW)
    return [(x0, 0, WINDOW, WINDOW) for x0 in xs]


def bilinear(grid, oh, ow):
    ih, iw, c = grid.shape
    out = np.zeros((oh, ow, c))
    for oy in range(oh):
        for ox in range(ow):
            sy = min(max((oy + 0.5) * ih / oh - 0.5, 0.0), ih - 1)
            sx = min(max((ox + 0.5) * iw / ow - 0.5, 0.0), iw - 1)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, ih - 1), min(x0 + 1, iw - 1)
            fy, fx = sy - y0, sx - x0
            out[oy, ox] = (
                grid[y0, x0] * (1 - fy) * (1 - fx)
                + grid[y0, x1] * (1 - fy) * fx
                + grid[y1, x0] * fy * (1 - fx)
                + grid[y1, x1] * fy * fx
            )
    return out


def cosine(x):
    xn = x.astype(np.float64)
    xn = xn / np.sqrt((xn * xn).sum(axis=1, keepdims=True))
    return xn @ xn.T


def window_attention(x):
    s = cosine(x)
    a = GAMMA * (s - BETA * s.mean())
    n = a.shape[0]
    attn = np.zeros_like(a)
    for i in range(n):
        kept = [j for j in range(n) if a[i, j] >= 0 or j == i]
        top = max(a[i, j] for j in kept)
        weights = {j: np.exp(a[i, j] - top) for j in kept}
        total = sum(weights.values())
        for j, wgt in weights.items():
            attn[i, j] = wgt / total
    return attn


def window_embeddings(x, v, weights):
    attn = window_attention(x)
    heads = []
    for h in range(HEADS):
        vh = bilinear(v[h].astype(np.float64).reshape(HV, WV, DV), HX, WX).reshape(HX * WX, DV)
        heads.append(attn @ vh)
    fused = np.concatenate(heads, axis=1)
    z = fused @ weights["out_w"].astype(np.float64) + weights["out_b"]
    mu = z.mean(axis=1, keepdims=True)
    var = z.var(axis=1, keepdims=True)
    z = (z - mu) / np.sqrt(var + LN_EPS) * weights["ln_w"] + weights["ln_b"]
    z = z @ weights["proj"].astype(np.float64)
    return z / np.sqrt((z * z).sum(axis=1, keepdims=True))


def majority(block, ignore):
    best, best_count = None, -1
    for label in sorted(set(int(v) for v in block.ravel())):
        count = int((block == label).sum())
        if count > best_count:
            best, best_count = label, count
    return -1 if best == ignore else best


def average_precision(pair_scores, pair_truth):
    positives = sum(pair_truth)
    ap, prev_recall = 0.0, 0.0
    for t in sorted(set(pair_scores), reverse=True):
        tp = sum(1 for s, y in zip(pair_scores, pair_truth) if s >= t and y)
        predicted = sum(1 for s in pair_scores if s >= t)
        ap += (tp / positives - prev_recall) * (tp / predicted)
        prev_recall = tp / positives
    return ap


def write_pgm(path, labels):
    h, w = labels.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n65535\n" % (w, h))
        f.write(labels.astype(">u2").tobytes())


def main():
    out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent / "golden"
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.RandomState(SEED)

    rects = window_rects()
    assert len(rects) == 2, rects

    windows_meta = []
    window_arrays = []
    for i, (x0, y0, w, h) in enumerate(rects):
        x = rng.randn(HX * WX, DX).astype(np.float32)
        v = rng.randn(HEADS, HV * WV, DV).astype(np.float32)
        q = rng.randn(HEADS, HV * WV, DV).astype(np.float32)
        k = rng.randn(HEADS, HV * WV, DV).astype(np.float32)
        np.save(out_dir / f"w{i}_x.npy", x)
        np.save(out_dir / f"w{i}_v.npy", v)
        np.save(out_dir / f"w{i}_q.npy", q)
        np.save(out_dir / f"w{i}_k.npy", k)
        window_arrays.append((x, v))
        windows_meta.append({
            "x0": x0, "y0": y0, "w": w, "h": h,
            "x_path": f"w{i}_x.npy", "hx": HX, "wx": WX, "dx": DX,
            "v_path": f"w{i}_v.npy", "hv": HV, "wv": WV, "dv": DV,
            "q_path": f"w{i}_q.npy", "k_path": f"w{i}_k.npy",
        })

    weights = {
        "out_w": (rng.randn(D, D) * 0.3).astype(np.float32),
        "out_b": (rng.randn(D) * 0.1).astype(np.float32),
        "ln_w": (1.0 + 0.05 * rng.randn(D)).astype(np.float32),
        "ln_b": (0.01 * rng.randn(D)).astype(np.float32),
        "proj": (rng.randn(D, D_JOINT) * 0.4).astype(np.float32),
    }
    np.save(out_dir / "out_proj_weight.npy", weights["out_w"])
    np.save(out_dir / "out_proj_bias.npy", weights["out_b"])
    np.save(out_dir / "ln_post_weight.npy", weights["ln_w"])
    np.save(out_dir / "ln_post_bias.npy", weights["ln_b"])
    np.save(out_dir / "visual_proj.npy", weights["proj"])
    with open(out_dir / "weights.json", "w") as f:
        json.dump({
            "schema_version": 1, "d": D, "d_joint": D_JOINT, "ln_eps": LN_EPS,
            "out_proj_weight": "out_proj_weight.npy",
            "out_proj_bias": "out_proj_bias.npy",
            "ln_post_weight": "ln_post_weight.npy",
            "ln_post_bias": "ln_post_bias.npy",
            "visual_proj": "visual_proj.npy",
        }, f, indent=1)

    emb = rng.randn(CLASSES, D_JOINT)
    emb = emb / np.sqrt((emb * emb).sum(axis=1, keepdims=True))
    emb32 = emb.astype(np.float32)
    np.save(out_dir / "text_embeddings.npy", emb32)
    with open(out_dir / "text.json", "w") as f:
        json.dump({
            "schema_version": 1,
            "class_names": ["ground", "water", "sky"],
            "embeddings_path": "text_embeddings.npy",
        }, f, indent=1)
    with open(out_dir / "palette.json", "w") as f:
        json.dump([[name * 37 % 256, name * 91 % 256, name * 153 % 256] for name in range(CLASSES)], f)

    with open(out_dir / "bundle.json", "w") as f:
        json.dump({
            "schema_version": 1, "image_id": IMAGE_ID,
            "resized_h": H, "resized_w": W, "window": WINDOW, "stride": STRIDE,
            "clip_model": "golden-clip", "vfm_model": "golden-vfm",
            "clip_patch": WINDOW // WV, "vfm_patch": WINDOW // WX,
            "d": D, "d_joint": D_JOINT, "n_heads": HEADS,
            "weights_path": "weights.json", "windows": windows_meta,
        }, f, indent=1)

    # expected label map by the naive pipeline
    canvas = np.zeros((H, W, CLASSES))
    count = np.zeros((H, W, 1))
    for (x0, y0, w, h), (x, v) in zip(rects, window_arrays):
        z = window_embeddings(x, v, weights)
        logits = (z @ emb32.astype(np.float64).T).reshape(HX, WX, CLASSES)
        pixels = bilinear(logits, h, w)
        canvas[y0 : y0 + h, x0 : x0 + w] += pixels
        count[y0 : y0 + h, x0 : x0 + w] += 1
    mean = canvas / count
    labels = np.zeros((H, W), dtype=np.int32)
    for yy in range(H):
        for xx in range(W):
            labels[yy, xx] = int(np.argmax(mean[yy, xx]))
    ranked = np.sort(mean, axis=2)
    margin = float((ranked[:, :, -1] - ranked[:, :, -2]).min())
    assert margin > 1e-4, f"top-2 logit margin {margin} too small for a stable golden map"
    write_pgm(out_dir / "expected.pgm", labels)

    # ground truth for eval and coherence expectations
    gt = rng.randint(0, CLASSES, size=(H, W)).astype(np.int32)
    gt[rng.rand(H, W) < 0.1] = IGNORE
    gt_dir = out_dir / "gt"
    gt_dir.mkdir(exist_ok=True)
    write_pgm(gt_dir / f"{IMAGE_ID}.pgm", gt)

    counts = np.zeros((CLASSES, CLASSES), dtype=np.int64)
    for yy in range(H):
        for xx in range(W):
            if gt[yy, xx] != IGNORE:
                counts[gt[yy, xx], labels[yy, xx]] += 1
    ious = []
    for c in range(CLASSES):
        tp = counts[c, c]
        union = counts[c].sum() + counts[:, c].sum() - tp
        if union > 0:
            ious.append(tp / union)
    expected_miou = float(sum(ious) / len(ious))

    pair_scores, pair_truth = [], []
    patch = WINDOW // HX
    for (x0, y0, w, h), (x, _) in zip(rects, window_arrays):
        scores = cosine(x)
        cells = []
        for cy in range(HX):
            for cx in range(WX):
                block = gt[y0 + cy * patch : y0 + (cy + 1) * patch,
                           x0 + cx * patch : x0 + (cx + 1) * patch]
                cells.append(majority(block, IGNORE))
        for i in range(len(cells)):
            for j in range(len(cells)):
                if i != j and cells[i] != -1 and cells[j] != -1:
                    pair_scores.append(float(scores[i, j]))
                    pair_truth.append(cells[i] == cells[j])
    expected_ap = average_precision(pair_scores, pair_truth)

    with open(out_dir / "expected_metrics.json", "w") as f:
        json.dump({"miou": expected_miou, "ap_proxy": expected_ap, "margin": margin}, f, indent=1)

    print(f"golden fixture written to {out_dir}")
    print(f"  label margin {margin:.6f}, miou {expected_miou:.6f}, ap {expected_ap:.6f}")


if __name__ == "__main__":
    main()
