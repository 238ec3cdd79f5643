"""Model adapters: load a checkpoint, capture per-window ViT tensors.

Two adapter kinds exist. ClipAdapter wraps an open_clip-layout visual
tower and captures the last residual attention block's per-head q/k/v via
forward hooks, recomposing the block output from them as a self-check that
the hooks grabbed the right tensors. VfmAdapter wraps a timm/DINO-layout
ViT and returns final normalized patch tokens. Model specs:

  tiny-clip[:seed=0,patch=16,width=64,heads=4,depth=2,joint=32,size=64]
  tiny-vfm[:seed=0,patch=8,width=48,heads=4,depth=2,size=64]
  openclip:<model_name>:<pretrained_tag>   (needs the open_clip package)
  dino:<hub_model>                         (e.g. dino:dino_vitb8, needs torch.hub)

The tiny towers are randomly initialized at a fixed seed: structurally
faithful, deterministic, and small enough for tests.
"""

import hashlib
import math

import numpy as np
import torch
from torch import nn

from .errors import ExtractorError
from .vit import build_tiny_clip, build_tiny_vfm

_TINY_MEAN = (0.5, 0.5, 0.5)
_TINY_STD = (0.5, 0.5, 0.5)
_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


def interpolate_pos_embed(pos, gh, gw, prefix=1):
    """Bicubically resample the grid part of a positional embedding."""
    squeeze = pos.dim() == 2
    p = pos.unsqueeze(0) if squeeze else pos
    head, grid = p[:, :prefix], p[:, prefix:]
    g = int(round(math.sqrt(grid.shape[1])))
    if g * g != grid.shape[1]:
        raise ExtractorError(f"positional embedding grid {grid.shape[1]} is not square")
    if (g, g) != (gh, gw):
        grid = grid.reshape(1, g, g, -1).permute(0, 3, 1, 2)
        grid = torch.nn.functional.interpolate(
            grid, size=(gh, gw), mode="bicubic", align_corners=False
        )
        grid = grid.permute(0, 2, 3, 1).reshape(1, gh * gw, -1)
    out = torch.cat([head, grid.to(head.dtype)], dim=1)
    return out.squeeze(0) if squeeze else out


def _squeeze_tokens(t):
    """(L, 1, D) or (1, L, D) -> (L, D); the batch is always a single window."""
    if t.dim() != 3 or 1 not in t.shape[:2]:
        raise ExtractorError(f"unexpected token tensor shape {tuple(t.shape)}")
    return t[:, 0] if t.shape[1] == 1 else t[0]


class ClipAdapter:
    def __init__(self, tower, model_id, mean, std, class_encoder, device="cpu"):
        self.tower = tower.eval().to(device)
        self.model_id = model_id
        self.mean, self.std = mean, std
        self.device = device
        self._encode_classes = class_encoder
        self.patch = int(tower.conv1.stride[0])
        self.d = int(tower.ln_post.weight.shape[0])
        self.n_heads = int(tower.transformer.resblocks[-1].attn.num_heads)
        self.d_joint = int(tower.proj.shape[1])
        self._base_pos = tower.positional_embedding.detach().clone()
        self._grid = None

    def _ensure_grid(self, gh, gw):
        if self._grid == (gh, gw):
            return
        with torch.no_grad():
            pos = interpolate_pos_embed(self._base_pos, gh, gw)
            self.tower.positional_embedding = nn.Parameter(pos)
        self._grid = (gh, gw)

    def window_features(self, px, with_qk=False):
        """px: normalized (3, H, W). Returns v, q, k (n, L, dh), hook error, grid."""
        h, w = px.shape[-2:]
        if h % self.patch or w % self.patch:
            raise ExtractorError(f"window {h}x{w} not divisible by CLIP patch {self.patch}")
        gh, gw = h // self.patch, w // self.patch
        self._ensure_grid(gh, gw)
        block = self.tower.transformer.resblocks[-1]
        grabbed = {}
        pre = block.register_forward_pre_hook(
            lambda m, args: grabbed.__setitem__("x", args[0].detach().clone())
        )
        post = block.register_forward_hook(
            lambda m, args, out: grabbed.__setitem__(
                "out", (out[0] if isinstance(out, tuple) else out).detach().clone()
            )
        )
        try:
            with torch.no_grad():
                self.tower(px.unsqueeze(0).to(self.device))
        finally:
            pre.remove()
            post.remove()

        x = _squeeze_tokens(grabbed["x"])
        block_out = _squeeze_tokens(grabbed["out"])
        seq_len = x.shape[0]
        if seq_len != gh * gw + 1:
            raise ExtractorError(f"expected {gh * gw} patches + class token, got {seq_len} tokens")

        with torch.no_grad():
            y = block.ln_1(x)
            qkv = y @ block.attn.in_proj_weight.T + block.attn.in_proj_bias
            q, k, v = qkv.split(self.d, dim=1)
            dh = self.d // self.n_heads
            to_heads = lambda t: t.reshape(seq_len, self.n_heads, dh).permute(1, 0, 2)
            qh, kh, vh = to_heads(q), to_heads(k), to_heads(v)

            # recompose the block from the captured tensors; a large gap here
            # means the hooks are not seeing what this architecture computes
            weights = torch.softmax(qh @ kh.transpose(1, 2) * dh ** -0.5, dim=-1)
            ctx = (weights @ vh).permute(1, 0, 2).reshape(seq_len, self.d)
            attn_out = ctx @ block.attn.out_proj.weight.T + block.attn.out_proj.bias
            resid = x + attn_out
            recomposed = resid + block.mlp(block.ln_2(resid))
            hook_error = float((recomposed - block_out).abs().max())

        strip = lambda t: np.ascontiguousarray(t[:, 1:, :].cpu().numpy(), dtype=np.float32)
        v_np = strip(vh)
        q_np = strip(qh) if with_qk else None
        k_np = strip(kh) if with_qk else None
        return v_np, q_np, k_np, hook_error, (gh, gw)

    def head_weights(self):
        tower = self.tower
        attn = tower.transformer.resblocks[-1].attn
        f32 = lambda t: np.ascontiguousarray(t.detach().cpu().numpy(), dtype=np.float32)
        return {
            "out_proj_weight": f32(attn.out_proj.weight.T),
            "out_proj_bias": f32(attn.out_proj.bias),
            "ln_post_weight": f32(tower.ln_post.weight),
            "ln_post_bias": f32(tower.ln_post.bias),
            "ln_eps": float(tower.ln_post.eps),
            "visual_proj": f32(tower.proj),
        }

    def encode_classes(self, names, templates):
        """(C, d_joint) unit rows: per class, mean of normalized prompt embeddings."""
        return self._encode_classes(names, templates)


class VfmAdapter:
    def __init__(self, model, model_id, mean, std, runner, patch, device="cpu"):
        self.model = model.eval().to(device)
        self.model_id = model_id
        self.mean, self.std = mean, std
        self.device = device
        self.patch = patch
        self._runner = runner

    def patch_features(self, px):
        """px: normalized (3, H, W). Returns (L, D) float32 and the grid."""
        h, w = px.shape[-2:]
        if h % self.patch or w % self.patch:
            raise ExtractorError(f"window {h}x{w} not divisible by VFM patch {self.patch}")
        gh, gw = h // self.patch, w // self.patch
        with torch.no_grad():
            tokens = self._runner(self.model, px.unsqueeze(0).to(self.device), (gh, gw))
        tokens = _squeeze_tokens(tokens) if tokens.dim() == 3 and tokens.shape[0] == 1 else tokens
        if tokens.shape[0] < gh * gw:
            raise ExtractorError(f"model returned {tokens.shape[0]} tokens for a {gh}x{gw} grid")
        feats = tokens[-gh * gw:, :]  # leading class/register tokens dropped
        return np.ascontiguousarray(feats.cpu().numpy(), dtype=np.float32), (gh, gw)


def _hashed_class_encoder(model_id, d_joint):
    def encode(names, templates):
        rows = []
        for name in names:
            acc = np.zeros(d_joint)
            for template in templates:
                prompt = template.format(name)
                digest = hashlib.sha256(f"{model_id}|{prompt}".encode()).digest()
                rng = np.random.RandomState(int.from_bytes(digest[:4], "little"))
                vec = rng.randn(d_joint)
                acc += vec / np.linalg.norm(vec)
            acc /= np.linalg.norm(acc)
            rows.append(acc)
        return np.asarray(rows, dtype=np.float32)

    return encode


def _parse_tiny_options(spec, allowed):
    if ":" not in spec:
        return {}
    options = {}
    for part in spec.split(":", 1)[1].split(","):
        if "=" not in part:
            raise ExtractorError(f"bad model option {part!r} in {spec!r}, expected key=value")
        key, value = part.split("=", 1)
        key = key.strip()
        if key not in allowed:
            raise ExtractorError(f"unknown model option {key!r} in {spec!r}, expected {allowed}")
        options[key] = int(value)
    return options


def load_clip(spec, device="cpu"):
    if spec == "tiny-clip" or spec.startswith("tiny-clip:"):
        opts = _parse_tiny_options(spec, ("seed", "patch", "width", "heads", "depth", "joint", "size"))
        tower = build_tiny_clip(
            seed=opts.get("seed", 0),
            patch=opts.get("patch", 16),
            width=opts.get("width", 64),
            heads=opts.get("heads", 4),
            depth=opts.get("depth", 2),
            output_dim=opts.get("joint", 32),
            image_size=opts.get("size", 64),
        )
        encoder = _hashed_class_encoder(spec, int(tower.proj.shape[1]))
        return ClipAdapter(tower, spec, _TINY_MEAN, _TINY_STD, encoder, device)
    if spec.startswith("openclip:"):
        try:
            import open_clip
        except ImportError as err:
            raise ExtractorError(f"{spec!r} needs the open_clip package: {err}") from None
        parts = spec.split(":")
        if len(parts) != 3:
            raise ExtractorError(f"openclip spec {spec!r} must be openclip:<model>:<pretrained>")
        _, name, pretrained = parts
        model, _, _ = open_clip.create_model_and_transforms(name, pretrained=pretrained)
        tokenizer = open_clip.get_tokenizer(name)
        mean = getattr(model.visual, "image_mean", None) or (0.48145466, 0.4578275, 0.40821073)
        std = getattr(model.visual, "image_std", None) or (0.26862954, 0.26130258, 0.27577711)

        def encode(names, templates):
            rows = []
            with torch.no_grad():
                for cls in names:
                    toks = tokenizer([t.format(cls) for t in templates]).to(device)
                    emb = model.encode_text(toks).float()
                    emb = emb / emb.norm(dim=-1, keepdim=True)
                    row = emb.mean(dim=0)
                    rows.append((row / row.norm()).cpu().numpy())
            return np.asarray(rows, dtype=np.float32)

        model = model.to(device)
        return ClipAdapter(model.visual, spec, mean, std, encode, device)
    raise ExtractorError(f"unknown CLIP model spec {spec!r}")


def _tiny_vfm_runner(model, px, grid):
    gh, gw = grid
    base = getattr(model, "_base_pos", None)
    if base is None:
        model._base_pos = model.pos_embed.detach().clone()
        base = model._base_pos
    with torch.no_grad():
        model.pos_embed = nn.Parameter(interpolate_pos_embed(base, gh, gw))
    return model(px)


def _dino_runner(model, px, grid):
    # the DINO ViT interpolates its own positional encoding
    return model.get_intermediate_layers(px, n=1)[0]


def load_vfm(spec, device="cpu"):
    if spec == "tiny-vfm" or spec.startswith("tiny-vfm:"):
        opts = _parse_tiny_options(spec, ("seed", "patch", "width", "heads", "depth", "size"))
        model = build_tiny_vfm(
            seed=opts.get("seed", 0),
            patch=opts.get("patch", 8),
            width=opts.get("width", 48),
            heads=opts.get("heads", 4),
            depth=opts.get("depth", 2),
            image_size=opts.get("size", 64),
        )
        return VfmAdapter(model, spec, _TINY_MEAN, _TINY_STD, _tiny_vfm_runner, model.patch, device)
    if spec.startswith("dino:"):
        name = spec.split(":", 1)[1]
        try:
            model = torch.hub.load("facebookresearch/dino:main", name)
        except Exception as err:
            raise ExtractorError(f"could not load {spec!r} from torch.hub: {err}") from None
        patch = int(model.patch_embed.proj.stride[0])
        return VfmAdapter(model, spec, _IMAGENET_MEAN, _IMAGENET_STD, _dino_runner, patch, device)
    raise ExtractorError(f"unknown VFM model spec {spec!r}")
