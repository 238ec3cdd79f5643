"""Small randomly initialized ViT towers for tests and dry runs.

Module attribute layout deliberately mirrors the real checkpoints: the
CLIP-style tower matches open_clip's VisionTransformer (conv1,
class_embedding, positional_embedding, ln_pre, transformer.resblocks with
ln_1/attn/ln_2/mlp, ln_post, proj; sequence-first tensors inside the
transformer), and the VFM tower matches the timm/DINO layout (patch_embed,
cls_token, pos_embed, blocks with norm1/attn/norm2/mlp, norm). The capture
code in models.py keys off that layout, so exercising it on these towers
exercises the exact path used on real weights.
"""

from collections import OrderedDict

import torch
from torch import nn


class ClipBlock(nn.Module):
    def __init__(self, width, heads):
        super().__init__()
        self.ln_1 = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, heads)
        self.ln_2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(OrderedDict([
            ("c_fc", nn.Linear(width, width * 4)),
            ("gelu", nn.GELU()),
            ("c_proj", nn.Linear(width * 4, width)),
        ]))

    def forward(self, x):
        y = self.ln_1(x)
        x = x + self.attn(y, y, y, need_weights=False)[0]
        return x + self.mlp(self.ln_2(x))


class TinyClipVisual(nn.Module):
    def __init__(self, patch=16, width=64, heads=4, depth=2, output_dim=32, image_size=64):
        super().__init__()
        self.patch = patch
        self.conv1 = nn.Conv2d(3, width, patch, patch, bias=False)
        scale = width ** -0.5
        grid = image_size // patch
        self.class_embedding = nn.Parameter(scale * torch.randn(width))
        self.positional_embedding = nn.Parameter(scale * torch.randn(grid * grid + 1, width))
        self.ln_pre = nn.LayerNorm(width)
        self.transformer = nn.Module()
        self.transformer.resblocks = nn.ModuleList(ClipBlock(width, heads) for _ in range(depth))
        self.ln_post = nn.LayerNorm(width)
        self.proj = nn.Parameter(scale * torch.randn(width, output_dim))

    def forward(self, px):
        x = self.conv1(px)
        x = x.reshape(x.shape[0], x.shape[1], -1).permute(0, 2, 1)
        cls = self.class_embedding.to(x.dtype).expand(x.shape[0], 1, -1)
        x = torch.cat([cls, x], dim=1) + self.positional_embedding
        x = self.ln_pre(x)
        x = x.permute(1, 0, 2)  # sequence-first, as in the real tower
        for block in self.transformer.resblocks:
            x = block(x)
        x = x.permute(1, 0, 2)
        return self.ln_post(x[:, 0]) @ self.proj


class VfmAttention(nn.Module):
    def __init__(self, width, heads):
        super().__init__()
        self.num_heads = heads
        self.qkv = nn.Linear(width, width * 3)
        self.proj = nn.Linear(width, width)

    def forward(self, x):
        b, l, d = x.shape
        qkv = self.qkv(x).reshape(b, l, 3, self.num_heads, d // self.num_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        out = torch.nn.functional.scaled_dot_product_attention(q, k, v)
        return self.proj(out.transpose(1, 2).reshape(b, l, d))


class VfmBlock(nn.Module):
    def __init__(self, width, heads):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.attn = VfmAttention(width, heads)
        self.norm2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(OrderedDict([
            ("fc1", nn.Linear(width, width * 4)),
            ("act", nn.GELU()),
            ("fc2", nn.Linear(width * 4, width)),
        ]))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class TinyVfm(nn.Module):
    def __init__(self, patch=8, width=48, heads=4, depth=2, image_size=64):
        super().__init__()
        self.patch = patch
        self.patch_embed = nn.Module()
        self.patch_embed.proj = nn.Conv2d(3, width, patch, patch)
        grid = image_size // patch
        self.cls_token = nn.Parameter(0.02 * torch.randn(1, 1, width))
        self.pos_embed = nn.Parameter(0.02 * torch.randn(1, grid * grid + 1, width))
        self.blocks = nn.ModuleList(VfmBlock(width, heads) for _ in range(depth))
        self.norm = nn.LayerNorm(width)

    def forward(self, px):
        x = self.patch_embed.proj(px)
        x = x.reshape(x.shape[0], x.shape[1], -1).permute(0, 2, 1)
        cls = self.cls_token.expand(x.shape[0], -1, -1)
        x = torch.cat([cls, x], dim=1) + self.pos_embed
        for block in self.blocks:
            x = block(x)
        return self.norm(x)


def build_tiny_clip(seed=0, **kwargs):
    torch.manual_seed(seed)
    return TinyClipVisual(**kwargs).eval()


def build_tiny_vfm(seed=0, **kwargs):
    torch.manual_seed(seed)
    return TinyVfm(**kwargs).eval()
