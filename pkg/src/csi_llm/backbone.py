"""Causal-decoder transformer backbone and pretrained-weight ingestion.

The block layout matches the published 12-layer/768-dim decoder family:
pre-layer-norm residual blocks, fused qkv projection, GELU feed-forward,
learned absolute positions, final layer-norm. Attention is computed with an
explicit additive mask so masked positions contribute exactly zero weight:
perturbing token k leaves outputs at positions < k bit-identical.

Weight source layout (``.npz`` archive or a directory of ``.npy`` files),
tensor name -> parameter:

    wpe.weight                  -> positional table (CsiEmbedding.pos_table)
    h.{i}.ln_1.{weight,bias}    -> blocks[i].ln_1
    h.{i}.attn.c_attn.{weight,bias} -> blocks[i].attn.qkv   (weight stored (in, out); transposed)
    h.{i}.attn.c_proj.{weight,bias} -> blocks[i].attn.proj  (transposed)
    h.{i}.ln_2.{weight,bias}    -> blocks[i].ln_2
    h.{i}.mlp.c_fc.{weight,bias}    -> blocks[i].mlp_fc     (transposed)
    h.{i}.mlp.c_proj.{weight,bias}  -> blocks[i].mlp_proj   (transposed)
    ln_f.{weight,bias}          -> final layer-norm

``wte.weight`` and any classifier tensors are ignored: the text vocabulary's
embedding and output ends are replaced by the CSI-specific maps.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, NumericError, WeightLoadError

INIT_MODES = ("pretrained", "random")
TRAINABLE_SCOPES = ("full", "heads_only")

REFERENCE_VOCAB_SIZE = 50257  # published checkpoint vocabulary, discarded on load


@dataclass
class BackboneConfig:
    n_layers: int = 12
    model_dim: int = 768
    n_heads: int = 12
    ff_dim: int | None = None  # defaults to 4 * model_dim
    max_positions: int = 1024
    init_mode: str = "random"
    trainable_scope: str = "full"
    proj_hidden: int = 1024  # output-projection hidden width (heads module)

    def __post_init__(self) -> None:
        if self.ff_dim is None:
            self.ff_dim = 4 * self.model_dim
        for name in ("n_layers", "model_dim", "n_heads", "ff_dim", "max_positions", "proj_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"backbone.{name} must be >= 1, got {getattr(self, name)}")
        if self.model_dim % self.n_heads != 0:
            raise ConfigError(
                f"backbone.model_dim {self.model_dim} not divisible by n_heads {self.n_heads}"
            )
        if self.init_mode not in INIT_MODES:
            raise ConfigError(f"backbone.init_mode must be one of {INIT_MODES}, got {self.init_mode!r}")
        if self.trainable_scope not in TRAINABLE_SCOPES:
            raise ConfigError(
                f"backbone.trainable_scope must be one of {TRAINABLE_SCOPES}, got {self.trainable_scope!r}"
            )


def causal_mask(length: int) -> torch.Tensor:
    """Boolean [L, L]; entry (i, j) is True iff position i may attend to j (j <= i)."""
    if length < 1:
        raise ConfigError(f"mask length must be >= 1, got {length}")
    return torch.tril(torch.ones(length, length, dtype=torch.bool))


class CausalSelfAttention(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.n_heads = cfg.n_heads
        self.head_dim = cfg.model_dim // cfg.n_heads
        self.qkv = nn.Linear(cfg.model_dim, 3 * cfg.model_dim)
        self.proj = nn.Linear(cfg.model_dim, cfg.model_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, length, dim = x.shape
        q, k, v = self.qkv(x).split(dim, dim=2)
        q = q.view(b, length, self.n_heads, self.head_dim).transpose(1, 2)
        k = k.view(b, length, self.n_heads, self.head_dim).transpose(1, 2)
        v = v.view(b, length, self.n_heads, self.head_dim).transpose(1, 2)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        mask = causal_mask(length).to(x.device)
        att = att.masked_fill(~mask, float("-inf"))
        att = torch.softmax(att, dim=-1)
        y = (att @ v).transpose(1, 2).reshape(b, length, dim)
        return self.proj(y)


class Block(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.ln_1 = nn.LayerNorm(cfg.model_dim)
        self.attn = CausalSelfAttention(cfg)
        self.ln_2 = nn.LayerNorm(cfg.model_dim)
        self.mlp_fc = nn.Linear(cfg.model_dim, cfg.ff_dim)
        self.mlp_proj = nn.Linear(cfg.ff_dim, cfg.model_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln_1(x))
        x = x + self.mlp_proj(torch.nn.functional.gelu(self.mlp_fc(x)))
        return x


class Backbone(nn.Module):
    """Stack of unidirectional-attention blocks with a final layer-norm."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.model_dim)
        self.apply(self._init_weights)
        # residual-path projections get the family's depth-scaled initialization
        scaled = 0.02 / math.sqrt(2 * cfg.n_layers)
        for block in self.blocks:
            nn.init.normal_(block.attn.proj.weight, std=scaled)
            nn.init.normal_(block.mlp_proj.weight, std=scaled)

    @staticmethod
    def _init_weights(module: nn.Module) -> None:
        if isinstance(module, nn.Linear):
            nn.init.normal_(module.weight, std=0.02)
            nn.init.zeros_(module.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """[L, D] or [B, L, D] token embeddings -> hidden states, same shape.

        Hidden state at position i depends only on inputs 0..i.
        """
        if not torch.isfinite(x).all():
            raise NumericError("backbone input contains non-finite values")
        batched = x.ndim == 3
        h = x if batched else x.unsqueeze(0)
        for block in self.blocks:
            h = block(h)
        h = self.ln_f(h)
        return h if batched else h.squeeze(0)


def transferable_param_count(cfg: BackboneConfig) -> int:
    """Parameters populated by load_pretrained: blocks + positional table + ln_f."""
    d, f = cfg.model_dim, cfg.ff_dim
    per_block = (d * 3 * d + 3 * d) + (d * d + d) + (f * d + f) + (d * f + d) + 4 * d
    return cfg.n_layers * per_block + cfg.max_positions * d + 2 * d


def reference_checkpoint_param_count(cfg: BackboneConfig) -> int:
    """Published checkpoint size: transferable tensors plus the text vocab table."""
    return transferable_param_count(cfg) + REFERENCE_VOCAB_SIZE * cfg.model_dim


def _expected_tensors(cfg: BackboneConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.model_dim, cfg.ff_dim
    spec: dict[str, tuple[int, ...]] = {"wpe.weight": (cfg.max_positions, d)}
    for i in range(cfg.n_layers):
        p = f"h.{i}."
        spec[p + "ln_1.weight"] = (d,)
        spec[p + "ln_1.bias"] = (d,)
        spec[p + "attn.c_attn.weight"] = (d, 3 * d)  # stored (in, out)
        spec[p + "attn.c_attn.bias"] = (3 * d,)
        spec[p + "attn.c_proj.weight"] = (d, d)
        spec[p + "attn.c_proj.bias"] = (d,)
        spec[p + "ln_2.weight"] = (d,)
        spec[p + "ln_2.bias"] = (d,)
        spec[p + "mlp.c_fc.weight"] = (d, f)
        spec[p + "mlp.c_fc.bias"] = (f,)
        spec[p + "mlp.c_proj.weight"] = (f, d)
        spec[p + "mlp.c_proj.bias"] = (d,)
    spec["ln_f.weight"] = (d,)
    spec["ln_f.bias"] = (d,)
    return spec


def _read_source(source) -> dict[str, np.ndarray]:
    path = os.fspath(source)
    if os.path.isdir(path):
        out = {}
        for fname in sorted(os.listdir(path)):
            if fname.endswith(".npy"):
                out[fname[: -len(".npy")]] = np.load(os.path.join(path, fname))
        return out
    with np.load(path) as archive:
        return {name: archive[name] for name in archive.files}


def load_pretrained(source, cfg: BackboneConfig) -> dict[str, torch.Tensor]:
    """Read and validate a pretrained source; returns source-named float32 tensors.

    Raises WeightLoadError naming the first missing or mis-shaped tensor. The
    CSI embedding affine and output projection are never in the source; the
    caller initializes those fresh.
    """
    tensors = _read_source(source)
    out: dict[str, torch.Tensor] = {}
    for name, shape in _expected_tensors(cfg).items():
        if name not in tensors:
            raise WeightLoadError(f"weight source missing tensor {name!r} of shape {shape}")
        arr = tensors[name]
        if tuple(arr.shape) != shape:
            raise WeightLoadError(
                f"tensor {name!r} has shape {tuple(arr.shape)}, expected {shape}"
            )
        out[name] = torch.from_numpy(np.asarray(arr, dtype=np.float32).copy())
    return out


def install_pretrained(backbone: Backbone, pos_table: nn.Parameter, source) -> None:
    """Copy a validated source into a backbone and its positional table."""
    cfg = backbone.cfg
    tensors = load_pretrained(source, cfg)
    with torch.no_grad():
        pos_table.copy_(tensors["wpe.weight"])
        backbone.ln_f.weight.copy_(tensors["ln_f.weight"])
        backbone.ln_f.bias.copy_(tensors["ln_f.bias"])
        for i, block in enumerate(backbone.blocks):
            p = f"h.{i}."
            block.ln_1.weight.copy_(tensors[p + "ln_1.weight"])
            block.ln_1.bias.copy_(tensors[p + "ln_1.bias"])
            block.attn.qkv.weight.copy_(tensors[p + "attn.c_attn.weight"].t())
            block.attn.qkv.bias.copy_(tensors[p + "attn.c_attn.bias"])
            block.attn.proj.weight.copy_(tensors[p + "attn.c_proj.weight"].t())
            block.attn.proj.bias.copy_(tensors[p + "attn.c_proj.bias"])
            block.ln_2.weight.copy_(tensors[p + "ln_2.weight"])
            block.ln_2.bias.copy_(tensors[p + "ln_2.bias"])
            block.mlp_fc.weight.copy_(tensors[p + "mlp.c_fc.weight"].t())
            block.mlp_fc.bias.copy_(tensors[p + "mlp.c_fc.bias"])
            block.mlp_proj.weight.copy_(tensors[p + "mlp.c_proj.weight"].t())
            block.mlp_proj.bias.copy_(tensors[p + "mlp.c_proj.bias"])


def write_backbone_source(path, cfg: BackboneConfig, seed: int = 0, include_vocab_table: bool = False) -> None:
    """Write a randomly initialized weight source in the published tensor layout.

    Backs loader tests and ablation smoke runs when real pretrained text
    weights are unavailable.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in _expected_tensors(cfg).items():
        if name.endswith("ln_1.weight") or name.endswith("ln_2.weight") or name == "ln_f.weight":
            tensors[name] = np.ones(shape, dtype=np.float32)
        elif name.endswith(".bias"):
            tensors[name] = np.zeros(shape, dtype=np.float32)
        else:
            tensors[name] = rng.normal(0.0, 0.02, size=shape).astype(np.float32)
    if include_vocab_table:
        tensors["wte.weight"] = rng.normal(
            0.0, 0.02, size=(REFERENCE_VOCAB_SIZE, cfg.model_dim)
        ).astype(np.float32)
    np.savez(path, **tensors)
