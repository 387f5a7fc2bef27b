"""CSI <-> token-space conversion.

One time step of CSI is one token: the [2, tx, rx, prb] step tensor is
flattened row-major to a feature vector, compressed by a shared affine map to
the backbone width, and offset by the backbone's learnable positional table.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError, DimensionError


@dataclass
class EmbeddingConfig:
    feature_dim: int
    model_dim: int = 768
    max_positions: int = 1024

    def __post_init__(self) -> None:
        for name in ("feature_dim", "model_dim", "max_positions"):
            if getattr(self, name) < 1:
                raise ConfigError(f"embedding.{name} must be >= 1, got {getattr(self, name)}")
        if self.feature_dim <= self.model_dim:
            warnings.warn(
                f"feature_dim {self.feature_dim} <= model_dim {self.model_dim}: "
                "the token embedding is not a compression in this scenario",
                stacklevel=2,
            )


@dataclass
class TokenSequence:
    embeddings: torch.Tensor  # [length, model_dim]
    length: int
    source_steps: list[int]


def flatten_step(csi_step, step_shape: tuple[int, ...] | None = None):
    """Row-major flatten of one [2, tx, rx, prb] step.

    Flat index of (p, t, r, b) is ((p*n_tx + t)*n_rx + r)*n_prb + b; exact
    inverse is unflatten_step. Works on numpy arrays and torch tensors.
    """
    if csi_step.ndim != 4 or csi_step.shape[0] != 2:
        raise DimensionError(f"expected one CSI step [2, tx, rx, prb], got {tuple(csi_step.shape)}")
    if step_shape is not None and tuple(csi_step.shape) != tuple(step_shape):
        raise DimensionError(f"step shape {tuple(csi_step.shape)} != scenario {tuple(step_shape)}")
    return csi_step.reshape(-1)


def unflatten_step(flat, step_shape: tuple[int, ...]):
    expected = 1
    for d in step_shape:
        expected *= d
    if flat.ndim != 1 or flat.shape[0] != expected:
        raise DimensionError(f"expected flat vector of length {expected}, got {tuple(flat.shape)}")
    return flat.reshape(step_shape)


class CsiEmbedding(nn.Module):
    """Shared affine compression plus learnable positional tokens.

    The positional table is byte-compatible with the pretrained backbone's
    table and is overwritten by it when init is pretrained; under random init
    it gets the backbone family's 0.02-std normal initialization.
    """

    def __init__(self, cfg: EmbeddingConfig):
        super().__init__()
        self.cfg = cfg
        self.proj = nn.Linear(cfg.feature_dim, cfg.model_dim)
        self.pos_table = nn.Parameter(torch.empty(cfg.max_positions, cfg.model_dim))
        nn.init.normal_(self.proj.weight, std=0.02)
        nn.init.zeros_(self.proj.bias)
        nn.init.normal_(self.pos_table, std=0.02)

    def position_tokens(self, length: int) -> torch.Tensor:
        """Rows 0..length-1 of the positional table."""
        if length < 1 or length > self.cfg.max_positions:
            raise DimensionError(
                f"sequence length {length} outside [1, {self.cfg.max_positions}]"
            )
        return self.pos_table[:length]

    def forward(self, steps: torch.Tensor) -> torch.Tensor:
        """[L, 2, tx, rx, prb] or [B, L, 2, tx, rx, prb] -> [L, D] or [B, L, D]."""
        batched = steps.ndim == 6
        if not batched and steps.ndim != 5:
            raise DimensionError(f"expected [B, L] or [L] of CSI steps, got {tuple(steps.shape)}")
        length = steps.shape[1] if batched else steps.shape[0]
        flat = steps.reshape(*steps.shape[: 2 if batched else 1], -1)
        if flat.shape[-1] != self.cfg.feature_dim:
            raise DimensionError(
                f"step feature dim {flat.shape[-1]} != configured {self.cfg.feature_dim}"
            )
        return self.proj(flat) + self.position_tokens(length)


def embed_sequence(sample_steps: torch.Tensor, embedding: CsiEmbedding) -> TokenSequence:
    """Per-step tokenization of an [L, 2, tx, rx, prb] trajectory slice."""
    emb = embedding(sample_steps)
    length = emb.shape[0]
    return TokenSequence(embeddings=emb, length=length, source_steps=list(range(length)))
