"""Assembled predictors: variable-length next-step model and fixed-step baselines.

Both share the CSI embedding and the causal-decoder backbone; they differ only
in the output head and, downstream, the training objective. The next-step
model applies its head at every position during training (so the summed
next-step loss comes out of one forward pass) and only at the last position at
inference, which is what makes any context length serviceable.
"""

from __future__ import annotations

import torch
from torch import nn

from .backbone import Backbone, BackboneConfig, install_pretrained
from .channel_data import ScenarioConfig
from .errors import ConfigError
from .heads import FixedStepHead, OutputProjection
from .tokenization import CsiEmbedding, EmbeddingConfig

VARIANTS = ("csi-llm", "fixed4", "fixed8", "fixed16", "parallel4")

BASELINE_CONTEXT = {"fixed4": 4, "fixed8": 8, "fixed16": 16, "parallel4": 4}
BASELINE_OUT_STEPS = {"fixed4": 1, "fixed8": 1, "fixed16": 1, "parallel4": 4}


class CsiLlm(nn.Module):
    def __init__(self, scenario: ScenarioConfig, cfg: BackboneConfig):
        super().__init__()
        self.scenario_step_shape = scenario.step_shape
        self.cfg = cfg
        self.embedding = CsiEmbedding(
            EmbeddingConfig(scenario.feature_dim, cfg.model_dim, cfg.max_positions)
        )
        self.backbone = Backbone(cfg)
        self.head = OutputProjection(cfg.model_dim, cfg.proj_hidden, scenario.step_shape)

    def forward(self, steps: torch.Tensor) -> torch.Tensor:
        """Training path: predictions at every position.

        [B, L, 2, tx, rx, prb] -> [B, L, 2, tx, rx, prb] where output row i
        predicts input step i+1. Unbatched [L, ...] works too.
        """
        hidden = self.backbone(self.embedding(steps))
        return self.head(hidden)

    @torch.no_grad()
    def predict_next(self, context: torch.Tensor) -> torch.Tensor:
        """Inference path: only the last hidden state reaches the head.

        [l, 2, tx, rx, prb] -> [2, tx, rx, prb], or batched [B, l, ...] -> [B, ...].
        """
        hidden = self.backbone(self.embedding(context))
        last = hidden[..., -1, :]
        return self.head(last)


class FixedStepModel(nn.Module):
    def __init__(self, scenario: ScenarioConfig, cfg: BackboneConfig, variant: str):
        super().__init__()
        if variant not in BASELINE_CONTEXT:
            raise ConfigError(f"unknown baseline variant {variant!r}")
        self.variant = variant
        self.context_len = BASELINE_CONTEXT[variant]
        self.out_steps = BASELINE_OUT_STEPS[variant]
        self.cfg = cfg
        self.embedding = CsiEmbedding(
            EmbeddingConfig(scenario.feature_dim, cfg.model_dim, cfg.max_positions)
        )
        self.backbone = Backbone(cfg)
        self.head = FixedStepHead(
            self.context_len, cfg.model_dim, cfg.proj_hidden, scenario.step_shape, self.out_steps
        )

    def forward(self, context: torch.Tensor) -> torch.Tensor:
        """[B, l, 2, tx, rx, prb] -> [B, out_steps, 2, tx, rx, prb] (or unbatched)."""
        hidden = self.backbone(self.embedding(context))
        return self.head(hidden)

    @torch.no_grad()
    def predict_block(self, context: torch.Tensor) -> torch.Tensor:
        return self.forward(context)


def build_model(
    variant: str,
    scenario: ScenarioConfig,
    cfg: BackboneConfig,
    seed: int = 0,
    pretrained_source=None,
) -> nn.Module:
    """Seeded construction honoring init_mode and trainable_scope."""
    if variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}, got {variant!r}")
    torch.manual_seed(seed)
    model = CsiLlm(scenario, cfg) if variant == "csi-llm" else FixedStepModel(scenario, cfg, variant)
    if cfg.init_mode == "pretrained":
        if pretrained_source is None:
            raise ConfigError("init_mode=pretrained requires a pretrained weight source")
        install_pretrained(model.backbone, model.embedding.pos_table, pretrained_source)
    apply_trainable_scope(model, cfg.trainable_scope)
    return model


def apply_trainable_scope(model: nn.Module, scope: str) -> None:
    """heads_only freezes the transformer blocks, final layer-norm, and positional table."""
    if scope == "full":
        for p in model.parameters():
            p.requires_grad_(True)
        return
    for p in model.parameters():
        p.requires_grad_(True)
    for p in model.backbone.parameters():
        p.requires_grad_(False)
    model.embedding.pos_table.requires_grad_(False)
