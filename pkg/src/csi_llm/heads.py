"""Output heads: the nonlinear next-step projection and the fixed-step baselines.

The next-step projection is a one-hidden-layer map (affine -> GELU -> affine)
so the final layer stays linear: CSI entries are unbounded reals. Fixed-step
heads concatenate all context hidden states, which hard-wires them to one
context length; their parameter count grows linearly in that length while the
next-step projection's does not.
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import DimensionError


class OutputProjection(nn.Module):
    """model_dim -> proj_hidden -> feature_dim, reshaped to one CSI step."""

    def __init__(self, model_dim: int, proj_hidden: int, step_shape: tuple[int, ...]):
        super().__init__()
        self.step_shape = tuple(step_shape)
        feature_dim = 1
        for d in self.step_shape:
            feature_dim *= d
        self.fc_in = nn.Linear(model_dim, proj_hidden)
        self.fc_out = nn.Linear(proj_hidden, feature_dim)
        nn.init.normal_(self.fc_in.weight, std=0.02)
        nn.init.normal_(self.fc_out.weight, std=0.02)
        nn.init.zeros_(self.fc_in.bias)
        nn.init.zeros_(self.fc_out.bias)

    def forward(self, hidden: torch.Tensor) -> torch.Tensor:
        flat = self.fc_out(torch.nn.functional.gelu(self.fc_in(hidden)))
        return flat.reshape(*hidden.shape[:-1], *self.step_shape)


def project_next_step(hidden_last: torch.Tensor, w: OutputProjection) -> torch.Tensor:
    """[model_dim] (or batched [..., model_dim]) -> one CSI step per row."""
    return w(hidden_last)


def project_all_positions(hidden: torch.Tensor, w: OutputProjection) -> torch.Tensor:
    """[L, model_dim] -> [L, step]; row i is the prediction of step i+1."""
    return w(hidden)


class FixedStepHead(nn.Module):
    """Concatenates exactly `context_len` hidden states; emits `out_steps` CSI steps."""

    def __init__(
        self,
        context_len: int,
        model_dim: int,
        hidden_width: int,
        step_shape: tuple[int, ...],
        out_steps: int = 1,
    ):
        super().__init__()
        if out_steps not in (1, 4):
            raise DimensionError(f"fixed-step head emits 1 or 4 steps, got {out_steps}")
        self.context_len = context_len
        self.out_steps = out_steps
        self.step_shape = tuple(step_shape)
        feature_dim = 1
        for d in self.step_shape:
            feature_dim *= d
        self.fc_in = nn.Linear(context_len * model_dim, hidden_width)
        self.fc_out = nn.Linear(hidden_width, out_steps * feature_dim)
        nn.init.normal_(self.fc_in.weight, std=0.02)
        nn.init.normal_(self.fc_out.weight, std=0.02)
        nn.init.zeros_(self.fc_in.bias)
        nn.init.zeros_(self.fc_out.bias)

    def forward(self, hidden: torch.Tensor) -> torch.Tensor:
        """[l, model_dim] or [B, l, model_dim] -> [out_steps, step] or [B, out_steps, step]."""
        batched = hidden.ndim == 3
        length = hidden.shape[1] if batched else hidden.shape[0]
        if length != self.context_len:
            raise DimensionError(
                f"fixed-step head built for context length {self.context_len}, got {length}"
            )
        flat = hidden.reshape(*hidden.shape[:-2], -1)
        out = self.fc_out(torch.nn.functional.gelu(self.fc_in(flat)))
        return out.reshape(*hidden.shape[:-2], self.out_steps, *self.step_shape)


def fixed_step_predict(hidden: torch.Tensor, w: FixedStepHead) -> torch.Tensor:
    return w(hidden)
