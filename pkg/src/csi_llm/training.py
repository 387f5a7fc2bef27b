"""Training: aligned next-step objective, baseline objectives, loop, checkpoints.

The next-step model trains like a causal language model: one forward pass per
window yields predictions at every position, and the loss sums per-position
MSE against the one-step-shifted targets. Baselines train as plain supervised
regressors: fixed-length context in, the next step (or next four steps) out.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .backbone import BackboneConfig
from .channel_data import ChannelDataset, ChannelSample, NormStats, ScenarioConfig
from .errors import ConfigError, DimensionError, NumericError
from .model import BASELINE_CONTEXT, BASELINE_OUT_STEPS, CsiLlm, FixedStepModel, build_model

OPTIMIZERS = ("adaptive_moment", "plain_sgd")
WINDOW_POLICIES = ("fixed_zero", "random_in_range")


@dataclass
class HParams:
    l_m: int = 16
    batch_size: int = 512
    lr: float = 1e-3
    max_epochs: int = 50
    seed: int = 0
    optimizer: str = "adaptive_moment"
    window_offset_policy: str = "random_in_range"
    max_steps: int | None = None  # optional global cap on optimizer steps
    micro_batch_size: int | None = None  # gradient accumulation below batch_size

    def __post_init__(self) -> None:
        if self.l_m < 1:
            raise ConfigError(f"hparams.l_m must be >= 1, got {self.l_m}")
        if self.batch_size < 1:
            raise ConfigError(f"hparams.batch_size must be >= 1, got {self.batch_size}")
        if self.lr < 0:
            raise ConfigError(f"hparams.lr must be >= 0, got {self.lr}")
        if self.max_epochs < 1:
            raise ConfigError(f"hparams.max_epochs must be >= 1, got {self.max_epochs}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"hparams.optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.window_offset_policy not in WINDOW_POLICIES:
            raise ConfigError(
                f"hparams.window_offset_policy must be one of {WINDOW_POLICIES}, "
                f"got {self.window_offset_policy!r}"
            )


def next_step_loss(predictions: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Sum over positions of per-position MSE (mean over step-tensor entries).

    [L, *step] inputs give the per-window loss; [B, L, *step] inputs give the
    batch mean of per-window losses.
    """
    if predictions.shape != targets.shape:
        raise DimensionError(
            f"prediction shape {tuple(predictions.shape)} != target shape {tuple(targets.shape)}"
        )
    if predictions.ndim not in (5, 6) or predictions.shape[-5] < 1:
        raise DimensionError(
            f"expected [L, 2, tx, rx, prb] or [B, L, 2, tx, rx, prb], got {tuple(predictions.shape)}"
        )
    sq = (predictions - targets) ** 2
    per_position = sq.mean(dim=tuple(range(sq.ndim - 4, sq.ndim)))  # [..., L]
    per_window = per_position.sum(dim=-1)
    return per_window.mean() if per_window.ndim > 0 else per_window


def make_training_window(
    sample: ChannelSample, hp: HParams, rng: np.random.Generator | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """(inputs steps o..o+l_m-1, targets steps o+1..o+l_m) for a sampled offset o."""
    n_steps = sample.csi.shape[0]
    if n_steps < hp.l_m + 1:
        raise ConfigError(
            f"sequence of {n_steps} steps too short for l_m={hp.l_m} (needs l_m+1)"
        )
    if hp.window_offset_policy == "fixed_zero":
        offset = 0
    else:
        rng = np.random.default_rng(hp.seed) if rng is None else rng
        offset = int(rng.integers(0, n_steps - hp.l_m))
    return sample.csi[offset : offset + hp.l_m], sample.csi[offset + 1 : offset + hp.l_m + 1]


def _window_batch(
    stacked: np.ndarray,
    ids: np.ndarray,
    offsets: np.ndarray,
    context: int,
    k: int,
    shifted: bool,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Gather [B, context, *step] inputs and [B, k, *step] targets at per-sample offsets.

    shifted=True pairs each input position with the next step (next-step
    objective); shifted=False places the k targets after the whole context
    (fixed-step objectives).
    """
    in_idx = offsets[:, None] + np.arange(context)[None, :]
    if shifted:
        tg_idx = in_idx + 1
    else:
        tg_idx = offsets[:, None] + context + np.arange(k)[None, :]
    inputs = stacked[ids[:, None], in_idx]
    targets = stacked[ids[:, None], tg_idx]
    return torch.from_numpy(inputs), torch.from_numpy(targets)


@dataclass
class Checkpoint:
    variant: str
    state: dict[str, torch.Tensor]
    backbone_cfg: BackboneConfig
    scenario: ScenarioConfig
    hparams: HParams
    norm_stats: NormStats | None
    step_counter: int
    loss_curve: dict[str, list[float]] = field(default_factory=dict)
    best_val_loss: float = float("nan")

    def build_model(self) -> torch.nn.Module:
        if self.variant == "csi-llm":
            model = CsiLlm(self.scenario, self.backbone_cfg)
        else:
            model = FixedStepModel(self.scenario, self.backbone_cfg, self.variant)
        model.load_state_dict(self.state)
        model.eval()
        return model

    def save(self, path) -> None:
        meta = {
            "variant": self.variant,
            "backbone_cfg": asdict(self.backbone_cfg),
            "scenario": asdict(self.scenario),
            "hparams": asdict(self.hparams),
            "norm_stats": None
            if self.norm_stats is None
            else {
                "mode": self.norm_stats.mode,
                "scale": np.asarray(self.norm_stats.scale).tolist(),
            },
            "step_counter": self.step_counter,
            "loss_curve": self.loss_curve,
            "best_val_loss": self.best_val_loss,
        }
        torch.save({"meta_json": json.dumps(meta, indent=1), "state": self.state}, path)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        payload = torch.load(path, map_location="cpu", weights_only=True)
        meta = json.loads(payload["meta_json"])
        ns = meta["norm_stats"]
        if ns is not None:
            scale = ns["scale"]
            ns = NormStats(mode=ns["mode"], scale=np.asarray(scale) if isinstance(scale, list) else scale)
        return cls(
            variant=meta["variant"],
            state=payload["state"],
            backbone_cfg=BackboneConfig(**meta["backbone_cfg"]),
            scenario=ScenarioConfig(**meta["scenario"]),
            hparams=HParams(**meta["hparams"]),
            norm_stats=ns,
            step_counter=meta["step_counter"],
            loss_curve=meta["loss_curve"],
            best_val_loss=meta["best_val_loss"],
        )


def _make_optimizer(model: torch.nn.Module, hp: HParams) -> torch.optim.Optimizer:
    params = [p for p in model.parameters() if p.requires_grad]
    if hp.optimizer == "adaptive_moment":
        return torch.optim.Adam(params, lr=hp.lr, betas=(0.9, 0.999))
    return torch.optim.SGD(params, lr=hp.lr)


def _batch_loss(model, variant: str, inputs: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    if variant == "csi-llm":
        return next_step_loss(model(inputs), targets)
    return torch.mean((model(inputs) - targets) ** 2)


def validation_loss(model, variant: str, ds: ChannelDataset, hp: HParams) -> float:
    """Deterministic validation: offset-0 windows, full split, no grad."""
    stacked = ds.stack()
    ids = np.arange(len(ds))
    shifted = variant == "csi-llm"
    context = hp.l_m if shifted else BASELINE_CONTEXT[variant]
    k = hp.l_m if shifted else BASELINE_OUT_STEPS[variant]
    model.eval()
    losses = []
    with torch.no_grad():
        for start in range(0, len(ds), 256):
            chunk = ids[start : start + 256]
            inputs, targets = _window_batch(
                stacked, chunk, np.zeros(len(chunk), dtype=int), context, k, shifted
            )
            losses.append(float(_batch_loss(model, variant, inputs, targets)) * len(chunk))
    return sum(losses) / len(ds)


def _train(
    variant: str,
    datasets: tuple[ChannelDataset, ChannelDataset],
    cfg: BackboneConfig,
    hp: HParams,
    pretrained_source=None,
    progress: bool = False,
) -> Checkpoint:
    train_ds, val_ds = datasets
    scenario = train_ds.scenario
    shifted = variant == "csi-llm"
    context = hp.l_m if shifted else BASELINE_CONTEXT[variant]
    k = hp.l_m if shifted else BASELINE_OUT_STEPS[variant]
    horizon_need = context + 1 if shifted else context + k
    if scenario.n_steps < horizon_need:
        raise ConfigError(
            f"scenario.n_steps={scenario.n_steps} too short for variant {variant} "
            f"(needs {horizon_need})"
        )

    model = build_model(variant, scenario, cfg, seed=hp.seed, pretrained_source=pretrained_source)
    optimizer = _make_optimizer(model, hp)
    rng = np.random.default_rng(hp.seed)
    stacked = train_ds.stack()
    n = len(train_ds)
    max_offset = scenario.n_steps - horizon_need  # inclusive
    micro = hp.micro_batch_size or hp.batch_size

    curve: dict[str, list[float]] = {"train": [], "val": []}
    best_val = float("inf")
    best_state = None
    step_counter = 0
    last_finite = None
    done = False

    for epoch in range(hp.max_epochs):
        model.train()
        order = rng.permutation(n)
        if hp.window_offset_policy == "random_in_range" and max_offset > 0:
            offsets = rng.integers(0, max_offset + 1, size=n)
        else:
            offsets = np.zeros(n, dtype=int)
        epoch_losses = []
        for start in range(0, n, hp.batch_size):
            ids = order[start : start + hp.batch_size]
            optimizer.zero_grad()
            batch_loss = 0.0
            for ms in range(0, len(ids), micro):
                sub = ids[ms : ms + micro]
                inputs, targets = _window_batch(stacked, sub, offsets[sub], context, k, shifted)
                loss = _batch_loss(model, variant, inputs, targets) * (len(sub) / len(ids))
                loss.backward()
                batch_loss += float(loss.detach())
            if not np.isfinite(batch_loss):
                raise NumericError(
                    f"training diverged at step {step_counter}: non-finite loss; "
                    f"last finite loss {last_finite}"
                )
            last_finite = batch_loss
            optimizer.step()
            step_counter += 1
            epoch_losses.append(batch_loss)
            if hp.max_steps is not None and step_counter >= hp.max_steps:
                done = True
                break
        curve["train"].append(float(np.mean(epoch_losses)))
        val = validation_loss(model, variant, val_ds, hp)
        curve["val"].append(val)
        if progress:
            print(f"epoch {epoch}: train {curve['train'][-1]:.6f}  val {val:.6f}")
        if val < best_val:
            best_val = val
            best_state = {name: t.detach().clone() for name, t in model.state_dict().items()}
        if done:
            break

    state = best_state if best_state is not None else copy.deepcopy(model.state_dict())
    return Checkpoint(
        variant=variant,
        state=state,
        backbone_cfg=cfg,
        scenario=scenario,
        hparams=hp,
        norm_stats=train_ds.norm_stats,
        step_counter=step_counter,
        loss_curve=curve,
        best_val_loss=best_val,
    )


def train_csi_llm(
    datasets: tuple[ChannelDataset, ChannelDataset],
    cfg: BackboneConfig,
    hp: HParams,
    pretrained_source=None,
    progress: bool = False,
) -> Checkpoint:
    """Train the variable-length next-step model on normalized train/val splits."""
    return _train("csi-llm", datasets, cfg, hp, pretrained_source, progress)


def train_baseline(
    datasets: tuple[ChannelDataset, ChannelDataset],
    variant: str,
    cfg: BackboneConfig,
    hp: HParams,
    pretrained_source=None,
    progress: bool = False,
) -> Checkpoint:
    """Train a fixed-step baseline (fixed4/fixed8/fixed16/parallel4)."""
    if variant not in BASELINE_CONTEXT:
        raise ConfigError(f"baseline variant must be one of {tuple(BASELINE_CONTEXT)}, got {variant!r}")
    return _train(variant, datasets, cfg, hp, pretrained_source, progress)
