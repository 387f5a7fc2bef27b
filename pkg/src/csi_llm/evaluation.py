"""NMSE metric, one-step grids, autoregressive rollout, ablation pairing.

All evaluation runs on raw (unnormalized) CSI: predictors normalize their
input with the checkpoint's stored stats and denormalize their output, so
records hold physical-scale tensors. NMSE is scale-invariant, which makes the
choice cosmetic for metrics but keeps records interpretable.

One-step protocol: for context length l and anchor s, the context is steps
s-l .. s-1 and the target is step s (0-based), so every length predicts the
same target step. Rollout protocol: the model keeps every true context step
and every own prediction in its window (retain_all); fixed-step baselines
slide a fixed window onto their own predictions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch

from .backbone import BackboneConfig
from .channel_data import ChannelDataset, apply_normalization, normalize
from .errors import ConfigError, DegenerateDataError, DimensionError
from .training import Checkpoint, HParams, train_csi_llm

NMSE_DB_FLOOR = 1e-12


def nmse(actual, predicted, squared: bool = True) -> tuple[float, float]:
    """(linear, dB) normalized error over all entries, both planes jointly.

    squared=True is the reporting default: ||A - P||^2 / ||A||^2. squared=False
    computes the unsquared-norm ratio for audit. dB is 10*log10 with the
    linear value clamped at 1e-12, so exact equality reports -120 dB.
    """
    a = np.asarray(actual, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if a.shape != p.shape:
        raise DimensionError(f"shape mismatch: actual {a.shape} vs predicted {p.shape}")
    ref = float(np.sum(a * a))
    if ref == 0.0:
        raise DegenerateDataError("nmse: actual tensor is all-zero, ratio undefined")
    lin = float(np.sum((a - p) ** 2)) / ref
    if not squared:
        lin = float(np.sqrt(lin))
    return lin, nmse_db(lin)


def nmse_db(linear: float) -> float:
    return float(10.0 * np.log10(max(linear, NMSE_DB_FLOOR)))


def batch_nmse(actuals, predicteds, squared: bool = True) -> tuple[float, float]:
    """Average linear NMSE over samples, then convert to dB."""
    linears = [nmse(a, p, squared)[0] for a, p in zip(actuals, predicteds)]
    if not linears:
        raise DegenerateDataError("batch_nmse: empty batch")
    mean_lin = float(np.mean(linears))
    return mean_lin, nmse_db(mean_lin)


def no_prediction(context: np.ndarray) -> np.ndarray:
    """Channel-aging baseline: the last context step stands in for the next."""
    if context.ndim < 5 or context.shape[-5] < 1:
        raise DimensionError("no_prediction requires a nonempty [l, 2, tx, rx, prb] context")
    return context[..., -1, :, :, :, :]


@dataclass
class PredictionRecord:
    scenario: str
    context_length: int
    target_step: int
    predicted: np.ndarray | None
    actual: np.ndarray | None
    nmse_linear: float | None
    nmse_db: float | None

    def to_row(self, run_id: str, variant: str) -> dict:
        return {
            "run_id": run_id,
            "scenario": self.scenario,
            "variant": variant,
            "context_length": self.context_length,
            "step": self.target_step,
            "nmse_linear": self.nmse_linear,
            "nmse_db": self.nmse_db,
        }


@dataclass
class RolloutResult:
    context_used: np.ndarray
    horizon: int
    records: list[PredictionRecord]
    window_policy: str


@dataclass
class CellStats:
    nmse_linear: float
    nmse_db: float
    n: int


# ---------------------------------------------------------------- predictors


class NoPredictionPredictor:
    variant = "no-prediction"
    out_steps = 1

    def supports(self, length: int) -> bool:
        return length >= 1

    def default_anchor(self) -> int | None:
        return None

    def predict_batch(self, contexts: np.ndarray) -> np.ndarray:
        return contexts[:, -1]


class CheckpointPredictor:
    """Shared wrapper: normalization in, model forward, denormalization out."""

    def __init__(self, checkpoint: Checkpoint):
        self.checkpoint = checkpoint
        self.variant = checkpoint.variant
        self.model = checkpoint.build_model()
        stats = checkpoint.norm_stats
        self._global_scale = (
            float(stats.scale) if stats is not None and stats.mode == "global_std" else None
        )
        self._per_sample = stats is not None and stats.mode == "per_sample_std"

    def default_anchor(self) -> int | None:
        return self.checkpoint.hparams.l_m

    def _scales_for(self, contexts: np.ndarray) -> np.ndarray | float:
        if self._global_scale is not None:
            return self._global_scale
        if self._per_sample:
            # fitted per-sample scales do not transfer; use each context's own std
            flat = contexts.reshape(contexts.shape[0], -1)
            return np.std(flat, axis=1).reshape(-1, *([1] * (contexts.ndim - 1)))
        return 1.0

    def _forward(self, contexts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict_batch(self, contexts: np.ndarray) -> np.ndarray:
        scale = self._scales_for(contexts)
        normed = (contexts / scale).astype(np.float32)
        out = self._forward(normed)
        out_scale = scale[:, 0] if isinstance(scale, np.ndarray) else scale
        return out * out_scale


class CsiLlmPredictor(CheckpointPredictor):
    def supports(self, length: int) -> bool:
        return 1 <= length <= self.checkpoint.backbone_cfg.max_positions

    def _forward(self, contexts: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            return self.model.predict_next(torch.from_numpy(contexts)).numpy()


class FixedStepPredictor(CheckpointPredictor):
    def __init__(self, checkpoint: Checkpoint):
        super().__init__(checkpoint)
        self.context_len = self.model.context_len
        self.out_steps = self.model.out_steps

    def supports(self, length: int) -> bool:
        return length == self.context_len

    def _forward(self, contexts: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            block = self.model.predict_block(torch.from_numpy(contexts)).numpy()
        return block[:, 0] if self.out_steps == 1 else block

    def predict_block_batch(self, contexts: np.ndarray) -> np.ndarray:
        scale = self._scales_for(contexts)
        normed = (contexts / scale).astype(np.float32)
        with torch.no_grad():
            block = self.model.predict_block(torch.from_numpy(normed)).numpy()
        return block * scale  # block shares the contexts' rank, scale broadcasts as-is


def make_predictor(checkpoint: Checkpoint):
    if checkpoint.variant == "csi-llm":
        return CsiLlmPredictor(checkpoint)
    return FixedStepPredictor(checkpoint)


# ------------------------------------------------------------- one-step grid


def one_step_eval(
    predictor,
    test_set: ChannelDataset,
    lengths: list[int],
    anchor: int | None = None,
    squared: bool = True,
    run_id: str = "run",
    collect_records: bool = False,
) -> tuple[dict[int, CellStats | None], list[PredictionRecord]]:
    """One-step grid: one cell per context length, all sharing one target step.

    Unsupported lengths (a fixed-step head asked for a foreign length, or a
    length exceeding the available context) yield absent cells, never a crash.
    """
    if not lengths:
        raise ConfigError("one_step_eval: lengths must be nonempty")
    n_steps = test_set.scenario.n_steps
    if anchor is None:
        anchor = predictor.default_anchor() or max(lengths)
    if not (1 <= anchor <= n_steps - 1):
        raise ConfigError(f"anchor {anchor} outside [1, {n_steps - 1}]")

    stacked = test_set.stack()
    actual = stacked[:, anchor]
    grid: dict[int, CellStats | None] = {}
    records: list[PredictionRecord] = []
    tag = test_set.scenario.tag()
    for length in lengths:
        if length < 1 or length > anchor or not predictor.supports(length):
            grid[length] = None
            continue
        contexts = stacked[:, anchor - length : anchor]
        predicted = predictor.predict_batch(contexts)
        linears = [nmse(actual[i], predicted[i], squared)[0] for i in range(len(test_set))]
        mean_lin = float(np.mean(linears))
        grid[length] = CellStats(mean_lin, nmse_db(mean_lin), len(test_set))
        if collect_records:
            for i, lin in enumerate(linears):
                records.append(
                    PredictionRecord(
                        scenario=tag,
                        context_length=length,
                        target_step=anchor,
                        predicted=predicted[i],
                        actual=actual[i],
                        nmse_linear=lin,
                        nmse_db=nmse_db(lin),
                    )
                )
    return grid, records


# ------------------------------------------------------------------ rollout


def _rollout_predictions(predictor, contexts: np.ndarray, horizon: int) -> np.ndarray:
    """Batched rollout: [N, l, *step] true contexts -> [N, horizon, *step] predictions."""
    n = contexts.shape[0]
    context_len = contexts.shape[1]
    variant = predictor.variant

    if variant == "no-prediction":
        hold = contexts[:, -1:]
        return np.repeat(hold, horizon, axis=1)

    if variant == "csi-llm":
        window = contexts
        preds = []
        for _ in range(horizon):
            step = predictor.predict_batch(window)
            preds.append(step)
            window = np.concatenate([window, step[:, None]], axis=1)
        return np.stack(preds, axis=1)

    if predictor.out_steps == 1:
        if context_len != predictor.context_len:
            raise DimensionError(
                f"{variant} rollout needs context length {predictor.context_len}, got {context_len}"
            )
        window = contexts
        preds = []
        for _ in range(horizon):
            step = predictor.predict_batch(window)
            preds.append(step)
            window = np.concatenate([window[:, 1:], step[:, None]], axis=1)
        return np.stack(preds, axis=1)

    # parallel variant: emit blocks of out_steps, then slide the window onto them
    if context_len != predictor.context_len:
        raise DimensionError(
            f"{variant} rollout needs context length {predictor.context_len}, got {context_len}"
        )
    if horizon % predictor.out_steps != 0:
        raise ConfigError(
            f"{variant} rollout horizon must be a multiple of {predictor.out_steps}, got {horizon}"
        )
    window = contexts
    blocks = []
    for _ in range(horizon // predictor.out_steps):
        block = predictor.predict_block_batch(window)
        blocks.append(block)
        window = block[:, -predictor.context_len :]
    return np.concatenate(blocks, axis=1).reshape(n, horizon, *contexts.shape[2:])


def rollout(
    predictor,
    context: np.ndarray,
    horizon: int,
    ground_truth: np.ndarray | None = None,
    squared: bool = True,
) -> RolloutResult:
    """Autoregressive prediction of `horizon` steps from one true context.

    ground_truth holds the steps after the context; records beyond its length
    carry absent NMSE. Predictions never read ground truth.
    """
    if context.ndim != 5 or context.shape[0] < 1:
        raise DimensionError(f"context must be [l, 2, tx, rx, prb], got {tuple(context.shape)}")
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    preds = _rollout_predictions(predictor, context[None], horizon)[0]
    context_len = context.shape[0]
    records = []
    for k in range(horizon):
        truth = None
        if ground_truth is not None and k < ground_truth.shape[0]:
            truth = ground_truth[k]
        if predictor.variant == "csi-llm":
            effective = context_len + k
        else:
            effective = context_len
        if truth is not None:
            lin, db = nmse(truth, preds[k], squared)
        else:
            lin = db = None
        records.append(
            PredictionRecord(
                scenario="",
                context_length=effective,
                target_step=context_len + k,
                predicted=preds[k],
                actual=truth,
                nmse_linear=lin,
                nmse_db=db,
            )
        )
    policy = "retain_all" if predictor.variant == "csi-llm" else "sliding"
    return RolloutResult(
        context_used=context, horizon=horizon, records=records, window_policy=policy
    )


def rollout_eval(
    predictor,
    test_set: ChannelDataset,
    context_len: int = 4,
    horizon: int = 16,
    squared: bool = True,
    run_id: str = "run",
    collect_records: bool = False,
) -> tuple[list[CellStats | None], list[PredictionRecord]]:
    """Per-step NMSE curve over the rollout horizon, averaged over the test split.

    Default protocol: context = the first 4 steps, horizon 16, ground truth =
    the remaining steps; steps past the trajectory end get absent cells.
    """
    scenario = test_set.scenario
    if context_len < 1 or context_len >= scenario.n_steps:
        raise ConfigError(f"context_len {context_len} outside [1, {scenario.n_steps - 1}]")
    stacked = test_set.stack()
    contexts = stacked[:, :context_len]
    preds = _rollout_predictions(predictor, contexts, horizon)
    tag = scenario.tag()

    per_step: list[CellStats | None] = []
    records: list[PredictionRecord] = []
    for k in range(horizon):
        target = context_len + k
        if target >= scenario.n_steps:
            per_step.append(None)
            continue
        actual = stacked[:, target]
        linears = [nmse(actual[i], preds[i, k], squared)[0] for i in range(len(test_set))]
        mean_lin = float(np.mean(linears))
        per_step.append(CellStats(mean_lin, nmse_db(mean_lin), len(test_set)))
        if collect_records:
            effective = context_len + k if predictor.variant == "csi-llm" else context_len
            for i, lin in enumerate(linears):
                records.append(
                    PredictionRecord(
                        scenario=tag,
                        context_length=effective,
                        target_step=target,
                        predicted=preds[i, k],
                        actual=actual[i],
                        nmse_linear=lin,
                        nmse_db=nmse_db(lin),
                    )
                )
    return per_step, records


# ----------------------------------------------------------------- ablation


@dataclass
class AblationSide:
    label: str
    init_mode: str
    grids: dict[str, dict[int, CellStats | None]]  # scenario tag -> grid
    final_val_loss: float


@dataclass
class AblationReport:
    sides: list[AblationSide]
    rows: list[dict]


def ablation_compare(
    datasets_by_tag: dict[str, tuple[ChannelDataset, ChannelDataset, ChannelDataset]],
    cfg: BackboneConfig,
    hp: HParams,
    lengths: list[int],
    pretrained_source=None,
    init_pair: tuple[str, str] = ("pretrained", "random"),
    anchor: int | None = None,
    run_id: str = "ablate",
    progress: bool = False,
) -> AblationReport:
    """Paired runs differing only in init_mode; identical seeds and hparams.

    datasets_by_tag maps scenario tag to raw (train, val, test) splits; each
    side trains per scenario and reports the one-step grid side by side.
    """
    sides = []
    rows = []
    for idx, init_mode in enumerate(init_pair):
        if init_mode == "pretrained" and pretrained_source is None:
            raise ConfigError("ablation with a pretrained side requires a weight source")
        label = f"{'ab'[idx]}:{init_mode}"
        side_cfg = replace(cfg, init_mode=init_mode)
        grids = {}
        last_val = float("nan")
        for tag, (train_raw, val_raw, test_raw) in datasets_by_tag.items():
            train_n, stats = normalize(train_raw, "global_std")
            val_n = apply_normalization(val_raw, stats)
            ckpt = train_csi_llm(
                (train_n, val_n), side_cfg, hp,
                pretrained_source=pretrained_source if init_mode == "pretrained" else None,
                progress=progress,
            )
            last_val = ckpt.best_val_loss
            grid, _ = one_step_eval(
                make_predictor(ckpt), test_raw, lengths, anchor=anchor, run_id=run_id
            )
            grids[tag] = grid
            for length, cell in grid.items():
                if cell is not None:
                    rows.append(
                        {
                            "run_id": run_id,
                            "scenario": tag,
                            "variant": f"csi-llm@{label}",
                            "context_length": length,
                            "step": anchor if anchor is not None else hp.l_m,
                            "nmse_linear": cell.nmse_linear,
                            "nmse_db": cell.nmse_db,
                        }
                    )
        sides.append(AblationSide(label=label, init_mode=init_mode, grids=grids, final_val_loss=last_val))
    return AblationReport(sides=sides, rows=rows)
