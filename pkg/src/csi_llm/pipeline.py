"""Run-directory pipeline: gen-data, train, eval, rollout, ablate, plot.

Each run owns `runs/<run_id>/` (root overridable via CSI_LLM_RUNS_DIR) with
`config.resolved`, `data/`, `checkpoints/`, `records.ndjson`, `summary.txt`
and `plots/`. Stages are idempotent: a stage whose primary artifact exists is
skipped unless forced. A lock file keeps concurrent writers out of one run
directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import report as report_mod
from .backbone import write_backbone_source
from .channel_data import (
    apply_normalization,
    generate_synthetic_dataset,
    load_dataset,
    normalize,
    default_split_counts,
    save_dataset,
    split_dataset,
)
from .config import ExperimentConfig, render_config
from .errors import ConfigError, StageDependencyError
from .evaluation import (
    CellStats,
    NoPredictionPredictor,
    ablation_compare,
    make_predictor,
    one_step_eval,
    rollout_eval,
)
from .training import Checkpoint, train_baseline, train_csi_llm

STAGES = ("gen-data", "train", "eval", "rollout", "ablate", "plot")


def runs_root() -> Path:
    return Path(os.environ.get("CSI_LLM_RUNS_DIR", "runs"))


def run_dir(cfg: ExperimentConfig) -> Path:
    return runs_root() / cfg.run_id


def _data_path(cfg: ExperimentConfig, rdir: Path) -> Path:
    if cfg.paths.data:
        return Path(cfg.paths.data)
    return rdir / "data" / "dataset.bin"


def _checkpoint_path(cfg: ExperimentConfig, rdir: Path, variant: str) -> Path:
    if cfg.paths.checkpoint:
        return Path(cfg.paths.checkpoint)
    return rdir / "checkpoints" / f"{variant}.pt"


def _splits(cfg: ExperimentConfig, data_path: Path):
    ds = load_dataset(data_path, cfg.scenario)
    return split_dataset(ds, default_split_counts(len(ds)), seed=cfg.scenario.seed)


def _grid_to_json(grid) -> dict:
    return {
        str(l): None if c is None else {"nmse_linear": c.nmse_linear, "nmse_db": c.nmse_db, "n": c.n}
        for l, c in grid.items()
    }


def _grid_from_json(obj) -> dict:
    return {
        int(l): None if c is None else CellStats(c["nmse_linear"], c["nmse_db"], c["n"])
        for l, c in obj.items()
    }


def _rebuild_summary(rdir: Path) -> None:
    results = report_mod.EvalResults(run_id=rdir.name)
    grids_file = rdir / "grids.json"
    if grids_file.exists():
        stored = json.loads(grids_file.read_text())
        for key, grid in stored.items():
            tag, variant = key.split("|", 1)
            results.grids[(tag, variant)] = _grid_from_json(grid)
    rollout_file = rdir / "rollout.json"
    if rollout_file.exists():
        stored = json.loads(rollout_file.read_text())
        for key, cells in stored.items():
            tag, variant = key.split("|", 1)
            results.rollout_curves[(tag, variant)] = [
                None if c is None else CellStats(c["nmse_linear"], c["nmse_db"], c["n"])
                for c in cells
            ]
    parts = []
    if results.grids:
        parts.append(report_mod.summary_table(results.grids))
    if results.rollout_curves:
        lines = ["Rollout mean NMSE (dB) by step", ""]
        for (tag, variant), cells in sorted(results.rollout_curves.items()):
            vals = ", ".join(f"{c.nmse_db:.2f}" if c is not None else "-" for c in cells)
            lines.append(f"{tag} / {variant}: {vals}")
        parts.append("\n".join(lines) + "\n")
    ablation_file = rdir / "ablation.json"
    if ablation_file.exists():
        stored = json.loads(ablation_file.read_text())
        lines = ["Initialization ablation (one-step NMSE dB)", ""]
        for side in stored["sides"]:
            for tag, grid in sorted(side["grids"].items()):
                cells = ", ".join(
                    f"l={l}: {c['nmse_db']:.4f}" for l, c in sorted(grid.items(), key=lambda kv: int(kv[0]))
                    if c is not None
                )
                lines.append(f"[{side['label']}] {tag}: {cells}")
        parts.append("\n".join(lines) + "\n")
    if parts:
        (rdir / "summary.txt").write_text("\n".join(parts), encoding="utf-8")


class _RunLock:
    def __init__(self, rdir: Path):
        self.path = rdir / "lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(
                f"run directory {self.path.parent} is locked by another pipeline "
                f"(remove {self.path} if stale)"
            )
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def run_pipeline(
    cfg: ExperimentConfig,
    stages: list[str],
    force: bool = False,
    variant: str = "csi-llm",
    init: str | None = None,
    pretrained_source=None,
    log=print,
) -> int:
    """Execute the requested stages in canonical order inside the run directory."""
    for stage in stages:
        if stage not in STAGES:
            raise ConfigError(f"unknown stage {stage!r}; stages are {STAGES}")
    stages = [s for s in STAGES if s in set(stages)]

    rdir = run_dir(cfg)
    (rdir / "data").mkdir(parents=True, exist_ok=True)
    (rdir / "checkpoints").mkdir(exist_ok=True)
    (rdir / "plots").mkdir(exist_ok=True)

    with _RunLock(rdir):
        (rdir / "config.resolved").write_text(render_config(cfg), encoding="utf-8")
        records_path = rdir / "records.ndjson"

        for stage in stages:
            if stage == "gen-data":
                out = _data_path(cfg, rdir)
                if out.exists() and not force:
                    log(f"[skip] gen-data: {out} exists")
                    continue
                log(f"[run ] gen-data: {cfg.n_samples} samples at {cfg.scenario.tag()}")
                ds = generate_synthetic_dataset(cfg.scenario, cfg.n_samples)
                out.parent.mkdir(parents=True, exist_ok=True)
                save_dataset(ds, out)

            elif stage == "train":
                data = _data_path(cfg, rdir)
                if not data.exists():
                    raise StageDependencyError(
                        f"train requires a dataset at {data}; run gen-data or set paths.data"
                    )
                ckpt_path = _checkpoint_path(cfg, rdir, variant)
                if ckpt_path.exists() and not force:
                    log(f"[skip] train: {ckpt_path} exists")
                    continue
                log(f"[run ] train: variant {variant}")
                train_raw, val_raw, _ = _splits(cfg, data)
                train_n, stats = normalize(train_raw, "global_std")
                val_n = apply_normalization(val_raw, stats)
                bcfg = cfg.backbone
                if init is not None:
                    bcfg = type(bcfg)(**{**asdict(bcfg), "init_mode": init})
                if variant == "csi-llm":
                    ckpt = train_csi_llm((train_n, val_n), bcfg, cfg.hparams,
                                         pretrained_source=pretrained_source, progress=True)
                else:
                    ckpt = train_baseline((train_n, val_n), variant, bcfg, cfg.hparams,
                                          pretrained_source=pretrained_source, progress=True)
                ckpt.save(ckpt_path)
                log(f"[done] train: best val loss {ckpt.best_val_loss:.6f} -> {ckpt_path}")

            elif stage == "eval":
                grids_file = rdir / "grids.json"
                if grids_file.exists() and not force:
                    log(f"[skip] eval: {grids_file} exists")
                    continue
                data = _data_path(cfg, rdir)
                if not data.exists():
                    raise StageDependencyError(f"eval requires a dataset at {data}; run gen-data")
                ckpts = sorted((rdir / "checkpoints").glob("*.pt"))
                if cfg.paths.checkpoint:
                    ckpts = [Path(cfg.paths.checkpoint)]
                if not ckpts:
                    raise StageDependencyError("eval requires a checkpoint; run train first")
                _, _, test_raw = _splits(cfg, data)
                anchor = cfg.eval.anchor or cfg.hparams.l_m
                tag = cfg.scenario.tag()
                stored = {}
                rows = []
                grid, recs = one_step_eval(
                    NoPredictionPredictor(), test_raw, cfg.eval.lengths, anchor=anchor,
                    run_id=cfg.run_id, collect_records=True,
                )
                stored[f"{tag}|no-prediction"] = _grid_to_json(grid)
                rows += [r.to_row(cfg.run_id, "no-prediction") for r in recs]
                for path in ckpts:
                    ckpt = Checkpoint.load(path)
                    predictor = make_predictor(ckpt)
                    grid, recs = one_step_eval(
                        predictor, test_raw, cfg.eval.lengths, anchor=anchor,
                        run_id=cfg.run_id, collect_records=True,
                    )
                    stored[f"{tag}|{ckpt.variant}"] = _grid_to_json(grid)
                    rows += [r.to_row(cfg.run_id, ckpt.variant) for r in recs]
                log(f"[run ] eval: {len(rows)} records at anchor {anchor}")
                grids_file.write_text(json.dumps(stored, indent=1))
                report_mod.append_records(rows, records_path)
                _rebuild_summary(rdir)

            elif stage == "rollout":
                rollout_file = rdir / "rollout.json"
                if rollout_file.exists() and not force:
                    log(f"[skip] rollout: {rollout_file} exists")
                    continue
                data = _data_path(cfg, rdir)
                if not data.exists():
                    raise StageDependencyError(f"rollout requires a dataset at {data}; run gen-data")
                ckpts = sorted((rdir / "checkpoints").glob("*.pt"))
                if cfg.paths.checkpoint:
                    ckpts = [Path(cfg.paths.checkpoint)]
                if not ckpts:
                    raise StageDependencyError("rollout requires a checkpoint; run train first")
                _, _, test_raw = _splits(cfg, data)
                tag = cfg.scenario.tag()
                stored = {}
                rows = []
                predictors = [NoPredictionPredictor()] + [
                    make_predictor(Checkpoint.load(p)) for p in ckpts
                ]
                for predictor in predictors:
                    if not predictor.supports(cfg.eval.rollout_context):
                        log(f"[note] rollout: {predictor.variant} cannot take "
                            f"context {cfg.eval.rollout_context}, skipped")
                        continue
                    per_step, recs = rollout_eval(
                        predictor, test_raw, cfg.eval.rollout_context, cfg.eval.horizon,
                        run_id=cfg.run_id, collect_records=True,
                    )
                    stored[f"{tag}|{predictor.variant}"] = [
                        None if c is None else {"nmse_linear": c.nmse_linear, "nmse_db": c.nmse_db, "n": c.n}
                        for c in per_step
                    ]
                    rows += [r.to_row(cfg.run_id, predictor.variant) for r in recs]
                log(f"[run ] rollout: context {cfg.eval.rollout_context}, horizon {cfg.eval.horizon}")
                rollout_file.write_text(json.dumps(stored, indent=1))
                report_mod.append_records(rows, records_path)
                _rebuild_summary(rdir)

            elif stage == "ablate":
                ablation_file = rdir / "ablation.json"
                if ablation_file.exists() and not force:
                    log(f"[skip] ablate: {ablation_file} exists")
                    continue
                data = _data_path(cfg, rdir)
                if not data.exists():
                    raise StageDependencyError(f"ablate requires a dataset at {data}; run gen-data")
                source = pretrained_source
                if source is None:
                    source = rdir / "checkpoints" / "backbone_source.npz"
                    if not source.exists():
                        log("[note] ablate: no pretrained source given; writing a randomly "
                            "initialized source in the published layout")
                        write_backbone_source(source, cfg.backbone, seed=cfg.hparams.seed)
                train_raw, val_raw, test_raw = _splits(cfg, data)
                log("[run ] ablate: pretrained vs random init")
                rep = ablation_compare(
                    {cfg.scenario.tag(): (train_raw, val_raw, test_raw)},
                    cfg.backbone, cfg.hparams, cfg.eval.lengths,
                    pretrained_source=source, anchor=cfg.eval.anchor or cfg.hparams.l_m,
                    run_id=cfg.run_id,
                )
                stored = {
                    "sides": [
                        {
                            "label": side.label,
                            "init_mode": side.init_mode,
                            "final_val_loss": side.final_val_loss,
                            "grids": {t: _grid_to_json(g) for t, g in side.grids.items()},
                        }
                        for side in rep.sides
                    ]
                }
                ablation_file.write_text(json.dumps(stored, indent=1))
                report_mod.append_records(rep.rows, records_path)
                _rebuild_summary(rdir)

            elif stage == "plot":
                plots_dir = rdir / "plots"
                have_any = any(plots_dir.glob("*.png"))
                if have_any and not force:
                    log(f"[skip] plot: {plots_dir} already has figures")
                    continue
                if not (rdir / "rollout.json").exists() and not (rdir / "ablation.json").exists() \
                        and not records_path.exists():
                    raise StageDependencyError("plot requires records; run eval/rollout/ablate first")
                made = plot_run(rdir)
                log(f"[run ] plot: {len(made)} figure(s)")
    return 0


def plot_run(rdir: Path) -> list[Path]:
    """Regenerate figures from a run directory's stored results."""
    import matplotlib

    matplotlib.use("Agg")
    results = report_mod.EvalResults(run_id=rdir.name)
    rollout_file = rdir / "rollout.json"
    if rollout_file.exists():
        stored = json.loads(rollout_file.read_text())
        for key, cells in stored.items():
            tag, variant = key.split("|", 1)
            results.rollout_curves[(tag, variant)] = [
                None if c is None else CellStats(c["nmse_linear"], c["nmse_db"], c["n"]) for c in cells
            ]
    ablation_file = rdir / "ablation.json"
    sides = []
    if ablation_file.exists():
        from .evaluation import AblationReport, AblationSide

        stored = json.loads(ablation_file.read_text())
        for side in stored["sides"]:
            sides.append(
                AblationSide(
                    label=side["label"],
                    init_mode=side["init_mode"],
                    grids={t: _grid_from_json(g) for t, g in side["grids"].items()},
                    final_val_loss=side["final_val_loss"],
                )
            )
        results.ablation = AblationReport(sides=sides, rows=[])
    made: list[Path] = []
    plots_dir = rdir / "plots"
    plots_dir.mkdir(exist_ok=True)
    if results.rollout_curves:
        made += report_mod._plot_rollout(results.rollout_curves, plots_dir)
    if results.ablation is not None and sides:
        made += report_mod._plot_ablation(results.ablation, plots_dir)
    if not made and (rdir / "records.ndjson").exists():
        made += plot_from_records(rdir / "records.ndjson", plots_dir)
    return made


def plot_from_records(records_path, out_dir) -> list[Path]:
    """Aggregate raw ndjson records into per-step curves and plot them."""
    rows = report_mod.load_records(records_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups: dict[tuple[str, str], dict[int, list[float]]] = {}
    for row in rows:
        if row.get("nmse_linear") is None:
            continue
        key = (row["scenario"], row["variant"])
        groups.setdefault(key, {}).setdefault(int(row["step"]), []).append(float(row["nmse_linear"]))
    curves = {}
    for key, by_step in groups.items():
        steps = sorted(by_step)
        cells = []
        for s in steps:
            lin = float(np.mean(by_step[s]))
            cells.append(CellStats(lin, float(10 * np.log10(max(lin, 1e-12))), len(by_step[s])))
        curves[key] = cells
    if not curves:
        raise StageDependencyError(f"no usable records in {records_path}")
    return report_mod._plot_rollout(curves, out_dir)
