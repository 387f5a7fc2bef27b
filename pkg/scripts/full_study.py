#!/usr/bin/env python3
"""End-to-end study across the four speed scenarios.

For each scenario (30/60/120 km/h and the mixture): generate data, train the
variable-length model plus the requested fixed-step baselines, evaluate the
one-step grid at lengths 2/4/8/16, run the 16-step rollout, and emit one
combined report (summary table, records, figures).

Desk-scale by default (ci profile geometry). Pass --profile full for the
full-size configuration if you have the compute and a pretrained source.
"""

import argparse
import sys
import time
from pathlib import Path

REPO = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(REPO / "src"))

from csi_llm.channel_data import (
    apply_normalization,
    generate_synthetic_dataset,
    normalize,
    default_split_counts,
    split_dataset,
)
from csi_llm.config import ci_config, default_config, parse_config
from csi_llm.evaluation import (
    NoPredictionPredictor,
    make_predictor,
    one_step_eval,
    rollout_eval,
)
from csi_llm.report import EvalResults, emit_report
from csi_llm.training import train_baseline, train_csi_llm

SCENARIO_SPEEDS = {"30kmh": "30", "60kmh": "60", "120kmh": "120", "mix": "30,60,120"}


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--profile", choices=("ci", "full"), default="ci")
    ap.add_argument("--samples", type=int, default=2000)
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--baselines", default="fixed4,parallel4",
                    help="comma list from fixed4,fixed8,fixed16,parallel4 (or empty)")
    ap.add_argument("--scenarios", default="30kmh,60kmh,120kmh,mix")
    ap.add_argument("--out", default="runs/full-study")
    args = ap.parse_args()

    base = ci_config() if args.profile == "ci" else default_config()
    baselines = [b for b in args.baselines.split(",") if b]
    results = EvalResults(run_id=f"study-{args.profile}")

    for tag in args.scenarios.split(","):
        speed = SCENARIO_SPEEDS[tag]
        cfg = parse_config(None, [
            f"scenario.speed_kmh={speed}",
            f"scenario.tti_s={base.scenario.tti_s}",
            f"scenario.n_tx={base.scenario.n_tx}",
            f"scenario.n_rx={base.scenario.n_rx}",
            f"scenario.n_prb={base.scenario.n_prb}",
            f"scenario.seed={base.scenario.seed}",
            f"backbone.n_layers={base.backbone.n_layers}",
            f"backbone.model_dim={base.backbone.model_dim}",
            f"backbone.n_heads={base.backbone.n_heads}",
            f"backbone.max_positions={base.backbone.max_positions}",
            f"backbone.proj_hidden={base.backbone.proj_hidden}",
            f"hparams.batch_size={base.hparams.batch_size}",
            f"hparams.max_epochs={args.epochs}",
            f"hparams.seed={base.hparams.seed}",
        ])
        print(f"=== scenario {tag}: generating {args.samples} samples")
        ds = generate_synthetic_dataset(cfg.scenario, args.samples)
        train_raw, val_raw, test_raw = split_dataset(ds, default_split_counts(len(ds)))
        train_n, stats = normalize(train_raw, "global_std")
        val_n = apply_normalization(val_raw, stats)

        predictors = {"no-prediction": NoPredictionPredictor()}
        t0 = time.time()
        ckpt = train_csi_llm((train_n, val_n), cfg.backbone, cfg.hparams)
        print(f"    csi-llm trained in {time.time() - t0:.0f}s "
              f"(best val {ckpt.best_val_loss:.4f})")
        predictors["csi-llm"] = make_predictor(ckpt)
        for variant in baselines:
            t0 = time.time()
            bckpt = train_baseline((train_n, val_n), variant, cfg.backbone, cfg.hparams)
            print(f"    {variant} trained in {time.time() - t0:.0f}s "
                  f"(best val {bckpt.best_val_loss:.6f})")
            predictors[variant] = make_predictor(bckpt)

        anchor = cfg.hparams.l_m
        for name, predictor in predictors.items():
            grid, recs = one_step_eval(
                predictor, test_raw, cfg.eval.lengths, anchor=anchor,
                run_id=results.run_id, collect_records=True,
            )
            results.grids[(tag, name)] = grid
            results.records += [r.to_row(results.run_id, name) for r in recs]
            if predictor.supports(cfg.eval.rollout_context) or name == "no-prediction":
                per_step, rrecs = rollout_eval(
                    predictor, test_raw, cfg.eval.rollout_context, cfg.eval.horizon,
                    run_id=results.run_id, collect_records=True,
                )
                results.rollout_curves[(tag, name)] = per_step
                results.records += [r.to_row(results.run_id, name) for r in rrecs]

    written = emit_report(results, args.out)
    print(f"\nreport written under {args.out}:")
    for kind, paths in written.items():
        for p in paths:
            print(f"  [{kind}] {p}")
    print()
    print((Path(args.out) / "summary.txt").read_text())
    return 0


if __name__ == "__main__":
    sys.exit(main())
