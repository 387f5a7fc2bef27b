"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 stage-dependency error,
4 numeric failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .channel_data import (
    generate_synthetic_dataset,
    load_dataset,
    save_dataset,
)
from .config import parse_config, render_config
from .errors import ConfigError, NumericError, StageDependencyError
from .evaluation import (
    NoPredictionPredictor,
    make_predictor,
    one_step_eval,
    rollout_eval,
)
from .pipeline import STAGES, plot_from_records, run_pipeline
from .report import append_records, summary_table
from .training import Checkpoint


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="config file (key = value lines)")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csi-llm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    _add_config_args(p)
    p.add_argument("--speed", default=None, help="speed in km/h, or comma list for a mixture")
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a predictor")
    _add_config_args(p)
    p.add_argument("--init", choices=("pretrained", "random"), default=None)
    p.add_argument("--variant", choices=("csi-llm", "fixed4", "fixed8", "fixed16", "parallel4"),
                   default="csi-llm")
    p.add_argument("--pretrained-source", default=None, help="npz weight source for --init pretrained")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("eval", help="one-step grid for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--lengths", default="2,4,8,16")
    p.add_argument("--anchor", type=int, default=None)
    p.add_argument("--nmse-literal", action="store_true",
                   help="audit switch: unsquared-norm NMSE ratio")
    p.add_argument("--out", default=None, help="append records to this ndjson file")
    p.add_argument("--run-id", default="cli")

    p = sub.add_parser("rollout", help="continuous autoregressive prediction")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--context", type=int, default=4)
    p.add_argument("--horizon", type=int, default=16)
    p.add_argument("--out", default=None)
    p.add_argument("--run-id", default="cli")

    p = sub.add_parser("ablate", help="pretrained-vs-random paired training")
    _add_config_args(p)
    p.add_argument("--pretrained-source", default=None)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("plot", help="plot curves from a records file")
    p.add_argument("--from", dest="records", required=True)
    p.add_argument("--out", default="plots")

    p = sub.add_parser("run", help="run pipeline stages into runs/<run_id>/")
    _add_config_args(p)
    p.add_argument("--stages", default="gen-data,train,eval",
                   help=f"comma list from {','.join(STAGES)}")
    p.add_argument("--variant", default="csi-llm")
    p.add_argument("--init", choices=("pretrained", "random"), default=None)
    p.add_argument("--pretrained-source", default=None)
    p.add_argument("--force", action="store_true")
    return parser


def _cmd_gen_data(args) -> int:
    overrides = list(args.overrides)
    if args.speed is not None:
        overrides.append(f"scenario.speed_kmh={args.speed}")
    if args.seed is not None:
        overrides.append(f"scenario.seed={args.seed}")
    if args.samples is not None:
        overrides.append(f"n_samples={args.samples}")
    cfg = parse_config(args.config, overrides)
    ds = generate_synthetic_dataset(cfg.scenario, cfg.n_samples)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    print(f"wrote {len(ds)} samples ({cfg.scenario.tag()}) to {out}")
    return 0


def _cmd_train(args) -> int:
    cfg = parse_config(args.config, args.overrides)
    return run_pipeline(cfg, ["gen-data", "train"] if not cfg.paths.data else ["train"],
                        force=args.force, variant=args.variant, init=args.init,
                        pretrained_source=args.pretrained_source)


def _cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    ds = load_dataset(args.data, ckpt.scenario)
    lengths = [int(v) for v in args.lengths.split(",") if v.strip()]
    squared = not args.nmse_literal
    anchor = args.anchor
    rows = []
    grids = {}
    tag = ckpt.scenario.tag()
    for name, predictor in (("no-prediction", NoPredictionPredictor()),
                            (ckpt.variant, make_predictor(ckpt))):
        grid, recs = one_step_eval(predictor, ds, lengths, anchor=anchor, squared=squared,
                                   run_id=args.run_id, collect_records=True)
        grids[(tag, name)] = grid
        rows += [r.to_row(args.run_id, name) for r in recs]
    print(summary_table(grids))
    if args.out:
        append_records(rows, args.out)
        print(f"appended {len(rows)} records to {args.out}")
    return 0


def _cmd_rollout(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    ds = load_dataset(args.data, ckpt.scenario)
    predictor = make_predictor(ckpt)
    if not predictor.supports(args.context):
        raise ConfigError(
            f"checkpoint variant {ckpt.variant} cannot take context length {args.context}"
        )
    per_step, recs = rollout_eval(predictor, ds, args.context, args.horizon,
                                  run_id=args.run_id, collect_records=True)
    print(f"rollout ({ckpt.variant}), context {args.context}, horizon {args.horizon}:")
    for k, cell in enumerate(per_step, start=1):
        print(f"  step {k:>2}: " + (f"{cell.nmse_db:8.3f} dB" if cell else "   (no ground truth)"))
    if args.out:
        rows = [r.to_row(args.run_id, ckpt.variant) for r in recs]
        append_records(rows, args.out)
        print(f"appended {len(rows)} records to {args.out}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = parse_config(args.config, args.overrides)
    return run_pipeline(cfg, ["gen-data", "ablate"], force=args.force,
                        pretrained_source=args.pretrained_source)


def _cmd_plot(args) -> int:
    made = plot_from_records(args.records, args.out)
    for path in made:
        print(f"wrote {path}")
    return 0


def _cmd_run(args) -> int:
    cfg = parse_config(args.config, args.overrides)
    stages = [s.strip() for s in args.stages.split(",") if s.strip()]
    return run_pipeline(cfg, stages, force=args.force, variant=args.variant,
                        init=args.init, pretrained_source=args.pretrained_source)


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "rollout": _cmd_rollout,
    "ablate": _cmd_ablate,
    "plot": _cmd_plot,
    "run": _cmd_run,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except StageDependencyError as e:
        print(f"dependency error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
