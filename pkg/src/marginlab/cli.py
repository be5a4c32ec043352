"""Command-line interface.

Subcommands: gen-data, train, eval, embed, compare. Exit code 0 on success;
failures print a single line `error:<category>: <message>` to stderr and
exit 1 (argparse usage errors exit 2).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .configio import parse_experiment_config, parse_gen_spec
from .data import gen_synthetic, load_csv, load_idx, save_csv
from .errors import ConfigError, MarginLabError
from .harness import (
    ComparisonResult,
    compare_runs,
    config_hash,
    evaluate,
    export_embeddings,
    load_checkpoint,
    run_summary,
    save_checkpoint,
    train_run,
    write_metrics_csv,
)


def _cmd_gen_data(args) -> int:
    spec = parse_gen_spec(args.spec)
    ds = gen_synthetic(spec)
    save_csv(ds, args.out)
    print(f"wrote {args.out}: {ds.n} rows, {ds.in_dim} features, {ds.k} classes")
    return 0


def _load_eval_data(paths):
    if len(paths) == 1:
        return load_csv(paths[0])
    if len(paths) == 2:
        return load_idx(paths[0], paths[1])
    raise ConfigError("--data takes one CSV path or two IDX paths (images labels)")


def _cmd_train(args) -> int:
    exp = parse_experiment_config(args.config)
    train_ds, val_ds = exp.data.build()
    cfg = exp.train
    if args.resume:
        model, ckpt_cfg, state = load_checkpoint(args.resume)
        if config_hash(ckpt_cfg) != config_hash(cfg):
            raise ConfigError(
                "checkpoint config does not match --config; refusing to resume"
            )
        result = train_run(cfg, train_ds, val_ds, model=model, state=state)
    else:
        result = train_run(cfg, train_ds, val_ds)

    os.makedirs(args.out_dir, exist_ok=True)
    metrics_path = os.path.join(args.out_dir, "metrics.csv")
    ckpt_path = os.path.join(args.out_dir, "checkpoint.bin")
    write_metrics_csv(result.metrics, metrics_path)
    save_checkpoint(ckpt_path, result.model, cfg, result.state)
    summary = run_summary(cfg, result.metrics) if result.metrics else None
    with open(os.path.join(args.out_dir, "summary.json"), "w", encoding="ascii") as f:
        json.dump(
            {
                "run_id": summary.run_id if summary else None,
                "final_val_accuracy": summary.final_val_accuracy if summary else None,
                "steps_to_target": summary.steps_to_target if summary else None,
                "config_hash": config_hash(cfg),
                "final_step": result.state.step,
            },
            f,
            sort_keys=True,
        )
        f.write("\n")
    print(
        f"trained to step {result.state.step}; wrote {metrics_path}, {ckpt_path}"
    )
    return 0


def _cmd_eval(args) -> int:
    model, _cfg, _state = load_checkpoint(args.checkpoint)
    ds = _load_eval_data(args.data)
    error, confusion = evaluate(model, ds)
    print(
        json.dumps(
            {"error": error, "n": ds.n, "confusion": confusion.tolist()},
            sort_keys=True,
        )
    )
    return 0


def _cmd_embed(args) -> int:
    model, _cfg, _state = load_checkpoint(args.checkpoint)
    ds = _load_eval_data(args.data)
    export_embeddings(model, ds, args.out)
    print(f"wrote {args.out}: {ds.n} rows")
    return 0


def _write_comparison_csv(result: ComparisonResult, path) -> None:
    header = (
        "seed,run_id_a,final_val_accuracy_a,steps_to_target_a,min_margin_a,"
        "run_id_b,final_val_accuracy_b,steps_to_target_b,min_margin_b"
    )
    with open(path, "w", encoding="ascii", newline="") as f:
        f.write(header + "\n")
        for o in result.outcomes:
            sa, sb = o.summary_a, o.summary_b
            f.write(
                ",".join(
                    [
                        str(o.seed),
                        sa.run_id,
                        repr(sa.final_val_accuracy),
                        "" if sa.steps_to_target is None else str(sa.steps_to_target),
                        repr(o.min_margin_a),
                        sb.run_id,
                        repr(sb.final_val_accuracy),
                        "" if sb.steps_to_target is None else str(sb.steps_to_target),
                        repr(o.min_margin_b),
                    ]
                )
                + "\n"
            )
        for name, wins in (
            ("accuracy_wins", result.accuracy_wins),
            ("margin_wins", result.margin_wins),
            ("steps_wins", result.steps_wins),
        ):
            f.write(f"# {name},{wins[0]},{wins[1]},{wins[2]}\n")


def _cmd_compare(args) -> int:
    exp_a = parse_experiment_config(args.config_a)
    exp_b = parse_experiment_config(args.config_b)
    if exp_a.data != exp_b.data:
        raise ConfigError("compare requires identical [data] sections")
    result = compare_runs(
        exp_a.train,
        exp_b.train,
        lambda s: exp_a.data.build(seed_override=s),
        args.seeds,
        base_seed=args.base_seed,
    )
    _write_comparison_csv(result, args.out)
    print(
        json.dumps(
            {
                "accuracy_wins": list(result.accuracy_wins),
                "margin_wins": list(result.margin_wins),
                "steps_wins": list(result.steps_wins),
            },
            sort_keys=True,
        )
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="marginlab",
        description="Pairwise margin regularization and MMS batch selection trainer",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset CSV")
    g.add_argument("--spec", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=_cmd_gen_data)

    t = sub.add_parser("train", help="run a training config")
    t.add_argument("--config", required=True)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--resume", default=None, help="checkpoint to continue from")
    t.set_defaults(fn=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", nargs="+", required=True)
    e.set_defaults(fn=_cmd_eval)

    m = sub.add_parser("embed", help="export penultimate-layer embeddings")
    m.add_argument("--checkpoint", required=True)
    m.add_argument("--data", nargs="+", required=True)
    m.add_argument("--out", required=True)
    m.set_defaults(fn=_cmd_embed)

    c = sub.add_parser("compare", help="paired-seed comparison of two configs")
    c.add_argument("--config-a", required=True)
    c.add_argument("--config-b", required=True)
    c.add_argument("--seeds", type=int, required=True)
    c.add_argument("--base-seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c.set_defaults(fn=_cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except MarginLabError as e:
        print(f"error:{e.category}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error:io: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
