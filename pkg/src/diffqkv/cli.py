"""`diffqkv` command line harness.

Subcommands:
    verify     run a property suite (equivalence | gradients | cache | cost | all)
    cost       analytic cost-model sweep over a prefix/output grid -> CSV
    bench      wall-clock micro-benchmarks over a grid -> CSV
    train-toy  train the toy causal LM on a synthetic task
    decode     greedy decoding from a saved checkpoint

Exit codes: 0 success, 1 property failure, 2 usage error.  The environment
variable DIFFQKV_SEED overrides the default seed (42) wherever --seed is not
given.  Config arguments accept a preset name or a config-file path.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .bench import augq_prefix_independence, emit_csv, run_bench, traffic_ratio
from .config import (
    ModelConfig,
    PRESETS,
    attention_of,
    resolve_config,
    toy_preset,
)
from .costmodel import (
    CostGrid,
    CostModelParams,
    LONG_CONTEXT_GRID,
    SCALED_GRID,
    cost_table_csv,
    format_rate,
    reduction_rate,
    total_cost_curve,
)
from .errors import DiffQKVError, UnknownSuiteError, UsageError
from .model import (
    copy_task_batch,
    decode,
    init_model,
    load_checkpoint,
    random_token_batch,
    save_checkpoint,
    train_step,
)
from .verify import run_verify

DEFAULT_SEED = 42


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    return int(os.environ.get("DIFFQKV_SEED", DEFAULT_SEED))


def _parse_grid(spec: str) -> CostGrid:
    if spec == "long":
        return LONG_CONTEXT_GRID
    if spec == "scaled":
        return SCALED_GRID
    try:
        prefix_part, output_part = spec.split(":")
        prefixes = tuple(int(v) for v in prefix_part.split(","))
        outputs = tuple(int(v) for v in output_part.split(","))
        return CostGrid(prefix_lengths=prefixes, output_lengths=outputs)
    except ValueError as exc:
        raise UsageError(
            f"bad grid spec {spec!r}; use 'scaled', 'long' or 'P1,P2,..:N1,N2,..'"
        ) from exc


def _cmd_verify(args) -> int:
    report = run_verify(args.suite, instances=args.instances)
    print(report.format())
    return 0 if report.ok else 1


def _cmd_cost(args) -> int:
    std = attention_of(resolve_config(args.std))
    sigma = attention_of(resolve_config(args.sigma))
    grid = _parse_grid(args.grid)
    params = CostModelParams(
        alpha=args.alpha,
        beta=args.beta,
        attn_alpha=args.attn_alpha,
        augq_cost_per_token=args.augq_cost,
    )
    rows = total_cost_curve(std, sigma, grid, params)
    emit_csv(cost_table_csv(rows), args.out)
    rate = reduction_rate(std, sigma)
    print(f"asymptotic reduction rate: {format_rate(rate)}")
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _cmd_bench(args) -> int:
    std = attention_of(resolve_config(args.std))
    sigma = attention_of(resolve_config(args.sigma))
    grid = _parse_grid(args.grid)
    report = run_bench(std, sigma, grid, reps=args.reps, seed=_seed(args))
    emit_csv(report, args.out)
    ratios = traffic_ratio(report, "kv_cache")
    spread, allowance, augq_ok = augq_prefix_independence(report)
    print(f"kv_cache element-traffic ratio sigma/std: {ratios[0]:.6f}" if ratios else "no ratio")
    print(
        f"augmented-Q spread across grid: {spread * 1e3:.3f} ms "
        f"(allowance {allowance * 1e3:.3f} ms) -> {'ok' if augq_ok else 'PREFIX-DEPENDENT'}"
    )
    print(f"wrote {len(report.rows)} rows to {args.out}")
    return 0 if augq_ok else 1


def _cmd_train_toy(args) -> int:
    seed = _seed(args)
    if args.config is None:
        cfg = toy_preset("sigma-1.5b")
    elif args.config in PRESETS:
        cfg = toy_preset(args.config)  # full presets are not desk-trainable
    else:
        cfg = resolve_config(args.config)
        if not isinstance(cfg, ModelConfig):
            raise UsageError("train-toy needs a config file with a model block")
    model = init_model(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    make_batch = copy_task_batch if args.task == "copy" else random_token_batch

    first_loss = None
    loss = float("nan")
    for step in range(1, args.steps + 1):
        batch = make_batch(rng, args.batch, args.seq_len, cfg.vocab_size)
        loss = train_step(model, batch, args.lr)
        if first_loss is None:
            first_loss = loss
        if step == 1 or step % args.log_every == 0 or step == args.steps:
            print(f"step {step:5d}  loss {loss:.4f}")
    print(f"initial loss {first_loss:.4f}, final loss {loss:.4f}")
    if args.out:
        save_checkpoint(model, args.out)
        print(f"checkpoint written to {args.out}")
    return 0


def _cmd_decode(args) -> int:
    model = load_checkpoint(args.checkpoint)
    try:
        prompt = [int(tok) for tok in args.prompt.replace(",", " ").split()]
    except ValueError as exc:
        raise UsageError(f"prompt must be token ids, got {args.prompt!r}") from exc
    if not prompt:
        raise UsageError("prompt must contain at least one token id")
    tokens = decode(model, prompt, args.n)
    print(" ".join(str(t) for t in tokens))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffqkv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run a property suite")
    p.add_argument("--suite", required=True)
    p.add_argument("--instances", type=int, default=200)
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser("cost", help="analytic cost sweep -> CSV")
    p.add_argument("--std", default="gqa-16")
    p.add_argument("--sigma", default="sigma-1.5b")
    p.add_argument("--grid", default="long")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--attn-alpha", type=float, default=1.0)
    p.add_argument("--augq-cost", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_cost)

    p = sub.add_parser("bench", help="wall-clock micro-benchmarks -> CSV")
    p.add_argument("--std", default="gqa-16")
    p.add_argument("--sigma", default="sigma-1.5b")
    p.add_argument("--grid", default="scaled")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("train-toy", help="train the toy LM on a synthetic task")
    p.add_argument("--config", default=None, help="config file or preset name (toy-scaled)")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--lr", type=float, default=0.2)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--seq-len", type=int, default=32)
    p.add_argument("--task", choices=("copy", "random"), default="copy")
    p.add_argument("--log-every", type=int, default=20)
    p.add_argument("--out", default=None, help="write a checkpoint here")
    p.set_defaults(fn=_cmd_train_toy)

    p = sub.add_parser("decode", help="greedy decoding from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prompt", required=True, help="token ids, e.g. '3 1 4 1'")
    p.add_argument("--n", type=int, required=True)
    p.set_defaults(fn=_cmd_decode)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (UnknownSuiteError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DiffQKVError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
