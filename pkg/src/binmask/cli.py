"""Command-line entry point.

Subcommands: sparsify, select-features, regularize-compare quote a JSON
experiment config; gradcheck verifies backprop against finite differences
and needs no config. Exit codes: 0 success, 1 gradcheck failure, 2 bad
config or data, 3 partial results (some trials failed).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, DataError
from .experiment import load_config, run_experiment, run_gradcheck

_TASK_BY_COMMAND = {
    "sparsify": "sparsify",
    "select-features": "select_features",
    "regularize-compare": "regularize_compare",
}


def _add_common(parser, config_required=True):
    parser.add_argument("--config", required=config_required, help="experiment config (JSON)")
    parser.add_argument("--jobs", type=int, default=1, help="parallel trial workers")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="override the output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="binmask",
        description="Binary-mask L0 regularization: sparse training, feature selection, regularizer comparison.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command in _TASK_BY_COMMAND:
        _add_common(sub.add_parser(command, help=f"run a {command} experiment"))
    grad = sub.add_parser("gradcheck", help="check backprop against finite differences")
    _add_common(grad, config_required=False)
    return parser


def _run_task(args) -> int:
    cfg = load_config(args.config)
    expected = _TASK_BY_COMMAND[args.command]
    if cfg["task"] != expected:
        raise ConfigError(f"config.task: is '{cfg['task']}' but the subcommand expects '{expected}'")
    summary = run_experiment(cfg, out=args.out, jobs=args.jobs, seed=args.seed)
    if summary.get("partial"):
        print("warning: some trials failed; summary marked partial", file=sys.stderr)
        return 3
    return 0


def _run_gradcheck(args) -> int:
    options = {}
    if args.config:
        try:
            options = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read gradcheck config: {exc}") from exc
        if not isinstance(options, dict):
            raise ConfigError("gradcheck config: expected a JSON object")
    allowed = {"nets", "batch", "step", "rtol", "atol"}
    unknown = set(options) - allowed
    if unknown:
        raise ConfigError(f"gradcheck config: unknown keys {sorted(unknown)}")
    passed, rows = run_gradcheck(
        seed=args.seed if args.seed is not None else 0,
        out=args.out or "gradcheck_out",
        **options,
    )
    worst = max(r["max_rel_err"] for r in rows)
    print(f"gradcheck: {sum(r['ok'] for r in rows)}/{len(rows)} networks passed, worst rel err {worst:.3g}")
    return 0 if passed else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gradcheck":
            return _run_gradcheck(args)
        return _run_task(args)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
