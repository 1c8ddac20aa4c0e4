"""Command-line entry point.

Subcommands: ``run``, ``compare``, ``oracle-check``, ``taskgen``,
``serve-check``. Every flag mirrors a config key; flags override the
config file. Exit codes: 0 ok, 1 run error, 2 config error, 3
acceptance-property violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, RemaskError
from .harness import build_backend, compare, histogram_report, run
from .oracle import certify_lower_bound
from .reviser import select_candidates_margin
from .state import DecodeConfig, new_state
from .taskgen import (
    TaskInstance,
    gen_binding_task,
    gen_bracket_task,
    plant_early_trap,
)

EXIT_OK = 0
EXIT_RUN_ERROR = 1
EXIT_CONFIG_ERROR = 2
EXIT_PROPERTY_VIOLATION = 3


def _load_config(args) -> DecodeConfig:
    doc = {}
    if args.config:
        doc = json.loads(Path(args.config).read_text())
    for key in (
        "N", "L", "E", "m", "k_rm", "tau", "seed",
        "gamma_s", "gamma_e", "unmasker", "reviser", "temperature",
    ):
        val = getattr(args, key, None)
        if val is not None:
            doc[key] = val
    return DecodeConfig.from_dict(doc)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--N", type=int)
    p.add_argument("--L", type=int)
    p.add_argument("--E", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--k-rm", dest="k_rm", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--gamma-s", dest="gamma_s", type=float)
    p.add_argument("--gamma-e", dest="gamma_e", type=float)
    p.add_argument("--unmasker")
    p.add_argument("--reviser")
    p.add_argument("--temperature", type=float)
    p.add_argument(
        "--backend",
        default="tabular",
        help="tabular | ngram | remote:HOST:PORT | remote:stdio:CMD",
    )
    p.add_argument("--out", help="output directory")
    p.add_argument(
        "--trace", action="store_true", help="emit the JSONL trace artifact"
    )


def _cmd_run(args) -> int:
    config = _load_config(args)
    task = TaskInstance.from_json(Path(args.task).read_text())
    report = run(config, task, backend_spec=args.backend)
    out = json.dumps(report.to_dict(), sort_keys=True, indent=2)
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "report.json").write_text(out + "\n")
        if args.trace:
            (outdir / "trace.jsonl").write_text(report.trace.to_jsonl())
    else:
        print(out)
        if args.trace:
            sys.stdout.write(report.trace.to_jsonl())
    return EXIT_OK


def _cmd_compare(args) -> int:
    task_paths = [Path(p) for p in args.tasks]
    tasks = [TaskInstance.from_json(p.read_text()) for p in task_paths]
    configs = {}
    for spec in args.method:
        name, path = spec.split("=", 1)
        configs[name] = DecodeConfig.from_dict(json.loads(Path(path).read_text()))
    seeds = [int(s) for s in args.seeds.split(",")]
    table = compare(
        configs,
        tasks,
        seeds,
        backend_spec=args.backend,
        annotate_budgets=args.annotate_budgets,
    )
    out = json.dumps(table, sort_keys=True, indent=2)
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "compare.json").write_text(out + "\n")
    else:
        print(out)
    return EXIT_OK


def _cmd_oracle_check(args) -> int:
    config = _load_config(args)
    task = TaskInstance.from_json(Path(args.task).read_text())
    backend = build_backend(args.backend, task, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    state = new_state(task.vocab, task.prompt, task.L)
    # Commit a random partial state to certify against.
    n_commit = max(1, task.L - max(1, task.L // 3))
    positions = sorted(rng.choice(task.L, size=n_commit, replace=False).tolist())
    support = task.support()
    ref = support[int(rng.integers(len(support)))]
    state = state.with_tokens(positions, [ref[p] for p in positions])
    candidates = tuple(positions)
    m = min(config.m, len(candidates))
    margins = {p: 0.0 for p in candidates}
    subset = select_candidates_margin(margins, m)
    report = certify_lower_bound(state, subset, candidates, m, backend)
    print(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    return EXIT_OK if report.ok else EXIT_PROPERTY_VIOLATION


def _cmd_taskgen(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.kind == "bracket":
        task = gen_bracket_task(
            args.depth, args.L, rng, types=args.types, seed=args.seed
        )
    elif args.kind == "binding":
        task = gen_binding_task(args.vars, args.L, rng, seed=args.seed)
    elif args.kind == "trap":
        base = gen_binding_task(args.vars, args.L, rng, seed=args.seed)
        task = plant_early_trap(base, rng)
    else:
        raise ConfigError(f"unknown task kind {args.kind!r}")
    text = task.to_json()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def _cmd_serve_check(args) -> int:
    task = TaskInstance.from_json(Path(args.task).read_text())
    backend = build_backend(args.backend, task)
    state = new_state(task.vocab, task.prompt, task.L)
    try:
        backend.distributions(state, [])
    finally:
        backend.close()
    print("ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="remask",
        description="Masked-diffusion decoding with context-robust remasking",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one decoding run")
    _add_config_flags(p_run)
    p_run.add_argument("task", help="task JSON file")
    p_run.set_defaults(func=_cmd_run)

    p_cmp = sub.add_parser("compare", help="compare methods on a task set")
    _add_config_flags(p_cmp)
    p_cmp.add_argument(
        "--method",
        action="append",
        required=True,
        metavar="NAME=CONFIG.json",
    )
    p_cmp.add_argument("--seeds", default="0")
    p_cmp.add_argument("--annotate-budgets", action="store_true")
    p_cmp.add_argument("tasks", nargs="+")
    p_cmp.set_defaults(func=_cmd_compare)

    p_or = sub.add_parser(
        "oracle-check", help="certify the worst-case lower bound on a task"
    )
    _add_config_flags(p_or)
    p_or.add_argument("task")
    p_or.set_defaults(func=_cmd_oracle_check)

    p_tg = sub.add_parser("taskgen", help="generate a task file")
    p_tg.add_argument("kind", choices=["bracket", "binding", "trap"])
    p_tg.add_argument("--L", type=int, default=6)
    p_tg.add_argument("--depth", type=int, default=3)
    p_tg.add_argument("--types", type=int, default=2)
    p_tg.add_argument("--vars", type=int, default=2)
    p_tg.add_argument("--seed", type=int, default=0)
    p_tg.add_argument("--out")
    p_tg.set_defaults(func=_cmd_taskgen)

    p_sc = sub.add_parser("serve-check", help="probe a backend for liveness")
    p_sc.add_argument("--backend", required=True)
    p_sc.add_argument("task")
    p_sc.set_defaults(func=_cmd_serve_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except RemaskError as exc:
        print(f"run error: {exc}", file=sys.stderr)
        return EXIT_RUN_ERROR


if __name__ == "__main__":
    sys.exit(main())
