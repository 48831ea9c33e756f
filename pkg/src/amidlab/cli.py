"""Command-line driver: ``amidlab {generate,train,evaluate,verify,experiment,report}``.

Every subcommand reads ``--config`` (optional, defaults otherwise) and writes
under ``--out`` using a fixed layout::

    scenario/     ground-truth matrices, sequences and the interaction log
    checkpoints/  model checkpoints and training histories
    metrics/      per-seed metrics and mean/std summaries
    theory/       verification report and failing instances

Exit codes: 0 success, 1 usage or config error, 2 failed check, 3 divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import theory
from .config import ExperimentConfig, parse_config
from .datagen import (
    ConfigError,
    CsvParseError,
    dump_scenario,
    generate_scenario,
    load_interactions_csv,
    prepare_dataset,
    write_interactions_csv,
)
from .dre import DivergenceError, load_checkpoint, save_checkpoint, train_alternating
from .evaluation import (
    aggregate_runs,
    eval_pool,
    evaluate_domain,
    read_summary_csv,
    write_metrics_csv,
    write_summary_csv,
)
from .model import AmidModel

EXIT_OK, EXIT_USAGE, EXIT_CHECK, EXIT_DIVERGED = 0, 1, 2, 3
EVENTS_FILE = "interactions.csv"

log = logging.getLogger("amidlab")


class UsageError(Exception):
    """Missing inputs or inconsistent flags."""


# ---------------------------------------------------------------------------
# Pipeline pieces
# ---------------------------------------------------------------------------
def variant_name(objective: str, mim: bool) -> str:
    return f"{objective}_{'mim' if mim else 'nomim'}"


def _with_variant(cfg: ExperimentConfig, objective: str, mim: bool) -> ExperimentConfig:
    cfg.train.objective = objective
    cfg.model.use_mim = mim
    return cfg


def generate(cfg: ExperimentConfig, out: Path, seed: int) -> Path:
    scn = generate_scenario(cfg.data.gen, seed)
    sdir = out / "scenario"
    dump_scenario(scn, sdir)
    write_interactions_csv(scn.to_events(), sdir / EVENTS_FILE)
    return sdir


def load_data(cfg: ExperimentConfig, out: Path, seed: int):
    path = out / "scenario" / EVENTS_FILE
    if not path.exists():
        raise UsageError(f"missing {path}; run 'generate' first")
    events = load_interactions_csv(path)
    n = cfg.data.gen.items_per_domain
    return prepare_dataset(events, cfg.model.T, cfg.data.k_u, seed, [n] * cfg.data.gen.num_domains)


def build_model(cfg: ExperimentConfig, data, seed: int) -> AmidModel:
    return AmidModel(data.num_items, cfg.model, seed)


def train(cfg: ExperimentConfig, data, seed: int, ckpt_dir: Path) -> AmidModel:
    model = build_model(cfg, data, seed)
    model, history = train_alternating(data, model, cfg.train, seed)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, ckpt_dir / f"model_seed{seed}.ckpt")
    history.to_csv(ckpt_dir / f"history_seed{seed}.csv")
    return model


def evaluate(cfg: ExperimentConfig, model: AmidModel, data, seed: int) -> list[tuple]:
    """Metric rows ``(seed, domain, metric, k, value)`` for every domain."""
    pool = eval_pool(data, cfg.eval.pool_size, seed) if cfg.model.use_mim else None
    rows = []
    for z in range(data.num_domains):
        metrics, _ = evaluate_domain(model, data, z, cfg.eval.num_negatives, cfg.eval.k, seed, pool)
        for kind in ("hr", "ndcg"):
            rows.append((seed, z, kind, cfg.eval.k, metrics[kind]))
    return rows


def run_experiment(cfg: ExperimentConfig, out: Path) -> dict[str, list[tuple]]:
    """Full pipeline for every (objective, mim) variant and seed."""
    results: dict[str, list[tuple]] = {}
    for objective, mim in cfg.variants():
        name = variant_name(objective, mim)
        _with_variant(cfg, objective, mim)
        rows = []
        for seed in cfg.run.seeds:
            seed_out = out / "runs" / f"seed{seed}"
            if not (seed_out / "scenario" / EVENTS_FILE).exists():
                generate(cfg, seed_out, seed)
            data = load_data(cfg, seed_out, seed)
            model = train(cfg, data, seed, out / "checkpoints" / name)
            rows.extend(evaluate(cfg, model, data, seed))
            log.info("%s seed %d done", name, seed)
        mdir = out / "metrics" / name
        mdir.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(rows, mdir / "metrics.csv")
        per_seed: dict = {}
        for _, z, metric, k, value in rows:
            per_seed.setdefault((z, metric, k), []).append(value)
        write_summary_csv(aggregate_runs(per_seed), mdir / "summary.csv")
        results[name] = rows
    return results


def render_report(out: Path) -> str:
    summaries = sorted((out / "metrics").glob("*/summary.csv"))
    if not summaries:
        raise UsageError(f"no summary.csv under {out / 'metrics'}; run 'experiment' first")
    lines = [f"{'variant':<14} {'domain':>6} {'metric':>8} {'mean':>8} {'std':>8} {'seeds':>5}"]
    for path in summaries:
        for r in read_summary_csv(path):
            metric = f"{r['metric']}@{r['k']}"
            lines.append(
                f"{path.parent.name:<14} {r['domain']:>6} {metric:>8} {r['mean']:>8.4f} {r['std']:>8.4f} {r['n_seeds']:>5}"
            )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------
def cmd_generate(args, cfg) -> int:
    sdir = generate(cfg, args.out, args.seed)
    print(f"wrote scenario to {sdir}")
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    data = load_data(cfg, args.out, args.seed)
    train(cfg, data, args.seed, args.out / "checkpoints")
    print(f"wrote {args.out / 'checkpoints' / f'model_seed{args.seed}.ckpt'}")
    return EXIT_OK


def cmd_evaluate(args, cfg) -> int:
    data = load_data(cfg, args.out, args.seed)
    path = args.out / "checkpoints" / f"model_seed{args.seed}.ckpt"
    if not path.exists():
        raise UsageError(f"missing checkpoint {path}; run 'train' first")
    model = load_checkpoint(build_model(cfg, data, args.seed), path)
    rows = evaluate(cfg, model, data, args.seed)
    mdir = args.out / "metrics"
    mdir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(rows, mdir / f"metrics_seed{args.seed}.csv")
    for _, z, metric, k, value in rows:
        print(f"domain {z} {metric}@{k} = {value:.4f}")
    return EXIT_OK


def cmd_verify(args, cfg) -> int:
    tdir = args.out / "theory"
    tdir.mkdir(parents=True, exist_ok=True)
    if args.replay is not None:
        inst = theory.load_instance(args.replay)
        checks = theory.replay_checks(inst, args.trials, args.eta, args.seed)
        for c in checks:
            print(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}")
        return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK
    report = theory.verify_theory(
        trials=args.trials, seed=args.seed, eta=args.eta,
        n_instances=args.instances, n_coverage_instances=args.coverage_instances,
    )
    text = report.render()
    (tdir / "report.txt").write_text(text, encoding="utf-8")
    for name, inst in report.failing.items():
        theory.save_instance(inst, tdir / "failing" / name)
    sys.stdout.write(text)
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_experiment(args, cfg) -> int:
    if args.seed is not None:
        cfg.run.seeds = [args.seed]
    run_experiment(cfg, args.out)
    sys.stdout.write(render_report(args.out))
    return EXIT_OK


def cmd_report(args, cfg) -> int:
    sys.stdout.write(render_report(args.out))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amidlab", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, seed_default=0):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None)
        p.add_argument("--out", type=Path, default=Path("out"))
        p.add_argument("--seed", type=int, default=seed_default)
        p.set_defaults(func=func)
        return p

    add("generate", cmd_generate, "write a synthetic scenario")
    add("train", cmd_train, "train one model on the scenario")
    add("evaluate", cmd_evaluate, "evaluate a trained checkpoint")
    v = add("verify", cmd_verify, "run the estimator verification suite")
    v.add_argument("--trials", type=int, default=100_000)
    v.add_argument("--eta", type=float, default=0.05)
    v.add_argument("--instances", type=int, default=1000)
    v.add_argument("--coverage-instances", type=int, default=20)
    v.add_argument("--replay", type=Path, default=None, help="re-check one stored instance directory")
    add("experiment", cmd_experiment, "run every variant over the seed list", seed_default=None)
    add("report", cmd_report, "print the summary table")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = parse_config(args.config)
        return args.func(args, cfg)
    except (ConfigError, CsvParseError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
