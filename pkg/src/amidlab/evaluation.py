"""Sampled-negative ranking evaluation with HR@K / NDCG@K."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datagen import CdsrData, ConfigError, SequenceBatch, _sample_unvisited


@dataclass(frozen=True)
class RankResult:
    user_id: int
    domain_id: int
    rank: int


@dataclass
class MetricsReport:
    # (domain, metric, k) -> (mean, std)
    values: dict[tuple[int, str, int], tuple[float, float]] = field(default_factory=dict)
    n_seeds: int = 0

    def rows(self):
        for (z, metric, k), (mean, std) in sorted(self.values.items()):
            yield z, metric, k, mean, std, self.n_seeds


def rank_from_scores(positive_score: float, negative_scores) -> int:
    """1 + number of negatives scoring at least as high as the positive."""
    neg = np.asarray(negative_scores, dtype=np.float64)
    if neg.size < 1:
        raise ConfigError("need at least one negative")
    return 1 + int(np.sum(neg >= positive_score))


def metric_at_k(rank: int, k: int, kind: str) -> float:
    if k < 1:
        raise ConfigError("K must be >= 1")
    if rank > k:
        return 0.0
    if kind == "hr":
        return 1.0
    if kind == "ndcg":
        return 1.0 / math.log2(rank + 1)
    raise ValueError(f"unknown metric {kind!r}")


def eval_pool(data: CdsrData, size: int, seed: int) -> SequenceBatch:
    """Fixed source pool for MIM at evaluation: training users' full sequences."""
    rng = np.random.default_rng(seed)
    rows = []
    for z in range(data.num_domains):
        users = data.split.train.get(z, [])
        if not users:
            continue
        pick = rng.choice(len(users), size=min(size, len(users)), replace=False)
        rows.extend((z, users[i]) for i in sorted(pick))
    T = data.T
    return SequenceBatch(
        item_ids=np.array([data.context(z, u) for z, u in rows], dtype=np.int64).reshape(len(rows), T),
        domain_ids=np.array([z for z, _ in rows], dtype=np.int64),
        user_ids=np.array([u for _, u in rows], dtype=np.int64),
        positives=np.zeros(len(rows), dtype=np.int64),
        negatives=np.zeros((len(rows), 0), dtype=np.int64),
        other_ids=np.array([data.other_context(z, u) for z, u in rows], dtype=np.int64).reshape(len(rows), T),
    )


def leave_last_out_batch(data: CdsrData, domain: int, num_negatives: int, seed: int, users=None) -> SequenceBatch:
    """Leave-last-out rows for a domain's test users with sampled negatives."""
    if num_negatives < 1:
        raise ConfigError("need at least one negative")
    rng = np.random.default_rng([seed, domain])
    users = data.split.test.get(domain, []) if users is None else users
    users = [u for u in users if data.sequences.get((domain, u))]
    item_ids, others, pos, negs = [], [], [], []
    for u in users:
        seq = data.sequences[(domain, u)]
        item_ids.append(data.context(domain, u, len(seq) - 1))
        others.append(data.other_context(domain, u))
        pos.append(seq[-1])
        negs.append(_sample_unvisited(rng, data.num_items[domain], set(seq), num_negatives))
    n, T = len(users), data.T
    return SequenceBatch(
        item_ids=np.array(item_ids, dtype=np.int64).reshape(n, T),
        domain_ids=np.full(n, domain, dtype=np.int64),
        user_ids=np.array(users, dtype=np.int64),
        positives=np.array(pos, dtype=np.int64),
        negatives=np.array(negs, dtype=np.int64).reshape(n, num_negatives),
        other_ids=np.array(others, dtype=np.int64).reshape(n, T),
    )


def rank_candidates(model, batch: SequenceBatch, pool: SequenceBatch | None = None) -> list[RankResult]:
    """Score each row's positive and negatives with the prediction head and rank the positive."""
    B, M = batch.negatives.shape
    if M < 1:
        raise ConfigError("need at least one negative")
    if B == 0:
        return []
    rows = np.repeat(np.arange(B), 1 + M)
    items = np.concatenate([batch.positives[:, None], batch.negatives], axis=1).ravel()
    scores = model.score(batch, rows, items, pool).reshape(B, 1 + M)
    return [
        RankResult(int(batch.user_ids[b]), int(batch.domain_ids[b]), rank_from_scores(scores[b, 0], scores[b, 1:]))
        for b in range(B)
    ]


def evaluate_domain(
    model, data: CdsrData, domain: int, num_negatives: int, k: int, seed: int, pool: SequenceBatch | None = None
) -> tuple[dict[str, float], list[RankResult]]:
    batch = leave_last_out_batch(data, domain, num_negatives, seed)
    if len(batch) == 0:
        raise ConfigError(f"domain {domain} has no test users")
    ranks = rank_candidates(model, batch, pool)
    metrics = {kind: float(np.mean([metric_at_k(r.rank, k, kind) for r in ranks])) for kind in ("hr", "ndcg")}
    return metrics, ranks


def aggregate_runs(per_seed: dict[tuple[int, str, int], list[float]]) -> MetricsReport:
    """Sample mean and sample standard deviation (ddof=1; 0 for one seed)."""
    report = MetricsReport()
    counts = {len(v) for v in per_seed.values()}
    if not per_seed or 0 in counts:
        raise ValueError("need at least one seed")
    report.n_seeds = max(counts)
    for key, vals in per_seed.items():
        arr = np.asarray(vals, dtype=np.float64)
        std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        report.values[key] = (float(arr.mean()), std)
    return report


METRICS_HEADER = ["seed", "domain", "metric", "k", "value"]
SUMMARY_HEADER = ["domain", "metric", "k", "mean", "std", "n_seeds"]


def write_metrics_csv(rows, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for seed, z, metric, k, value in rows:
            w.writerow([seed, z, metric, k, repr(float(value))])


def read_metrics_csv(path: str | Path) -> dict[tuple[int, str, int], list[float]]:
    out: dict[tuple[int, str, int], list[float]] = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            out[(int(rec["domain"]), rec["metric"], int(rec["k"]))].append(float(rec["value"]))
    return dict(out)


def write_summary_csv(report: MetricsReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for z, metric, k, mean, std, n in report.rows():
            w.writerow([z, metric, k, repr(mean), repr(std), n])


def read_summary_csv(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SUMMARY_HEADER:
            raise ValueError(f"{path}: expected header {','.join(SUMMARY_HEADER)}")
        return [
            {"domain": int(r["domain"]), "metric": r["metric"], "k": int(r["k"]),
             "mean": float(r["mean"]), "std": float(r["std"]), "n_seeds": int(r["n_seeds"])}
            for r in reader
        ]
