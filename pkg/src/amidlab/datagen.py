"""Synthetic cross-domain scenarios, CSV ingestion, preprocessing and batching.

Item ids inside a domain start at 1; id 0 is the padding id everywhere.
"""

from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterator

import numpy as np


class ConfigError(ValueError):
    pass


class CsvParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class InteractionEvent:
    user_id: int
    item_id: int
    domain_id: int
    timestamp: int


@dataclass
class GenConfig:
    num_domains: int = 2
    users_per_domain: int = 200
    items_per_domain: int = 100
    latent_dim: int = 8
    overlap_ratio: float = 0.2
    min_seq_len: int = 3
    max_seq_len: int = 30
    p_min: float = 0.05
    base: float = 0.3
    gamma_pop: float = 0.5
    gamma: float = 2.0
    # shifts z.q so that roughly a quarter of all pairs are true positives
    rating_offset: float = -1.0
    latent_scale: float = 2.0

    def validate(self) -> None:
        if not 0.0 <= self.overlap_ratio <= 1.0:
            raise ConfigError(f"overlap_ratio must lie in [0, 1], got {self.overlap_ratio}")
        if self.p_min <= 0.0 or self.p_min > 1.0:
            raise ConfigError(f"p_min must lie in (0, 1], got {self.p_min}")
        if self.gamma < 0 or self.gamma_pop < 0:
            raise ConfigError("bias strengths must be non-negative")
        if self.num_domains < 2:
            raise ConfigError("a cross-domain scenario needs at least 2 domains")
        if self.min_seq_len < 1 or self.max_seq_len < self.min_seq_len:
            raise ConfigError("need 1 <= min_seq_len <= max_seq_len")
        if self.items_per_domain < 2 or self.users_per_domain < 1 or self.latent_dim < 1:
            raise ConfigError("scenario sizes must be positive")


@dataclass
class CdsrScenario:
    """Full ground truth of one synthetic scenario.

    Matrices are indexed ``[domain][user, item]`` with 0-based item columns;
    the public item id of column ``v`` is ``v + 1``.
    """

    config: GenConfig
    seed: int
    user_factors: np.ndarray  # (U, d_lat)
    active: np.ndarray  # (U, Z) bool, user has a sequence in the domain
    item_factors: list[np.ndarray]  # per domain (V, d_lat)
    popularity: list[np.ndarray]  # per domain (V,)
    relevance: list[np.ndarray]  # per domain (U, V), sigmoid(z.q)
    true_rating: list[np.ndarray]
    true_propensity: list[np.ndarray]
    observation_mask: list[np.ndarray]
    sequences: dict[tuple[int, int], list[int]]  # (domain, user) -> item ids, oldest first
    forced_exposures: int = 0

    @property
    def num_domains(self) -> int:
        return self.config.num_domains

    @property
    def num_users(self) -> int:
        return self.user_factors.shape[0]

    def overlapping_users(self) -> set[int]:
        return set(np.flatnonzero(self.active.sum(axis=1) >= 2).tolist())

    def to_events(self) -> list[InteractionEvent]:
        events = []
        for (z, u), seq in sorted(self.sequences.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            for t, item in enumerate(seq):
                events.append(InteractionEvent(u, item, z, t + 1))
        return events


@dataclass
class SequenceBatch:
    item_ids: np.ndarray  # (B, T) right-aligned, 0 = padding
    domain_ids: np.ndarray  # (B,)
    user_ids: np.ndarray  # (B,)
    positives: np.ndarray  # (B,)
    negatives: np.ndarray  # (B, n_neg)
    other_ids: np.ndarray  # (B, T) the same user's sequence in the paired domain, zeros if none

    def __len__(self) -> int:
        return len(self.domain_ids)


@dataclass
class PairBatch:
    """(context row, item) pairs with labels and observation flags."""

    context: SequenceBatch
    rows: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    observed: np.ndarray

    @property
    def domains(self) -> np.ndarray:
        return self.context.domain_ids[self.rows]


@dataclass
class UserSplit:
    train: dict[int, list[int]]
    val: dict[int, list[int]]
    test: dict[int, list[int]]


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------
def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def propensity(relevance: np.ndarray, popularity: np.ndarray, cfg: GenConfig) -> np.ndarray:
    raw = cfg.base * popularity[None, :] ** cfg.gamma_pop * np.exp(cfg.gamma * (relevance - 0.5))
    return np.clip(raw, cfg.p_min, 1.0)


def generate_scenario(cfg: GenConfig, seed: int) -> CdsrScenario:
    """Draw a scenario where exposure depends on relevance and popularity."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    Z, V, d = cfg.num_domains, cfg.items_per_domain, cfg.latent_dim
    n_overlap = int(round(cfg.overlap_ratio * cfg.users_per_domain))
    n_single = cfg.users_per_domain - n_overlap
    U = n_overlap + Z * n_single

    active = np.zeros((U, Z), dtype=bool)
    active[:n_overlap, :] = True
    for z in range(Z):
        start = n_overlap + z * n_single
        active[start : start + n_single, z] = True

    scale = (cfg.latent_scale**2 / d) ** 0.25
    user_factors = rng.normal(0.0, scale, size=(U, d))
    item_factors, popularity, relevance, ratings, props, obs = [], [], [], [], [], []
    for z in range(Z):
        q = rng.normal(0.0, scale, size=(V, d))
        pop = np.exp(rng.normal(0.0, 1.0, size=V))
        pop /= pop.max()
        rel = _sigmoid(user_factors @ q.T + cfg.rating_offset)
        r = (rng.random((U, V)) < rel).astype(np.int8)
        p = propensity(rel, pop, cfg)
        o = ((rng.random((U, V)) < p) & active[:, z : z + 1]).astype(np.int8)
        item_factors.append(q)
        popularity.append(pop)
        relevance.append(rel)
        ratings.append(r)
        props.append(p)
        obs.append(o)

    sequences: dict[tuple[int, int], list[int]] = {}
    forced = 0
    for z in range(Z):
        r, o, p = ratings[z], obs[z], props[z]
        order_keys = rng.random((U, V))
        for u in np.flatnonzero(active[:, z]):
            cols = np.flatnonzero((o[u] == 1) & (r[u] == 1))
            if cols.size < cfg.min_seq_len:
                # top up from unexposed true positives, most exposable first
                spare = np.flatnonzero((o[u] == 0) & (r[u] == 1))
                spare = spare[np.argsort(-p[u, spare], kind="stable")][: cfg.min_seq_len - cols.size]
                if cols.size + spare.size < cfg.min_seq_len:
                    extra = np.flatnonzero(o[u] == 0)
                    extra = extra[~np.isin(extra, spare)]
                    need = cfg.min_seq_len - cols.size - spare.size
                    flip = rng.choice(extra, size=need, replace=False)
                    r[u, flip] = 1
                    spare = np.concatenate([spare, flip])
                o[u, spare] = 1
                forced += spare.size
                cols = np.flatnonzero((o[u] == 1) & (r[u] == 1))
            cols = cols[np.argsort(order_keys[u, cols], kind="stable")][-cfg.max_seq_len :]
            sequences[(z, int(u))] = (cols + 1).tolist()

    return CdsrScenario(
        config=cfg,
        seed=seed,
        user_factors=user_factors,
        active=active,
        item_factors=item_factors,
        popularity=popularity,
        relevance=relevance,
        true_rating=ratings,
        true_propensity=props,
        observation_mask=obs,
        sequences=sequences,
        forced_exposures=forced,
    )


def dump_scenario(scn: CdsrScenario, out_dir: str | Path) -> list[Path]:
    """Write ratings/propensity/observed matrices and sequences as long-form CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for fname, mats, fmt in (
        ("ratings.csv", scn.true_rating, "d"),
        ("propensity.csv", scn.true_propensity, "r"),
        ("observed.csv", scn.observation_mask, "d"),
    ):
        path = out / fname
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["domain", "user", "item", "value"])
            for z, m in enumerate(mats):
                for u in range(m.shape[0]):
                    for v in range(m.shape[1]):
                        val = m[u, v]
                        w.writerow([z, u, v + 1, int(val) if fmt == "d" else repr(float(val))])
        written.append(path)
    path = out / "sequences.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["domain", "user", "position", "item"])
        for (z, u), seq in sorted(scn.sequences.items()):
            for t, item in enumerate(seq):
                w.writerow([z, u, t, item])
    written.append(path)
    return written


# ---------------------------------------------------------------------------
# CSV ingestion and preprocessing
# ---------------------------------------------------------------------------
CSV_HEADER = ["user_id", "item_id", "domain_id", "timestamp"]


def load_interactions_csv(path: str | Path) -> list[InteractionEvent]:
    events = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CSV_HEADER:
            raise CsvParseError(f"expected header {','.join(CSV_HEADER)}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise CsvParseError(f"expected 4 fields, got {len(row)}", lineno)
            try:
                vals = [int(x) for x in row]
            except ValueError:
                bad = next(name for name, x in zip(CSV_HEADER, row) if not _is_int(x))
                raise CsvParseError(f"non-integer {bad}", lineno) from None
            events.append(InteractionEvent(*vals))
    return events


def _is_int(text: str) -> bool:
    try:
        int(text)
    except ValueError:
        return False
    return True


def write_interactions_csv(events: list[InteractionEvent], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for ev in events:
            w.writerow([ev.user_id, ev.item_id, ev.domain_id, ev.timestamp])


def filter_sparse(
    events: list[InteractionEvent], min_item_inter: int = 10, min_user_inter: int = 5
) -> list[InteractionEvent]:
    """Drop rare items and light users (per domain) until nothing changes."""
    if min_item_inter < 1 or min_user_inter < 1:
        raise ConfigError("thresholds must be >= 1")
    current = list(events)
    while True:
        items = Counter((e.domain_id, e.item_id) for e in current)
        users = Counter((e.domain_id, e.user_id) for e in current)
        kept = [
            e
            for e in current
            if items[(e.domain_id, e.item_id)] >= min_item_inter and users[(e.domain_id, e.user_id)] >= min_user_inter
        ]
        if len(kept) == len(current):
            return kept
        current = kept


def build_sequences(events: list[InteractionEvent]) -> dict[tuple[int, int], list[int]]:
    """(domain, user) -> items ordered by timestamp, ties by input order."""
    streams: dict[tuple[int, int], list[tuple[int, int, int]]] = defaultdict(list)
    for idx, e in enumerate(events):
        streams[(e.domain_id, e.user_id)].append((e.timestamp, idx, e.item_id))
    return {key: [item for _, _, item in sorted(rows)] for key, rows in streams.items()}


def overlapping_users(events: list[InteractionEvent]) -> set[int]:
    domains: dict[int, set[int]] = defaultdict(set)
    for e in events:
        domains[e.user_id].add(e.domain_id)
    return {u for u, ds in domains.items() if len(ds) >= 2}


def split_users(events: list[InteractionEvent], seed: int) -> UserSplit:
    """Per-domain 80/10/10 user split."""
    by_domain: dict[int, set[int]] = defaultdict(set)
    for e in events:
        by_domain[e.domain_id].add(e.user_id)
    rng = np.random.default_rng(seed)
    train, val, test = {}, {}, {}
    for z in sorted(by_domain):
        users = np.array(sorted(by_domain[z]))
        rng.shuffle(users)
        n = users.size
        n_train = int(Fraction(8, 10) * n)
        n_val = int(Fraction(1, 10) * n)
        train[z] = sorted(users[:n_train].tolist())
        val[z] = sorted(users[n_train : n_train + n_val].tolist())
        test[z] = sorted(users[n_train + n_val :].tolist())
    return UserSplit(train, val, test)


def ku_retained_count(pool: int, k_u: float, fraction: float) -> int:
    """floor(K_u * pool * fraction), evaluated in exact decimal arithmetic."""
    return math.floor(Fraction(str(k_u)) * pool * Fraction(str(fraction)))


def apply_ku(
    split: UserSplit,
    overlapping: set[int],
    k_u: float,
    seed: int,
    pool_size: int | None = None,
    fractions: tuple[float, float] = (0.8, 0.1),
) -> tuple[UserSplit, dict[int, list[int]]]:
    """Keep a K_u share of non-overlapping users in train and val.

    ``pool_size`` is the number of non-overlapping (domain, user) entries in the
    whole dataset; it defaults to the count across all three splits.  Returns
    the downsampled split and the dropped train users per domain, which later
    stand in for unexposed users.
    """
    if not 0.0 < k_u <= 1.0:
        raise ConfigError(f"K_u must lie in (0, 1], got {k_u}")
    if pool_size is None:
        pool_size = sum(
            1
            for part in (split.train, split.val, split.test)
            for users in part.values()
            for u in users
            if u not in overlapping
        )
    rng = np.random.default_rng(seed)
    out_parts = []
    unseen: dict[int, list[int]] = {z: [] for z in split.train}
    for part, frac, is_train in ((split.train, fractions[0], True), (split.val, fractions[1], False)):
        candidates = [(z, u) for z in sorted(part) for u in part[z] if u not in overlapping]
        if k_u >= 1.0:
            keep = set(candidates)
        else:
            n_keep = min(ku_retained_count(pool_size, k_u, frac), len(candidates))
            idx = rng.choice(len(candidates), size=n_keep, replace=False) if n_keep else []
            keep = {candidates[i] for i in idx}
        new_part = {}
        for z in sorted(part):
            new_part[z] = [u for u in part[z] if u in overlapping or (z, u) in keep]
            if is_train:
                unseen[z] = [u for u in part[z] if u not in overlapping and (z, u) not in keep]
        out_parts.append(new_part)
    return UserSplit(out_parts[0], out_parts[1], {z: list(us) for z, us in split.test.items()}), unseen


def pad_truncate(sequence, T: int) -> list[int]:
    """Most recent T items, left-padded with 0."""
    if T < 1:
        raise ConfigError("T must be >= 1")
    seq = list(sequence)[-T:]
    return [0] * (T - len(seq)) + seq


# ---------------------------------------------------------------------------
# Prepared dataset and samplers
# ---------------------------------------------------------------------------
@dataclass
class CdsrData:
    sequences: dict[tuple[int, int], list[int]]
    num_items: list[int]  # items per domain (ids 1..n)
    split: UserSplit
    unseen: dict[int, list[int]]
    overlapping: set[int]
    T: int
    # training examples: (domain, user, position of the target in the sequence)
    examples: list[tuple[int, int, int]] = field(default_factory=list)
    unseen_examples: list[tuple[int, int, int]] = field(default_factory=list)

    @property
    def num_domains(self) -> int:
        return len(self.num_items)

    def paired_domain(self, z: int) -> int:
        return (z + 1) % self.num_domains

    def context(self, z: int, u: int, pos: int | None = None) -> list[int]:
        seq = self.sequences.get((z, u), [])
        return pad_truncate(seq if pos is None else seq[:pos], self.T)

    def other_context(self, z: int, u: int) -> list[int]:
        return pad_truncate(self.sequences.get((self.paired_domain(z), u), []), self.T)


def _examples_for(sequences, users_by_domain) -> list[tuple[int, int, int]]:
    out = []
    for z in sorted(users_by_domain):
        for u in users_by_domain[z]:
            seq = sequences.get((z, u), [])
            out.extend((z, u, pos) for pos in range(1, len(seq)))
    return out


def prepare_dataset(
    events: list[InteractionEvent],
    T: int,
    k_u: float,
    seed: int,
    num_items: list[int] | None = None,
    filter_thresholds: tuple[int, int] | None = None,
) -> CdsrData:
    """Filter, split, downsample and index an event log for training."""
    if filter_thresholds is not None:
        events = filter_sparse(events, *filter_thresholds)
    sequences = build_sequences(events)
    if num_items is None:
        n_dom = max(e.domain_id for e in events) + 1
        num_items = [0] * n_dom
        for e in events:
            num_items[e.domain_id] = max(num_items[e.domain_id], e.item_id)
    overlap = overlapping_users(events)
    split = split_users(events, seed)
    split, unseen = apply_ku(split, overlap, k_u, seed + 1)
    data = CdsrData(sequences, list(num_items), split, unseen, overlap, T)
    data.examples = _examples_for(sequences, split.train)
    data.unseen_examples = _examples_for(sequences, unseen)
    return data


def _sample_unvisited(rng, n_items: int, visited: set[int], k: int, exclude=()) -> list[int]:
    banned = visited | set(exclude)
    if n_items - len(banned) < k:
        raise ConfigError(f"domain has too few unvisited items to draw {k} negatives")
    out: list[int] = []
    while len(out) < k:
        cand = int(rng.integers(1, n_items + 1))
        if cand not in banned:
            banned.add(cand)
            out.append(cand)
    return out


def _batch_from_examples(data: CdsrData, rows, negatives_per_positive: int, rng) -> SequenceBatch:
    rows = sorted(rows, key=lambda r: r[0])
    item_ids, others, doms, users, pos, negs = [], [], [], [], [], []
    for z, u, p in rows:
        seq = data.sequences[(z, u)]
        item_ids.append(data.context(z, u, p))
        others.append(data.other_context(z, u))
        doms.append(z)
        users.append(u)
        pos.append(seq[p])
        negs.append(_sample_unvisited(rng, data.num_items[z], set(seq), negatives_per_positive))
    return SequenceBatch(
        item_ids=np.array(item_ids, dtype=np.int64).reshape(len(rows), data.T),
        domain_ids=np.array(doms, dtype=np.int64),
        user_ids=np.array(users, dtype=np.int64),
        positives=np.array(pos, dtype=np.int64),
        negatives=np.array(negs, dtype=np.int64).reshape(len(rows), negatives_per_positive),
        other_ids=np.array(others, dtype=np.int64).reshape(len(rows), data.T),
    )


def next_item_targets(sequence) -> list[tuple[list[int], int]]:
    """(prefix, next item) for every position after the first."""
    seq = list(sequence)
    return [(seq[:t], seq[t]) for t in range(1, len(seq))]


def make_batches(
    data: CdsrData, batch_size: int, negatives_per_positive: int, seed: int, examples=None
) -> Iterator[SequenceBatch]:
    """Endless stream of mixed-domain next-item batches, reshuffled every pass."""
    if batch_size < 2:
        raise ConfigError("batch_size must be >= 2")
    for z, n in enumerate(data.num_items):
        if n < negatives_per_positive + 1:
            raise ConfigError(f"domain {z} has fewer than {negatives_per_positive + 1} items")
    examples = data.examples if examples is None else examples
    by_domain: dict[int, list] = defaultdict(list)
    for ex in examples:
        by_domain[ex[0]].append(ex)
    domains = sorted(by_domain)
    if not domains:
        raise ConfigError("no training examples")
    rng = np.random.default_rng(seed)
    share = [batch_size // len(domains) + (1 if i < batch_size % len(domains) else 0) for i in range(len(domains))]
    orders = {z: rng.permutation(len(by_domain[z])) for z in domains}
    cursors = {z: 0 for z in domains}
    while True:
        rows = []
        for z, k in zip(domains, share):
            for _ in range(k):
                if cursors[z] == len(orders[z]):
                    orders[z] = rng.permutation(len(by_domain[z]))
                    cursors[z] = 0
                rows.append(by_domain[z][orders[z][cursors[z]]])
                cursors[z] += 1
        yield _batch_from_examples(data, rows, negatives_per_positive, rng)


def pairs_from_batch(batch: SequenceBatch) -> PairBatch:
    """Observed pairs: each positive (r=1) and its sampled negatives (r=0)."""
    B, n_neg = batch.negatives.shape
    rows = np.repeat(np.arange(B), 1 + n_neg)
    items = np.concatenate([batch.positives[:, None], batch.negatives], axis=1).ravel()
    ratings = np.tile(np.r_[1.0, np.zeros(n_neg)], B)
    return PairBatch(batch, rows, items, ratings, np.ones(B * (1 + n_neg)))


def sample_full_space(
    data: CdsrData, batch_size: int, unobserved_per_context: int, rng: np.random.Generator
) -> PairBatch:
    """A batch over the whole user-item space.

    Contexts come uniformly from selected and unseen training users.  Selected
    contexts contribute their observed positive and negative (o=1) plus random
    unobserved items (o=0); unseen users' pairs are all unobserved.
    """
    pool = [(ex, True) for ex in data.examples] + [(ex, False) for ex in data.unseen_examples]
    by_domain: dict[int, list] = defaultdict(list)
    for item in pool:
        by_domain[item[0][0]].append(item)
    domains = sorted(by_domain)
    share = [batch_size // len(domains) + (1 if i < batch_size % len(domains) else 0) for i in range(len(domains))]
    chosen = []
    for z, k in zip(domains, share):
        idx = rng.choice(len(by_domain[z]), size=k, replace=len(by_domain[z]) < k)
        chosen.extend(by_domain[z][i] for i in idx)
    batch = _batch_from_examples(data, [c[0] for c in chosen], 1, rng)
    rows, items, ratings, observed = [], [], [], []
    for b, (_, selected) in enumerate(chosen):
        z = int(batch.domain_ids[b])
        seq = data.sequences[(z, int(batch.user_ids[b]))]
        pos, neg = int(batch.positives[b]), int(batch.negatives[b, 0])
        extra = _sample_unvisited(rng, data.num_items[z], set(seq), unobserved_per_context, exclude=(neg,))
        for item, rating, obs in [(pos, 1.0, selected), (neg, 0.0, selected)] + [(v, 0.0, False) for v in extra]:
            rows.append(b)
            items.append(item)
            ratings.append(rating if obs else 0.0)
            observed.append(1.0 if obs else 0.0)
    # chosen was built domain by domain, so rows already follow the batch's domain order
    return PairBatch(
        batch,
        np.array(rows, dtype=np.int64),
        np.array(items, dtype=np.int64),
        np.array(ratings),
        np.array(observed),
    )
