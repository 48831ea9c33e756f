"""The full recommender: embeddings -> encoder -> MIM -> prediction/imputation/propensity heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .datagen import ConfigError, SequenceBatch
from .encoders import EmbeddingTables, embed_sequence, init_uniform, make_encoder, zeros_param
from .mim import MimLayer


@dataclass
class ModelConfig:
    d: int = 16
    T: int = 8
    encoder: str = "gru"
    use_mim: bool = True
    mim_input: str = "encoded"  # or "embedded" (ablation: raw S')
    k: float = 0.7
    n_slots: int = 64  # N, the sampled-user count; tied to the batch size by the pipeline
    p_min: float = 0.05
    similarity_weight: float = 0.0

    def validate(self) -> None:
        if self.d < 2 or self.T < 1:
            raise ConfigError("need d >= 2 and T >= 1")
        if self.mim_input not in ("encoded", "embedded"):
            raise ConfigError(f"mim_input must be 'encoded' or 'embedded', got {self.mim_input!r}")
        if not 0.0 < self.p_min < 1.0:
            raise ConfigError("p_min must lie in (0, 1)")
        if self.n_slots < 1:
            raise ConfigError("N must be >= 1")


class MLPHead:
    """[2d -> d -> d/2 -> 1] with tanh hidden units; returns the output logit."""

    def __init__(self, d: int, rng: np.random.Generator, prefix: str):
        sizes = [2 * d, d, max(d // 2, 1), 1]
        self.weights = [init_uniform(rng, a, b, f"{prefix}_W{i}") for i, (a, b) in enumerate(zip(sizes, sizes[1:]))]
        self.biases = [zeros_param((b,), f"{prefix}_b{i}") for i, b in enumerate(sizes[1:])]

    def params(self) -> list[Tensor]:
        return [*self.weights, *self.biases]

    def __call__(self, x: Tensor) -> Tensor:
        h = ad.expand_dims(x, 0) if x.ndim == 1 else x
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.matmul(h, W) + b
            if i < last:
                h = ad.tanh(h)
        return ad.reshape(h, x.shape[:-1])


def predict_preference(S_star, item_embedding, head: MLPHead) -> Tensor:
    """sigmoid(MLP(Mean(S*) || v)) for one sequence (2T x d) or a batch (B x 2T x d)."""
    S_star = ad.as_tensor(S_star)
    rep = ad.mean(S_star, axis=-2)
    return ad.sigmoid(head(ad.concat([rep, ad.as_tensor(item_embedding)], axis=-1)))


class AmidModel:
    def __init__(self, num_items: list[int], cfg: ModelConfig, seed: int):
        cfg.validate()
        self.cfg = cfg
        self.num_items = list(num_items)
        rng = np.random.default_rng(seed)
        self.tables = EmbeddingTables.create(self.num_items, cfg.T, cfg.d, rng)
        self.encoder = make_encoder(cfg.encoder, cfg.d, rng)
        self.mim = MimLayer(cfg.d, cfg.n_slots, cfg.k, rng)
        self.pred_head = MLPHead(cfg.d, rng, "pred")
        self.imp_head = MLPHead(cfg.d, rng, "imp")
        self.prop_head = MLPHead(cfg.d, rng, "prop")

    # -- parameter groups -------------------------------------------------
    def theta(self) -> list[Tensor]:
        out = [*self.tables.params(), *self.encoder.params()]
        if self.cfg.use_mim:
            out += self.mim.params()
        return out + self.pred_head.params()

    def phi(self) -> list[Tensor]:
        return self.imp_head.params()

    def psi(self) -> list[Tensor]:
        return self.prop_head.params()

    def named_params(self) -> dict[str, Tensor]:
        all_params = [*self.tables.params(), *self.encoder.params(), *self.mim.params()]
        all_params += self.pred_head.params() + self.imp_head.params() + self.prop_head.params()
        return {p.name: p for p in all_params}

    # -- forward ------------------------------------------------------------
    def _encode_groups(self, groups: list[tuple[np.ndarray, int]]) -> list[tuple[Tensor, Tensor]]:
        """Embed each (ids, domain) group, then run the encoder once over all rows."""
        embedded = [embed_sequence(ids, z, self.tables) for ids, z in groups]
        ids_all = np.concatenate([ids for ids, _ in groups], axis=0)
        H_all = self.encoder(ad.concat(embedded, axis=0), ids_all != 0)
        out, start = [], 0
        for S, (ids, _) in zip(embedded, groups):
            stop = start + len(ids)
            out.append((S, H_all[start:stop]))
            start = stop
        return out

    def represent(self, batch: SequenceBatch, pool: SequenceBatch | None = None) -> tuple[Tensor, Tensor]:
        """Mean(S*) per row (B x d) plus the auxiliary similarity penalty.

        Rows must be grouped by domain.  Source rows for MIM come from ``pool``
        when given (evaluation), otherwise from the batch itself.
        """
        doms = batch.domain_ids
        if np.any(np.diff(doms) < 0):
            raise ValueError("batch rows must be sorted by domain")
        pool = batch if pool is None else pool
        n_dom = len(self.num_items)
        present = [int(z) for z in np.unique(doms)]
        idx = {z: np.flatnonzero(doms == z) for z in present}
        groups = [(batch.item_ids[idx[z]], z) for z in present]
        if self.cfg.use_mim:
            groups += [(batch.other_ids[idx[z]], (z + 1) % n_dom) for z in present]
            src_doms = sorted({(z + 1) % n_dom for z in present})
            pidx = {zo: np.flatnonzero(pool.domain_ids == zo) for zo in src_doms}
            if pool is not batch:
                groups += [(pool.item_ids[pidx[zo]], zo) for zo in src_doms]
        enc = self._encode_groups(groups)
        n = len(present)
        reps = []
        penalty = Tensor(0.0)
        for i, z in enumerate(present):
            S, H = enc[i]
            if not self.cfg.use_mim:
                reps.append(ad.mean(H, axis=1))
                continue
            zo = (z + 1) % n_dom
            if pool is batch:
                S_src, H_src = enc[present.index(zo)] if zo in present else (None, None)
            else:
                S_src, H_src = enc[2 * n + src_doms.index(zo)]
            use_raw = self.cfg.mim_input == "embedded"
            tgt = S if use_raw else H
            own_ids = batch.other_ids[idx[z]]
            S_own, H_own = enc[n + i]
            own = S_own if use_raw else H_own
            mask_t = batch.item_ids[idx[z]] != 0
            has_own = (own_ids != 0).any(axis=1)
            if S_src is None:
                # no source rows from the paired domain in this batch
                src = ad.as_tensor(np.zeros((0, *tgt.shape[1:])))
                mask_s = np.zeros((0, tgt.shape[1]), dtype=bool)
                same = np.zeros((len(own_ids), 0), dtype=bool)
            else:
                src = S_src if use_raw else H_src
                mask_s = pool.item_ids[pidx[zo]] != 0
                same = batch.user_ids[idx[z]][:, None] == pool.user_ids[pidx[zo]][None, :]
            flags, _ = self.mim.flags(tgt, mask_t, src, mask_s, same)
            S_star = self.mim(tgt, own, has_own, src, flags)
            reps.append(ad.mean(S_star, axis=1))
            if self.cfg.similarity_weight > 0 and len(mask_s):
                penalty = penalty + self.mim.similarity_penalty(tgt, mask_t, src, mask_s)
        return ad.concat(reps, axis=0), penalty

    def item_embeddings(self, domains: np.ndarray, items: np.ndarray) -> Tensor:
        if np.any(np.diff(domains) < 0):
            raise ValueError("pairs must be sorted by domain")
        parts = []
        for z in np.unique(domains):
            sel = domains == z
            parts.append(ad.gather(self.tables.item_tables[int(z)], items[sel], padding_idx=0))
        return ad.concat(parts, axis=0)

    def heads(self, rep: Tensor, rows: np.ndarray, domains: np.ndarray, items: np.ndarray) -> dict[str, Tensor]:
        """Prediction r_hat, imputed error e_hat and propensity p_hat for (row, item) pairs."""
        x = ad.concat([ad.gather(rep, rows), self.item_embeddings(domains, items)], axis=1)
        prop_logit = self.prop_head(x)
        p_min = self.cfg.p_min
        return {
            "r_hat": ad.sigmoid(self.pred_head(x)),
            "e_hat": ad.softplus(self.imp_head(x)),
            "p_hat": p_min + (1.0 - p_min) * ad.sigmoid(prop_logit),
            "prop_logit": prop_logit,
        }

    def score(self, batch: SequenceBatch, rows, items, pool: SequenceBatch | None = None) -> np.ndarray:
        """Predicted preferences without recording a graph."""
        rows = np.asarray(rows, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        with ad.no_grad():
            rep, _ = self.represent(batch, pool)
            x = ad.concat([ad.gather(rep, rows), self.item_embeddings(batch.domain_ids[rows], items)], axis=1)
            return ad.sigmoid(self.pred_head(x)).data.copy()
