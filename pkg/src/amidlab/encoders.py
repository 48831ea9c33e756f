"""Item/position embeddings and the single-domain sequence encoders."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .datagen import ConfigError

ENCODER_KINDS = ("prefix_mean", "gru")


def init_uniform(rng: np.random.Generator, rows: int, cols: int, name: str) -> Tensor:
    bound = 1.0 / np.sqrt(rows if rows > 0 else 1)
    return Tensor(rng.uniform(-bound, bound, size=(rows, cols)), requires_grad=True, name=name)


def zeros_param(shape, name: str) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


@dataclass
class EmbeddingTables:
    item_tables: list[Tensor]  # per domain, (n_items + 1, d); row 0 is the padding row
    position_table: Tensor  # (T, d)

    @property
    def d(self) -> int:
        return self.position_table.shape[1]

    @classmethod
    def create(cls, num_items: list[int], T: int, d: int, rng: np.random.Generator) -> "EmbeddingTables":
        if d <= 0:
            raise ConfigError("embedding dim must be positive")
        tables = []
        for z, n in enumerate(num_items):
            table = rng.uniform(-1.0 / np.sqrt(d), 1.0 / np.sqrt(d), size=(n + 1, d))
            table[0] = 0.0
            tables.append(Tensor(table, requires_grad=True, name=f"item_emb_{z}"))
        pos = Tensor(rng.uniform(-1.0 / np.sqrt(d), 1.0 / np.sqrt(d), size=(T, d)), requires_grad=True, name="pos_emb")
        return cls(tables, pos)

    def params(self) -> list[Tensor]:
        return [*self.item_tables, self.position_table]


def embed_sequence(item_ids, domain: int, tables: EmbeddingTables) -> Tensor:
    """Item embedding plus position embedding at real positions, zero at padding."""
    ids = np.asarray(item_ids, dtype=np.int64)
    mask = (ids != 0).astype(np.float64)[..., None]
    items = ad.gather(tables.item_tables[domain], ids, padding_idx=0)
    return (items + tables.position_table) * mask


class PrefixMeanEncoder:
    """H_t = running mean of the real positions up to t (debug encoder, no params)."""

    kind = "prefix_mean"

    def params(self) -> list[Tensor]:
        return []

    def __call__(self, S: Tensor, mask: np.ndarray) -> Tensor:
        m = np.asarray(mask, dtype=np.float64)
        T = m.shape[-1]
        lower = np.tril(np.ones((T, T)))
        counts = m @ lower.T  # real positions <= t
        weights = lower * m[..., None, :] * m[..., :, None] / np.maximum(counts, 1.0)[..., :, None]
        return ad.matmul(weights, S)


class GRUEncoder:
    """Single-layer GRU over real positions; h_0 = 0.

    The state is carried unchanged across padding, so with right-aligned rows
    every padded output is zero.

    Gate weights are stored side by side: ``W`` and ``U`` are d x 3d with
    column blocks (update, reset, candidate).
    """

    kind = "gru"

    def __init__(self, d: int, rng: np.random.Generator):
        self.d = d
        self.W = Tensor(np.concatenate([init_uniform(rng, d, d, "").data for _ in range(3)], axis=1),
                        requires_grad=True, name="gru_W")
        self.U = Tensor(np.concatenate([init_uniform(rng, d, d, "").data for _ in range(3)], axis=1),
                        requires_grad=True, name="gru_U")
        self.b = zeros_param((3 * d,), "gru_b")

    def params(self) -> list[Tensor]:
        return [self.W, self.U, self.b]

    def __call__(self, S: Tensor, mask: np.ndarray) -> Tensor:
        m = np.asarray(mask, dtype=np.float64)
        d = self.d
        T = S.shape[-2]
        xw = ad.matmul(S, self.W) + self.b  # (..., T, 3d)
        U_zr = self.U[:, : 2 * d]
        U_h = self.U[:, 2 * d :]
        h = None
        outs = []
        for t in range(T):
            xt = xw[..., t, :]
            mt = m[..., t : t + 1]
            if h is None:
                # h_0 = 0: the recurrent terms vanish
                zr = ad.sigmoid(xt[..., : 2 * d])
                cand = ad.tanh(xt[..., 2 * d :])
                h_new = zr[..., :d] * cand
                h = h_new * mt
            else:
                zr = ad.sigmoid(xt[..., : 2 * d] + ad.matmul(h, U_zr))
                z, r = zr[..., :d], zr[..., d:]
                cand = ad.tanh(xt[..., 2 * d :] + ad.matmul(r * h, U_h))
                h_new = h + z * (cand - h)
                h = h + (h_new - h) * mt
            outs.append(h)
        return ad.stack(outs, axis=-2)


def make_encoder(kind: str, d: int, rng: np.random.Generator):
    if kind == "prefix_mean":
        return PrefixMeanEncoder()
    if kind == "gru":
        return GRUEncoder(d, rng)
    raise ConfigError(f"unknown encoder kind {kind!r}; expected one of {ENCODER_KINDS}")


def encode(S: Tensor, mask, encoder) -> Tensor:
    """Run ``encoder`` (an instance or a kind name for parameter-free kinds)."""
    if isinstance(encoder, str):
        if encoder != "prefix_mean":
            raise ConfigError(f"encoder kind {encoder!r} needs parameters; build it with make_encoder")
        encoder = PrefixMeanEncoder()
    return encoder(S, mask)
