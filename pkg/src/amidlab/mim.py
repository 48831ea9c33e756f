"""Multi-interest information module: interest groups and cross-domain messages.

Group flags come from a hard threshold, so they enter the graph as constants.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import ShapeError, Tensor
from .encoders import init_uniform


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _valid_rows(H: np.ndarray, mask) -> np.ndarray:
    if mask is None:
        return np.any(H != 0.0, axis=-1)
    return np.asarray(mask, dtype=bool)


def interest_similarity(H_i, H_j, W1, W2, mask_i=None, mask_j=None) -> float:
    """max over valid (t, s) of (H_i W1)(H_j W2)^T; 0 when either side is all padding.

    Without explicit masks a row counts as padding when it is entirely zero.
    """
    Hi, Hj, w1, w2 = map(_data, (H_i, H_j, W1, W2))
    if Hi.ndim != 2 or Hj.ndim != 2 or Hi.shape[1] != Hj.shape[1] or Hi.shape[0] != Hj.shape[0]:
        raise ShapeError(f"interest_similarity: shapes {Hi.shape} and {Hj.shape} must both be T x d")
    if w1.shape != (Hi.shape[1], Hi.shape[1]) or w2.shape != w1.shape:
        raise ShapeError("interest_similarity: W1 and W2 must be d x d")
    mi = _valid_rows(Hi, mask_i)
    mj = _valid_rows(Hj, mask_j)
    return float(kernels.similarity_max((Hi @ w1)[None], (Hj @ w2)[None], mi[None], mj[None])[0, 0])


def similarity_matrix(H_targets, H_sources, W1, W2, mask_t, mask_s) -> np.ndarray:
    """Pairwise interest similarity between two batches of encoded sequences."""
    Ht, Hs, w1, w2 = map(_data, (H_targets, H_sources, W1, W2))
    return kernels.similarity_max(Ht @ w1, Hs @ w2, mask_t, mask_s)


def group_flags(similarities, k: float) -> np.ndarray:
    """1 where similarity >= k (inclusive), else 0."""
    if not np.isfinite(k):
        raise ValueError("k must be finite")
    return (np.asarray(similarities, dtype=np.float64) >= k).astype(np.float64)


def propagate_messages(flags_row, sources, W_ip) -> Tensor:
    """Stack a_j * (H_j W_ip) over the N source slots into a T x d x N tensor."""
    flags_row = np.asarray(flags_row, dtype=np.float64)
    if isinstance(sources, Tensor):
        src = sources
    else:
        src = ad.stack([ad.as_tensor(s) for s in sources], axis=0)
    if src.shape[0] != flags_row.shape[0]:
        raise ShapeError(f"propagate_messages: {src.shape[0]} sources but {flags_row.shape[0]} flags")
    msgs = ad.matmul(src, W_ip) * flags_row[:, None, None]  # N x T x d
    return ad.transpose(msgs, (1, 2, 0))


def enhance(H, messages, W_C, W_F) -> Tensor:
    """Concat(H, squeeze(m' W_C)) W_F -> 2T x d."""
    H, messages = ad.as_tensor(H), ad.as_tensor(messages)
    T, d, N = messages.shape
    if H.shape != (T, d) or W_C.shape != (N, 1) or W_F.shape != (d, d):
        raise ShapeError(f"enhance: inconsistent shapes H={H.shape}, m'={messages.shape}, W_C={W_C.shape}")
    fused = ad.reshape(ad.matmul(messages, W_C), (T, d))
    return ad.matmul(ad.concat([H, fused], axis=0), W_F)


class MimLayer:
    """Batched interest grouping and propagation for one target domain at a time.

    Source slot 0 holds the target user's own sequence from the paired domain
    (always propagated when present); slots 1..N-1 hold the paired-domain rows
    of the current batch, zero-padded with flag 0 when fewer are available.
    """

    def __init__(self, d: int, n_slots: int, k: float, rng: np.random.Generator):
        if n_slots < 1:
            raise ValueError("N must be >= 1")
        self.d, self.n_slots, self.k = d, n_slots, float(k)
        self.W1 = init_uniform(rng, d, d, "mim_W1")
        self.W2 = init_uniform(rng, d, d, "mim_W2")
        self.W_ip = init_uniform(rng, d, d, "mim_Wip")
        self.W_C = init_uniform(rng, n_slots, 1, "mim_WC")
        self.W_F = init_uniform(rng, d, d, "mim_WF")

    def params(self) -> list[Tensor]:
        return [self.W1, self.W2, self.W_ip, self.W_C, self.W_F]

    def flags(self, H_t: Tensor, mask_t, H_s: Tensor, mask_s, same_user: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Flags for pool slots 1..N-1 and the raw similarities behind them."""
        n_pool = self.n_slots - 1
        B = H_t.shape[0]
        flags = np.zeros((B, n_pool))
        sims = np.zeros((B, n_pool))
        m = min(n_pool, H_s.shape[0])
        if m > 0:
            s = similarity_matrix(H_t, H_s.data[:m], self.W1, self.W2, mask_t, np.asarray(mask_s)[:m])
            sims[:, :m] = s
            flags[:, :m] = group_flags(s, self.k) * (~same_user[:, :m])
        return flags, sims

    def __call__(self, H_t: Tensor, H_own: Tensor, has_own: np.ndarray, H_s: Tensor, flags: np.ndarray) -> Tensor:
        """S* for every target row: (B, 2T, d)."""
        B, T, d = H_t.shape
        own_coef = ad.reshape(self.W_C[0:1, :], (1, 1, 1)) * np.asarray(has_own, dtype=np.float64)[:, None, None]
        fused = ad.matmul(H_own, self.W_ip) * own_coef
        m = min(self.n_slots - 1, H_s.shape[0])
        if m > 0:
            msgs = ad.reshape(ad.matmul(H_s[:m], self.W_ip), (m, T * d))
            coef = ad.reshape(self.W_C[1 : m + 1, :], (1, m)) * flags[:, :m]
            fused = fused + ad.reshape(ad.matmul(coef, msgs), (B, T, d))
        return ad.matmul(ad.concat([H_t, fused], axis=1), self.W_F)

    def similarity_penalty(self, H_t: Tensor, mask_t, H_s: Tensor, mask_s) -> Tensor:
        """Mean squared pre-threshold similarity; a differentiable path to W1/W2 (off by default)."""
        m = min(self.n_slots - 1, H_s.shape[0])
        if m == 0:
            return Tensor(0.0)
        left = ad.matmul(H_t, self.W1)  # B x T x d
        right = ad.matmul(H_s[:m], self.W2)  # m x T x d
        B, T, d = left.shape
        scores = ad.matmul(ad.reshape(left, (B * T, d)), ad.transpose(ad.reshape(right, (m * T, d))))
        valid = (np.asarray(mask_t, dtype=float).reshape(B * T, 1) * np.asarray(mask_s, dtype=float)[:m].reshape(1, m * T))
        return ad.sum(ad.square(scores) * valid) / max(valid.sum(), 1.0)
