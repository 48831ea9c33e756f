import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from amidlab import autodiff as ad
from amidlab.autodiff import Tensor
from amidlab.mim import MimLayer, enhance, group_flags, interest_similarity, propagate_messages, similarity_matrix


def test_identity_similarity():
    I = np.eye(2)
    assert interest_similarity([[1, 0], [0, 0]], [[0, 1], [1, 0]], I, I) == pytest.approx(1.0)


def test_zero_sequence_similarity_is_zero(rng):
    W = rng.normal(size=(3, 3))
    assert interest_similarity(np.zeros((4, 3)), rng.normal(size=(4, 3)), W, W) == 0.0


def _max_oracle(Hi, Hj, W1, W2):
    best = -np.inf
    for t in range(Hi.shape[0]):
        for s in range(Hj.shape[0]):
            best = max(best, float(Hi[t] @ W1 @ W2.T @ Hj[s]))
    return best


def test_similarity_matches_exhaustive_max(rng):
    for _ in range(20):
        Hi, Hj = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        W1, W2 = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
        assert interest_similarity(Hi, Hj, W1, W2) == pytest.approx(_max_oracle(Hi, Hj, W1, W2), abs=1e-12)


def test_similarity_matrix_respects_masks(rng):
    Ht, Hs = rng.normal(size=(2, 4, 3)), rng.normal(size=(3, 4, 3))
    W1, W2 = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    mt = np.array([[0, 1, 1, 1], [0, 0, 0, 1]], bool)
    ms = np.array([[1, 1, 1, 1], [0, 0, 1, 1], [0, 0, 0, 0]], bool)
    S = similarity_matrix(Ht, Hs, W1, W2, mt, ms)
    for i in range(2):
        for j in range(3):
            expect = 0.0 if not ms[j].any() else _max_oracle(Ht[i][mt[i]], Hs[j][ms[j]], W1, W2)
            assert S[i, j] == pytest.approx(expect, abs=1e-12)


def test_threshold_is_inclusive():
    assert group_flags([0.7], 0.7)[0] == 1.0
    assert group_flags([0.69999], 0.7)[0] == 0.0
    np.testing.assert_array_equal(group_flags([-5.0, 0.0, 3.0], -1e18), 1.0)
    with pytest.raises(ValueError):
        group_flags([0.0], float("nan"))


def test_zero_flags_give_zero_messages(rng):
    m = propagate_messages(np.zeros(3), [rng.normal(size=(4, 2)) for _ in range(3)], rng.normal(size=(2, 2)))
    assert m.shape == (4, 2, 3)
    np.testing.assert_array_equal(m.data, 0.0)


def test_single_flag_with_identity_copies_source(rng):
    srcs = [rng.normal(size=(4, 2)) for _ in range(3)]
    m = propagate_messages(np.array([0.0, 1.0, 0.0]), srcs, np.eye(2))
    np.testing.assert_array_equal(m.data[:, :, 1], srcs[1])
    np.testing.assert_array_equal(m.data[:, :, 0], 0.0)


def test_messages_match_per_slot_oracle(rng):
    srcs = rng.normal(size=(5, 4, 3))
    flags = rng.integers(0, 2, size=5).astype(float)
    W = rng.normal(size=(3, 3))
    m = propagate_messages(flags, Tensor(srcs), W).data
    for j in range(5):
        np.testing.assert_allclose(m[:, :, j], flags[j] * srcs[j] @ W, atol=1e-12)


def test_zero_messages_leave_bottom_half_zero(rng):
    H = rng.normal(size=(4, 3))
    S = enhance(H, np.zeros((4, 3, 5)), Tensor(rng.normal(size=(5, 1))), Tensor(np.eye(3))).data
    assert S.shape == (8, 3)
    np.testing.assert_array_equal(S[:4], H)
    np.testing.assert_array_equal(S[4:], 0.0)


def test_single_slot_enhance_is_concat(rng):
    H, msg = rng.normal(size=(4, 3)), rng.normal(size=(4, 3, 1))
    S = enhance(H, msg, Tensor(np.ones((1, 1))), Tensor(np.eye(3))).data
    np.testing.assert_array_equal(S, np.concatenate([H, msg[:, :, 0]]))


def test_enhance_matches_index_loop_oracle(rng):
    T, d, N = 3, 2, 4
    H, msg = rng.normal(size=(T, d)), rng.normal(size=(T, d, N))
    W_C, W_F = rng.normal(size=(N, 1)), rng.normal(size=(d, d))
    S = enhance(H, msg, Tensor(W_C), Tensor(W_F)).data
    stacked = np.zeros((2 * T, d))
    stacked[:T] = H
    for t in range(T):
        for k in range(d):
            stacked[T + t, k] = sum(msg[t, k, n] * W_C[n, 0] for n in range(N))
    expect = np.zeros((2 * T, d))
    for r in range(2 * T):
        for c in range(d):
            expect[r, c] = sum(stacked[r, k] * W_F[k, c] for k in range(d))
    np.testing.assert_allclose(S, expect, atol=1e-12)


def _layer(rng, d=3, n_slots=5, k=0.7):
    return MimLayer(d, n_slots, k, rng)


def test_layer_shape_and_isolation(rng):
    layer = _layer(rng)
    layer.W_F.data[...] = np.eye(3)
    B, T, d = 2, 4, 3
    H = Tensor(rng.normal(size=(B, T, d)))
    src = Tensor(rng.normal(size=(6, T, d)))
    S = layer(H, Tensor(np.zeros((B, T, d))), np.zeros(B, bool), src, np.zeros((B, 4)))
    assert S.shape == (B, 2 * T, d)
    np.testing.assert_array_equal(S.data[:, T:], 0.0)


def test_layer_flags_exclude_same_user(rng):
    layer = _layer(rng, k=-1e18)
    H = Tensor(rng.normal(size=(2, 4, 3)))
    src = Tensor(rng.normal(size=(3, 4, 3)))
    mask = np.ones((2, 4), bool)
    same = np.array([[True, False, False], [False, False, True]])
    flags, _ = layer.flags(H, mask, src, np.ones((3, 4), bool), same)
    np.testing.assert_array_equal(flags[:, :3], [[0, 1, 1], [1, 1, 0]])
    np.testing.assert_array_equal(flags[:, 3:], 0.0)


def test_layer_gradients(rng):
    layer = _layer(rng)
    H = Tensor(rng.normal(size=(2, 3, 3)), requires_grad=True)
    own = Tensor(rng.normal(size=(2, 3, 3)), requires_grad=True)
    src = Tensor(rng.normal(size=(3, 3, 3)), requires_grad=True)
    flags = np.array([[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 1.0, 0.0]])

    def build():
        return ad.sum(ad.square(layer(H, own, np.array([True, False]), src, flags)))

    assert ad.finite_diff_check(build, [H, own, src, *layer.params()]) <= 1e-5


@settings(max_examples=30, deadline=None)
@given(
    arrays(np.float64, (3, 2), elements=st.floats(-2, 2)),
    arrays(np.float64, (3, 2), elements=st.floats(-2, 2)),
    st.floats(-3, 3),
)
def test_flag_monotone_in_threshold(Hi, Hj, k):
    I = np.eye(2)
    a = interest_similarity(Hi + 0.01, Hj + 0.01, I, I)
    assert group_flags([a], k)[0] >= group_flags([a], k + 0.5)[0]
