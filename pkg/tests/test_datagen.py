import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amidlab import datagen
from amidlab.datagen import (
    ConfigError,
    CsvParseError,
    GenConfig,
    InteractionEvent,
    UserSplit,
    apply_ku,
    filter_sparse,
    generate_scenario,
    ku_retained_count,
    load_interactions_csv,
    make_batches,
    next_item_targets,
    pad_truncate,
    split_users,
)


def test_bias_switch_off_gives_constant_propensity():
    scn = generate_scenario(GenConfig(users_per_domain=30, items_per_domain=20, gamma=0.0, gamma_pop=0.0), 0)
    for p in scn.true_propensity:
        np.testing.assert_allclose(p, 0.3)


def test_same_seed_bit_identical():
    cfg = GenConfig(users_per_domain=30, items_per_domain=20)
    a, b = generate_scenario(cfg, 7), generate_scenario(cfg, 7)
    for x, y in zip(a.observation_mask, b.observation_mask):
        np.testing.assert_array_equal(x, y)
    assert a.sequences == b.sequences
    assert a.to_events() == b.to_events()


def test_observation_rate_matches_propensity():
    scn = generate_scenario(GenConfig(users_per_domain=200, items_per_domain=100), 11)
    o, p = [], []
    for z in range(2):
        active = scn.active[:, z]
        o.append(scn.observation_mask[z][active].ravel())
        p.append(scn.true_propensity[z][active].ravel())
    o, p = np.concatenate(o), np.concatenate(p)
    assert o.size >= 10**4
    # forced top-up exposures raise the rate slightly above p, so remove them first
    forced = scn.forced_exposures
    se = np.sqrt(np.sum(p * (1 - p))) / o.size
    assert abs((o.sum() - forced) / o.size - p.mean()) <= 3 * se


def test_propensity_respects_floor(small_scenario):
    for p in small_scenario.true_propensity:
        assert p.min() >= small_scenario.config.p_min and p.max() <= 1.0


def test_invalid_overlap_ratio():
    with pytest.raises(ConfigError):
        generate_scenario(GenConfig(overlap_ratio=1.5), 0)


def _write(tmp_path, body):
    path = tmp_path / "events.csv"
    path.write_text("user_id,item_id,domain_id,timestamp\n" + body)
    return path


def test_csv_empty_body(tmp_path):
    assert load_interactions_csv(_write(tmp_path, "")) == []


def test_csv_file_order(tmp_path):
    events = load_interactions_csv(_write(tmp_path, "3,1,0,9\n1,2,0,5\n2,3,1,7\n"))
    assert [e.user_id for e in events] == [3, 1, 2]


def test_csv_error_names_line(tmp_path):
    with pytest.raises(CsvParseError, match="line 4") as info:
        load_interactions_csv(_write(tmp_path, "1,1,0,1\n1,2,0,2\n1,3,0,noon\n"))
    assert info.value.line == 4


def _ev(u, i, z=0, t=0):
    return InteractionEvent(u, i, z, t)


def test_filter_identity_when_dense():
    events = [_ev(u, i, t=u * 10 + i) for u in range(6) for i in range(1, 11)]
    assert filter_sparse(events, 5, 5) == events


def test_filter_cascade():
    # item 99 has 9 events; user 0 is its only heavy user and falls under 5 once
    # the rare item 7 goes, which in turn drops item 99 below 9
    events = [_ev(u, 99) for u in range(9)]
    events += [_ev(0, 7)]
    events += [_ev(u, i) for u in range(1, 9) for i in range(1, 5)]
    out = filter_sparse(events, min_item_inter=9, min_user_inter=5)
    assert all(e.user_id != 0 for e in out)
    assert all(e.item_id != 99 for e in out)


def _oracle_filter(events, min_item, min_user):
    current = list(events)
    changed = True
    while changed:
        changed = False
        for e in list(current):
            n_item = sum(1 for x in current if (x.domain_id, x.item_id) == (e.domain_id, e.item_id))
            n_user = sum(1 for x in current if (x.domain_id, x.user_id) == (e.domain_id, e.user_id))
            if n_item < min_item or n_user < min_user:
                current = [x for x in current if x is not e]
                changed = True
    return current


def test_filter_matches_bruteforce_oracle(rng):
    events = [
        _ev(int(rng.integers(0, 40)), int(rng.integers(1, 30)), int(rng.integers(0, 2)), t)
        for t in range(500)
    ]
    assert filter_sparse(events, 6, 5) == _oracle_filter(events, 6, 5)


def test_split_ratio_and_partition():
    events = [_ev(u, 1) for u in range(10)]
    split = split_users(events, 0)
    assert (len(split.train[0]), len(split.val[0]), len(split.test[0])) == (8, 1, 1)
    assert sorted(split.train[0] + split.val[0] + split.test[0]) == list(range(10))
    assert split_users(events, 0) == split


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 80), st.integers(0, 10**6))
def test_split_is_partition(n, seed):
    split = split_users([_ev(u, 1) for u in range(n)], seed)
    parts = [set(split.train[0]), set(split.val[0]), set(split.test[0])]
    assert set().union(*parts) == set(range(n))
    assert sum(len(p) for p in parts) == n


def test_ku_worked_count():
    pool = 27519 + 107984 - 2 * 16377
    assert ku_retained_count(pool, 0.25, 0.8) == 20549


def _ku_split(n_users=40, overlap=10):
    train = {0: list(range(n_users)), 1: list(range(overlap)) + list(range(100, 100 + n_users - overlap))}
    return UserSplit(train, {0: [], 1: []}, {0: [], 1: []}), set(range(overlap))


def test_ku_identity_at_one():
    split, overlap = _ku_split()
    out, unseen = apply_ku(split, overlap, 1.0, seed=0)
    assert out.train == split.train
    assert all(not u for u in unseen.values())


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 1.0), st.integers(0, 1000))
def test_ku_never_drops_overlapping(k_u, seed):
    split, overlap = _ku_split()
    out, unseen = apply_ku(split, overlap, k_u, seed)
    for z in (0, 1):
        assert overlap & set(split.train[z]) <= set(out.train[z])
        assert not overlap & set(unseen[z])
        assert set(out.train[z]) | set(unseen[z]) == set(split.train[z])


def test_pad_truncate_examples():
    assert pad_truncate([5, 7, 9], 5) == [0, 0, 5, 7, 9]
    assert pad_truncate(range(1, 9), 5) == [4, 5, 6, 7, 8]
    assert pad_truncate([], 3) == [0, 0, 0]


def test_next_item_targets():
    assert next_item_targets([2, 5, 9]) == [([2], 5), ([2, 5], 9)]


def test_batches_negatives_and_determinism(small_data):
    a = make_batches(small_data, 16, 3, seed=5)
    b = make_batches(small_data, 16, 3, seed=5)
    for x, y in itertools.islice(zip(a, b), 4):
        np.testing.assert_array_equal(x.negatives, y.negatives)
        np.testing.assert_array_equal(x.item_ids, y.item_ids)
        for row in range(len(x)):
            history = set(small_data.sequences[(int(x.domain_ids[row]), int(x.user_ids[row]))])
            assert int(x.positives[row]) not in x.negatives[row]
            assert not history & set(x.negatives[row].tolist())
        assert np.all(np.diff(x.domain_ids) >= 0)


def test_full_space_unseen_users_unobserved(small_data, rng):
    unseen = {(z, u) for z, us in small_data.unseen.items() for u in us}
    for _ in range(3):
        pairs = datagen.sample_full_space(small_data, 20, 2, rng)
        users = pairs.context.user_ids[pairs.rows]
        doms = pairs.context.domain_ids[pairs.rows]
        for z, u, o in zip(doms, users, pairs.observed):
            if (int(z), int(u)) in unseen:
                assert o == 0.0
        assert np.all(np.diff(pairs.domains) >= 0)


def test_dump_scenario_layout(tmp_path, small_scenario):
    paths = datagen.dump_scenario(small_scenario, tmp_path)
    names = sorted(p.name for p in paths)
    assert names == ["observed.csv", "propensity.csv", "ratings.csv", "sequences.csv"]
    assert (tmp_path / "ratings.csv").read_text().splitlines()[0] == "domain,user,item,value"
