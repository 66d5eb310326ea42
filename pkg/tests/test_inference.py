import random

import pytest

from cachelab import Hierarchy, load_profile
from cachelab.config import DuelingConfig
from cachelab.inference import (ConflictingSet, EvictionSet, PoolExhausted, Prober,
                                build_eviction_set, burst_misses, detect_evicted, evicts,
                                get_conflicting_set, index_pool, infer_policy,
                                initialize_set, locate_leader_sets, oracle_same_set,
                                oracle_set_rng, slice_classes, translate)
from cachelab.inference import test_policy as score_policy
from cachelab.models import make_model


@pytest.fixture(scope="module")
def i5():
    return load_profile("i5-7600K")


@pytest.fixture(scope="module")
def i7():
    return load_profile("i7-4790")


def test_prober_timings(i5):
    h = Hierarchy(i5)
    pr = Prober(h)
    a = index_pool(h, 3, 1)[0]
    assert pr.read(a) > pr.mem_threshold
    assert pr.read(a) < pr.ll_threshold
    pr.flush(a)
    assert pr.read(a) > pr.mem_threshold


def test_prober_jitter_bounded(i5):
    pr = Prober(Hierarchy(i5), jitter=15, seed=1)
    a = index_pool(pr.h, 3, 1)[0]
    pr.read(a)
    ts = [pr.read(a) for _ in range(200)]
    assert min(ts) >= 1 and max(ts) <= i5.l1.latency_cycles + 15
    assert len(set(ts)) > 1


@pytest.mark.parametrize("name", ["i5-7600K", "i7-4790", "i3-5010U"])
def test_build_eviction_set_black_box(name):
    p = load_profile(name)
    h = Hierarchy(p, seed=2)
    pr = Prober(h, seed=2)
    pool = index_pool(h, 77, 4 * p.ways * p.llc.slice_count + 1)
    ev = build_eviction_set(pool, pr, p.ways)
    assert len(ev) == p.ways and ev[0] == pool[0]
    assert oracle_same_set(h, ev)
    assert evicts(pr, ev[0], ev[1:] + (get_conflicting_set(ev, pool, pr)[0],))


def test_eviction_set_pool_too_small(i7):
    h = Hierarchy(i7)
    pr = Prober(h)
    with pytest.raises(PoolExhausted):
        build_eviction_set(index_pool(h, 5, 10), pr, i7.ways)
    with pytest.raises(PoolExhausted):
        build_eviction_set(index_pool(h, 5, 20), pr, i7.ways)


def test_conflicting_set_is_disjoint_and_congruent(i7):
    h = Hierarchy(i7, seed=4)
    pr = Prober(h, seed=4)
    w = i7.ways
    pool = index_pool(h, 9, 4 * w * 4 + 1)
    ev = build_eviction_set(pool, pr, w)
    cs = get_conflicting_set(ev, pool, pr)
    assert isinstance(cs, ConflictingSet) and len(cs) == w
    assert not set(cs) & set(ev)
    assert oracle_same_set(h, list(ev) + list(cs))


def test_conflicting_set_exhaustion(i5):
    h = Hierarchy(i5)
    pr = Prober(h)
    pool = index_pool(h, 9, 2 * i5.ways)
    ev = EvictionSet(tuple(pool[:i5.ways]))
    with pytest.raises(PoolExhausted):
        get_conflicting_set(ev, pool[i5.ways:-1], pr)


def test_translate_keeps_slice(i7):
    h = Hierarchy(i7)
    for a in index_pool(h, 3, 40):
        b = translate(a, 700, h)
        assert h.locate(b) == (700, h.locate(a)[1])


def test_detect_evicted_finds_the_one_victim(i5):
    h = Hierarchy(i5)
    pr = Prober(h)
    w = i5.ways
    pool = index_pool(h, 12, 2 * w)
    ev, cs = pool[:w], pool[w:]
    initialize_set(pr, ev, cs)
    pr.read(cs[0])
    pr.flush(cs[0])
    # quad-age mode 1 after an ordered fill: the leftmost line goes first
    assert detect_evicted(pr, ev) == [ev[0]]


def test_initialize_set_gives_canonical_ages(i5):
    h = Hierarchy(i5)
    pr = Prober(h)
    pool = index_pool(h, 12, 2 * i5.ways)
    initialize_set(pr, pool[:i5.ways], pool[i5.ways:])
    s = h.llc_set(12)
    assert s.lines == [a >> 6 for a in pool[:i5.ways]]
    assert s.ctl == [2] * i5.ways


@pytest.mark.parametrize("policy", ["lru", "quadage-mode1", "quadage-mode2", "srrip", "random"])
def test_matching_model_scores_perfectly(i5, policy):
    prof = i5.replace(llc_policy=policy)
    h = Hierarchy(prof, seed=1)
    w = prof.ways
    pool = index_pool(h, 37, 2 * w)
    model = make_model(policy, w, rng=oracle_set_rng(h, 37))
    sc = score_policy(EvictionSet(tuple(pool[:w])), ConflictingSet(tuple(pool[w:])), model,
                      Prober(h), trials=200, seed=3)
    assert sc.accuracy == 1.0 and sc.valid == 200 and sc.discarded == 0


def test_wrong_model_scores_below_one(i5):
    h = Hierarchy(i5, seed=1)
    w = i5.ways
    pool = index_pool(h, 37, 2 * w)
    sc = score_policy(pool[:w], pool[w:], make_model("lru", w), Prober(h), trials=200, seed=3)
    assert sc.accuracy < 1.0


def test_zero_trials_rejected(i5):
    h = Hierarchy(i5)
    with pytest.raises(ValueError):
        score_policy((), (), make_model("lru", 4), Prober(h), trials=0)


def test_infer_policy_ranks_quadage_first(i5):
    scores = infer_policy(Hierarchy(i5, seed=2), trials=150, seed=2,
                          models=["lru", "srrip", "quadage-mode1", "fifo"])
    best = max(scores, key=lambda k: scores[k].accuracy)
    assert best == "quadage-mode1" and scores[best].accuracy == 1.0


def test_burst_separates_modes(i5):
    out = {}
    for mode in (1, 2):
        h = Hierarchy(i5.replace(llc_policy=f"quadage-mode{mode}"))
        pool = index_pool(h, 40, 2 * i5.ways)
        out[mode] = burst_misses(Prober(h), pool[:i5.ways], pool[i5.ways:])
    assert out[1] == i5.ways and out[2] == 1


def _leaders(name, seed):
    p = load_profile(name)
    h = Hierarchy(p, seed=seed)
    pr = Prober(h, seed=seed)
    classes = slice_classes(index_pool(h, 0, 4 * p.ways * p.llc.slice_count), pr, p.ways)
    assert len(classes) == p.llc.slice_count
    rep = locate_leader_sets(pr, classes, p.llc.sets, seed=seed)
    # black-box slice labels are class numbers; name them by the true slice
    true_slice = {k: h.locate(c[0])[1] for k, c in enumerate(classes)}
    found = {(true_slice[sl], m, i) for sl, m, i in rep.leader_set()}
    return p, rep, found


def test_leader_sets_on_fifth_gen():
    p, rep, found = _leaders("i3-5010U", 1)
    assert rep.dueling
    assert rep.regions == {"mode1": [512], "mode2": [768]}
    truth = {(sl, "mode1", i) for sl, x in enumerate(p.dueling.leaders_mode1) for i in x}
    truth |= {(sl, "mode2", i) for sl, x in enumerate(p.dueling.leaders_mode2) for i in x}
    assert found == truth


def test_no_leaders_without_dueling():
    _, rep, found = _leaders("i5-7600K", 1)
    assert not rep.dueling and found == set()


def test_slice_classes_need_enough_lines(i7):
    h = Hierarchy(i7)
    pr = Prober(h)
    with pytest.raises(Exception):
        locate_leader_sets(pr, [index_pool(h, 0, 10)], i7.llc.sets)
