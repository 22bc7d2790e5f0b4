import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import linalg, stats

from cannings_lab.coalescent import (CEMETERY, CoalescentConfig, ImmigrationEmigration, LabelledPartition,
                                     absorption_mc, absorption_probs_exact, coalesce_blocks, pair_hazard_mc,
                                     reshuffle_block, simulate, simulate_many)
from cannings_lab.families import CoefficientFamily as CF
from cannings_lab.hiergeo import HierGeometry, mean_field
from cannings_lab.lambda_measure import LambdaMeasure, coalescence_rate
from cannings_lab.renorm import hazard_closed_form

ZERO_ONE = ImmigrationEmigration()


def _within(est, target, se, k=3.0):
    return abs(est - target) <= k * se


def _chi2_same(a, b):
    """p-value of a two-sample chi-square test on categorical samples."""
    cats = sorted(set(a) | set(b))
    ca, cb = Counter(a), Counter(b)
    table = np.array([[ca[c] for c in cats], [cb[c] for c in cats]])
    table = table[:, table.sum(axis=0) > 0]
    if table.shape[1] < 2:
        return 1.0
    return stats.chi2_contingency(table)[1]


# labelled partitions

def test_coalesce_two_at_same_site():
    pi = LabelledPartition((({1}, "a"), ({2}, "a")))
    out = coalesce_blocks(pi, [0, 1], "a")
    assert out.families == ((frozenset({1, 2}), "a"),)


def test_coalesce_hand_example():
    pi = LabelledPartition((({1}, "a"), ({2}, "b"), ({3}, "a")))
    out = coalesce_blocks(pi, [0, 2], "c")
    assert out.families == ((frozenset({1, 3}), "c"), (frozenset({2}), "b"))


def test_coalesce_single_index_relabels():
    pi = LabelledPartition((({1, 4}, 0), ({2}, 1), ({3}, 1)))
    out = coalesce_blocks(pi, [1], 7)
    assert out.blocks == pi.blocks
    assert out.labels == [0, 7, 1]
    assert coalesce_blocks(pi, [], 5) is pi
    with pytest.raises(IndexError):
        coalesce_blocks(pi, [3], 0)


def test_partition_rejects_overlap_and_orders():
    with pytest.raises(ValueError):
        LabelledPartition((({1, 2}, 0), ({2}, 0)))
    pi = LabelledPartition((({3}, 0), ({1, 5}, 1), ({2}, 2)))
    assert [min(b) for b in pi.blocks] == [1, 2, 3]


def test_reshuffle_examples():
    pi = LabelledPartition((({1}, 0), ({2}, 1), ({3}, 2)))
    assert reshuffle_block(pi, [4, 5], []) == pi
    # k = 0 block is the single site: every target equals the label
    assert reshuffle_block(pi, [1], [1]) == pi
    out = reshuffle_block(pi, [0, 1], [1, 0])
    assert out.labels == [1, 0, 2]
    with pytest.raises(ValueError, match="target outside block"):
        reshuffle_block(pi, [0, 1], [1, 2])


@given(st.lists(st.integers(0, 3), min_size=2, max_size=7), st.data())
def test_coalesce_keeps_a_partition(labels, data):
    pi = LabelledPartition.singletons(len(labels), labels)
    J = data.draw(st.sets(st.integers(0, len(labels) - 1), min_size=1))
    out = coalesce_blocks(pi, J, 9)
    assert out.members == set(range(1, len(labels) + 1))
    assert len(out) == len(pi) - len(J) + 1
    assert sum(len(b) for b in out.blocks) == len(labels)


# simulation

def test_config_guards():
    with pytest.raises(ValueError, match="infinite"):
        CoalescentConfig(HierGeometry(2, 2), [1.0, 1.0], (LambdaMeasure(), LambdaMeasure.beta(1.0, 1.0)))
    with pytest.raises(ValueError):
        CoalescentConfig(HierGeometry(2, 2), [1.0, 1.0], n=0)


def test_single_lineage_never_coalesces():
    cfg = CoalescentConfig(HierGeometry(2, 3), [1.0, 1.0, 1.0], (LambdaMeasure.point(0.5),), n=1)
    res = simulate(cfg, LabelledPartition.singletons(1), 5.0, record=True, rng=1)
    assert all(ev.block_count == 1 for ev in res.trajectory)
    assert len(res.trajectory) > 0


def test_block_count_nonincreasing_and_labels_valid():
    geom = HierGeometry(3, 2)
    cfg = CoalescentConfig(geom, [1.0, 0.5], (LambdaMeasure(0.3, ((0.4, 1.0),)), LambdaMeasure.point(0.6, 2.0)), n=8)
    pi0 = LabelledPartition.singletons(8, [0, 0, 1, 2, 3, 4, 4, 8])
    for res in simulate_many(cfg, pi0, 3.0, reps=40, record=True, rng=2):
        counts = [8] + [ev.block_count for ev in res.trajectory]
        assert all(b >= a for a, b in zip(counts[1:], counts[:-1]))
        assert all(len(lab) == 2 and all(0 <= d < 3 for d in lab) for lab in res.final.labels)
        assert res.final.members == set(range(1, 9))


def test_first_event_pair_vs_emigration():
    # {0,*}, Kingman pair rate 2d: coalescence first with probability 2d/(2d+2c)
    d, c = 0.6, 0.9
    cfg = CoalescentConfig(ZERO_ONE, c, (LambdaMeasure(d),), n=2)
    reps = 20000
    hits = sum(res.trajectory[0].kind == "kingman-pair"
               for res in simulate_many(cfg, LabelledPartition.singletons(2), math.inf, reps, record=True, rng=3))
    p = 2 * d / (2 * d + 2 * c)
    assert _within(hits / reps, p, math.sqrt(p * (1 - p) / reps))


def test_local_three_block_transitions():
    # one site, Lambda = delta_0.5, b = 3: given a merger, pair vs triple with weights 3 l_{3,2} : l_{3,3}
    lam = LambdaMeasure.point(0.5)
    l32, l33 = coalescence_rate(lam, 3, 2), coalescence_rate(lam, 3, 3)
    p_triple = l33 / (3 * l32 + l33)
    cfg = CoalescentConfig(ZERO_ONE, 1e-9, (lam,), n=3)
    first = Counter()
    for res in simulate_many(cfg, LabelledPartition.singletons(3), math.inf, 20000, record=True, rng=4):
        ev = res.trajectory[0]
        assert ev.kind == "level0-coalescence"
        first[ev.detail["merged"]] += 1
    n = sum(first.values())
    assert _within(first[3] / n, p_triple, math.sqrt(p_triple * (1 - p_triple) / n))


def test_reshuffle_without_coalescence_frequency():
    # two families in one 1-block of G_{2,1}, no migration, Lambda_1 = delta_0.5:
    # a block event fails to coalesce with probability 1 - r^2 = 0.75
    cfg = CoalescentConfig(mean_field(2), [0.0], (LambdaMeasure(), LambdaMeasure.point(0.5)), n=2)
    reps = 8000
    miss = 0
    # a lone family keeps being reshuffled, so stop early; the first event comes at rate 2
    seen = 0
    for res in simulate_many(cfg, LabelledPartition.singletons(2, [0, 1]), 3.0, reps, record=True, rng=5):
        if not res.trajectory:
            continue
        seen += 1
        ev = res.trajectory[0]
        assert ev.kind == "block-event" and ev.level == 1
        assert len(ev.detail["targets"]) == (2 if not ev.detail["coalesced"] else 1)
        miss += not ev.detail["coalesced"]
    assert _within(miss / seen, 0.75, math.sqrt(0.75 * 0.25 / seen))


def test_block_event_rate():
    # rate of level-1 block events is N^-1 lambda*_1 = 0.5 * 4 = 2
    cfg = CoalescentConfig(mean_field(2), [0.0], (LambdaMeasure(), LambdaMeasure.point(0.5)), n=1)
    res = simulate(cfg, LabelledPartition.singletons(1), 2000.0, record=True, rng=6)
    n = len(res.trajectory)
    assert _within(n / 2000.0, 2.0, math.sqrt(2.0 / 2000.0))


def test_exchangeability():
    geom = HierGeometry(2, 2)
    cfg = CoalescentConfig(geom, [1.0, 0.5], (LambdaMeasure.point(0.5), LambdaMeasure.point(0.5)), n=3)
    t, reps = 0.8, 6000

    def together(labels, i, j, seed):
        out = []
        for res in simulate_many(cfg, LabelledPartition.singletons(3, labels), t, reps, rng=seed):
            out.append(any({i, j} <= b for b in res.final.blocks))
        return out

    a = together([0, 0, 1], 1, 2, 7)
    b = together([1, 0, 0], 3, 2, 8)
    assert _chi2_same(a, b) > 0.01


def test_projectivity():
    geom = HierGeometry(2, 2)
    lams = (LambdaMeasure(0.2, ((0.5, 1.0),)), LambdaMeasure.point(0.7))
    t, reps = 0.6, 6000
    big = CoalescentConfig(geom, [1.0, 1.0], lams, n=4)
    small = CoalescentConfig(geom, [1.0, 1.0], lams, n=3)
    a = [len(res.final.restrict({1, 2, 3}))
         for res in simulate_many(big, LabelledPartition.singletons(4, [0, 0, 1, 3]), t, reps, rng=9)]
    b = [len(res.final) for res in simulate_many(small, LabelledPartition.singletons(3, [0, 0, 1]), t, reps, rng=10)]
    assert _chi2_same(a, b) > 0.01


# absorption on {0,*}

def _absorption_oracle(n, c, lam, d):
    """Independent oracle: linear solve of the (at 0, at *) chain over all states."""
    states = [(a, m) for a in range(n + 1) for m in range(n + 1) if a + m <= n]
    ix = {s: i for i, s in enumerate(states)}
    Q = np.zeros((len(states), len(states)))
    for (a, m), i in ix.items():
        if a == 0:
            continue
        Q[i, ix[(a - 1, m + 1)]] += a * c
        for size in range(2, a + 1):
            rate = math.comb(a, size) * coalescence_rate(lam, a, size) + (2 * d * math.comb(a, 2) if size == 2 else 0)
            Q[i, ix[(a - size + 1, m)]] += rate
    Q -= np.diag(Q.sum(axis=1))
    trans = [i for (a, m), i in ix.items() if a > 0]
    absb = [i for (a, m), i in ix.items() if a == 0]
    B = np.linalg.solve(-Q[np.ix_(trans, trans)], Q[np.ix_(trans, absb)])
    row = B[trans.index(ix[(n, 0)])]
    out = np.zeros(n)
    for p, j in zip(row, absb):
        out[states[j][1] - 1] += p
    return out


def test_absorption_small_cases():
    assert np.allclose(absorption_probs_exact(1, 1.0, LambdaMeasure.point(0.5)), [1.0])
    lam = LambdaMeasure(0.3, ((0.5, 0.8),))
    P = absorption_probs_exact(2, 1.3, lam)
    pr = lam.lam + 2 * lam.kingman
    assert P[0] == pytest.approx(pr / (pr + 2.6), rel=1e-14)
    assert P[1] == pytest.approx(2.6 / (pr + 2.6), rel=1e-14)


@pytest.mark.parametrize("n", [3, 4, 5, 6])
@pytest.mark.parametrize("lam", [LambdaMeasure.point(0.5), LambdaMeasure(0.2, ((0.3, 0.5), (0.9, 1.2))),
                                 LambdaMeasure.beta(0.5, 1.5)])
def test_absorption_matches_linear_solve(n, lam):
    P = absorption_probs_exact(n, 0.8, lam)
    assert np.allclose(P, _absorption_oracle(n, 0.8, lam, lam.kingman), atol=1e-12)
    assert abs(P.sum() - 1) < 1e-12


@given(st.integers(1, 6), st.floats(0.05, 5.0), st.floats(0.0, 2.0), st.floats(0.05, 0.95), st.floats(0.0, 3.0))
def test_absorption_is_a_distribution(n, c, d, r, m):
    P = absorption_probs_exact(n, c, LambdaMeasure(d, ((r, m),)) if m > 0 else LambdaMeasure(d))
    assert np.all(P >= -1e-15) and abs(P.sum() - 1) < 1e-12


def test_absorption_cap():
    with pytest.raises(ValueError, match="Monte Carlo"):
        absorption_probs_exact(7, 1.0, LambdaMeasure.point(0.5))


def test_absorption_n3_against_simulate():
    lam = LambdaMeasure.point(0.5)
    P = absorption_probs_exact(3, 1.0, lam, d=0.0)
    cfg = CoalescentConfig(ZERO_ONE, 1.0, (lam,), n=3)
    reps = 40000
    k = Counter(len(res.final) for res in simulate_many(cfg, LabelledPartition.singletons(3), math.inf, reps, rng=11))
    for j in (1, 2, 3):
        p = P[j - 1]
        assert _within(k[j] / reps, p, math.sqrt(p * (1 - p) / reps))


def test_absorption_mc_vectorised():
    lam = LambdaMeasure(0.1, ((0.6, 1.0),))
    P = absorption_probs_exact(5, 0.7, lam)
    m = absorption_mc(5, 0.7, lam, 50000, seed=12)
    freq = np.bincount(m, minlength=6)[1:] / m.size
    se = np.sqrt(P * (1 - P) / m.size)
    assert np.all(np.abs(freq - P) <= 4 * se + 1e-12)


def test_all_reach_cemetery():
    cfg = CoalescentConfig(ZERO_ONE, 2.0, (LambdaMeasure.point(0.3),), n=5)
    res = simulate(cfg, LabelledPartition.singletons(5), math.inf, rng=13)
    assert set(res.final.labels) == {CEMETERY}


# hazard

def test_pair_hazard_zero():
    assert pair_hazard_mc(8, CF.exp(4.0), CF.zero(), reps=100) == (0.0, 0.0)


def test_pair_hazard_matches_closed_form():
    c = CF.exp(4.0)
    lam = CF.explicit([1.0] * 11)
    closed = hazard_closed_form(8, c, lam, 40)
    mean, se = pair_hazard_mc(8, c, lam, reps=20000, seed=14)
    assert _within(mean, closed.first, se)


def test_tracked_hazard_is_the_compensator():
    # for n = 2 the hazard stops at coalescence, so E[H_t] = P(coalesced by t)
    geom = HierGeometry(2, 3)
    lams = (LambdaMeasure.point(0.5, 0.6), LambdaMeasure.point(0.5, 0.3), LambdaMeasure.point(0.5, 0.2))
    cfg = CoalescentConfig(geom, [1.0, 2.0, 4.0], lams, n=2)
    H, hit = [], []
    for res in simulate_many(cfg, LabelledPartition.singletons(2, [0, 3]), 1.5, 10000, track_hazard=True, rng=15):
        H.append(res.hazard)
        hit.append(len(res.final) == 1)
    diff = np.asarray(H) - np.asarray(hit)
    assert abs(diff.mean()) <= 3 * diff.std(ddof=1) / math.sqrt(diff.size)
