"""Shared fixtures and independent reference implementations.

The reference routines here deliberately use naive scalar loops (different
code paths from the library's vectorized versions) so that agreement between
the two is meaningful evidence rather than a tautology.
"""

import itertools
import math

import numpy as np
import pytest

from osborn.data_io import LabelVector, ModelRecord, PoolManifest, PredictionVector


# ---------------------------------------------------------------------------
# reference implementations (scalar loops, no shared code with the library)
# ---------------------------------------------------------------------------


def cond_entropy_rows_given_cols(table):
    """H(row | col) of a joint mass table, via per-column conditionals."""
    P = np.asarray(table, dtype=np.float64)
    total = 0.0
    for b in range(P.shape[1]):
        col = 0.0
        for a in range(P.shape[0]):
            col += P[a, b]
        if col <= 0:
            continue
        for a in range(P.shape[0]):
            q = P[a, b] / col
            if q > 0:
                total -= P[a, b] * math.log(q)
    return total


def joint_table_loop(plan, src_labels, tgt_labels, cs, ct):
    """Accumulate plan mass onto label pairs one cell at a time."""
    out = np.zeros((cs, ct))
    for i in range(plan.shape[0]):
        for j in range(plan.shape[1]):
            out[src_labels[i], tgt_labels[j]] += plan[i, j]
    return out


def pearson_loop(xs, ys):
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    sxy = sxx = syy = 0.0
    for i in range(n):
        sxy += (xs[i] - mx) * (ys[i] - my)
        sxx += (xs[i] - mx) ** 2
        syy += (ys[i] - my) ** 2
    return sxy / math.sqrt(sxx * syy)


def kendall_tau_b_loop(xs, ys):
    n = len(xs)
    conc = disc = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = xs[i] - xs[j]
            dy = ys[i] - ys[j]
            if dx != 0 and dy != 0:
                if (dx > 0) == (dy > 0):
                    conc += 1
                else:
                    disc += 1
    n0 = n * (n - 1) // 2
    denom = math.sqrt((n0 - count_tie_pairs(xs)) * (n0 - count_tie_pairs(ys)))
    return (conc - disc) / denom


def count_tie_pairs(vals):
    n = len(vals)
    ties = 0
    for i in range(n):
        for j in range(i + 1, n):
            if vals[i] == vals[j]:
                ties += 1
    return ties


def weighted_kendall_loop(xs, ys):
    """Top-weighted Kendall statistic: items ranked by ys descending with
    average ranks for ties; pair weight 1/(rank_i+1) + 1/(rank_j+1)."""
    n = len(xs)
    order = sorted(range(n), key=lambda i: -ys[i])
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and ys[order[j + 1]] == ys[order[i]]:
            j += 1
        avg = (i + j) / 2.0
        for t in range(i, j + 1):
            ranks[order[t]] = avg
        i = j + 1
    w = [1.0 / (r + 1.0) for r in ranks]
    num = den = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            pw = w[i] + w[j]
            sx = int(xs[i] > xs[j]) - int(xs[i] < xs[j])
            sy = int(ys[i] > ys[j]) - int(ys[i] < ys[j])
            num += pw * sx * sy
            den += pw
    return num / den


def majority_vote_loop(pred_lists, truth):
    """Per-sample vote counting with smallest-class tie break."""
    n = len(truth)
    hits = 0
    for i in range(n):
        counts = {}
        for preds in pred_lists:
            counts[preds[i]] = counts.get(preds[i], 0) + 1
        best = min(c for c in counts if counts[c] == max(counts.values()))
        hits += int(best == truth[i])
    return hits / n


def assignment_cost_loop(C):
    """Minimum-cost perfect assignment by brute force (small square C)."""
    n = C.shape[0]
    best = math.inf
    for perm in itertools.permutations(range(n)):
        cost = sum(C[i, perm[i]] for i in range(n))
        best = min(best, cost)
    return best


# ---------------------------------------------------------------------------
# small pool fixtures
# ---------------------------------------------------------------------------


def make_record(mid, src_feats, src_labels, cs, tgt_feats, preds, cp):
    return ModelRecord(
        model_id=mid,
        source_features=np.asarray(src_feats, dtype=np.float64),
        source_labels=LabelVector(np.asarray(src_labels), cs),
        target_features=np.asarray(tgt_feats, dtype=np.float64),
        target_predictions=PredictionVector(np.asarray(preds), cp),
    )


@pytest.fixture
def tiny_pool():
    """Two models over a 4-sample target set, small enough to hand-check."""
    rng = np.random.default_rng(0)
    tgt_labels = LabelVector(np.array([0, 1, 0, 1]), 2)
    t_feats = rng.normal(size=(4, 2))
    rec_a = make_record(
        "a", rng.normal(size=(4, 2)), [0, 1, 0, 1], 2,
        t_feats + 0.1, [0, 1, 0, 1], 2,
    )
    rec_b = make_record(
        "b", rng.normal(size=(4, 2)), [1, 0, 1, 0], 2,
        t_feats - 0.1, [1, 1, 0, 1], 2,
    )
    return PoolManifest(models=(rec_a, rec_b), target_labels=tgt_labels)
