"""Ensemble selection over cached pairwise terms.

The objective f(S) = -( sum of member W_D + W_T terms + sum of ordered-pair
cohesion entropies within S ) is monotone in neither direction but its gains
are diminishing: adding v to a superset only picks up extra non-negative pair
terms, which can only lower the gain.  Greedy forward selection therefore
carries the usual (1 - 1/e) guarantee relative to the best cardinality-k
subset whenever the raw (non-negative) terms are used.

All candidate enumeration and tie-breaking is lexicographic on model ids, so
results are reproducible across runs and thread counts.
"""

from __future__ import annotations

import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .data_io import PoolManifest, RankingRecord, TEConfig
from .errors import ValidationError
from .metrics import PairwiseCache, effective_terms

EXHAUSTIVE_BUDGET = 10 ** 6


@dataclass(frozen=True)
class EnsembleCandidate:
    """An ensemble as an ordered tuple of member ids (selection order)."""

    ids: tuple

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        if not ids:
            raise ValidationError("ensemble candidate must be non-empty")
        if len(set(ids)) != len(ids):
            raise ValidationError("ensemble candidate has duplicate ids")
        object.__setattr__(self, "ids", ids)

    @property
    def k(self) -> int:
        return len(self.ids)

    def sorted_ids(self) -> tuple:
        return tuple(sorted(self.ids))


@dataclass(frozen=True)
class SelectionStep:
    chosen_id: str
    gain: float
    f_cumulative: float
    wall_time: float


@dataclass(frozen=True)
class SelectionTrace:
    steps: tuple
    final: EnsembleCandidate


def _resolve_ids(pool, cache: PairwiseCache):
    ids = sorted(cache.model_ids())
    if pool is not None:
        pool_ids = sorted(pool.model_ids())
        if pool_ids != ids:
            raise ValidationError(
                "cache and pool disagree on model ids "
                f"({len(ids)} cached vs {len(pool_ids)} in pool)"
            )
    return ids


def _check_k(k: int, m: int) -> int:
    k = int(k)
    if not (1 <= k <= m):
        raise ValidationError(f"k must lie in [1, {m}], got {k}")
    return k


def _gain(modular, pair, members, v):
    g = -modular[v]
    for m in members:
        g -= pair[(m, v)] + pair[(v, m)]
    return g


def marginal_gain(current, v, cache: PairwiseCache, config: TEConfig) -> float:
    """f(current + v) - f(current) in closed form from cached terms.

    Touches only v's modular term and its pair terms against current members,
    so the cost is O(|current|) instead of re-scoring both sets.
    """
    members = list(current.ids) if isinstance(current, EnsembleCandidate) else \
        [str(i) for i in current]
    v = str(v)
    if v in members:
        raise ValidationError(f"model '{v}' is already in the ensemble")
    known = set(cache.wd)
    for mid in members + [v]:
        if mid not in known:
            raise ValidationError(f"model '{mid}' is not in the cache")
    modular, pair = effective_terms(cache, config)
    return float(_gain(modular, pair, members, v))


def greedy_select(pool, k: int, cache: PairwiseCache,
                  config: TEConfig) -> SelectionTrace:
    """Forward greedy maximization of f under a cardinality budget.

    At every step the candidate with the largest marginal gain is taken;
    ties go to the lexicographically smallest id.  Gains are computed from
    the cached incremental form, so a full run costs O(k * M) pair lookups.
    """
    ids = _resolve_ids(pool, cache)
    k = _check_k(k, len(ids))
    modular, pair = effective_terms(cache, config)
    chosen = []
    remaining = list(ids)
    f_cum = 0.0
    steps = []
    for _ in range(k):
        t0 = time.perf_counter()
        best_id = None
        best_gain = -math.inf
        for v in remaining:
            g = _gain(modular, pair, chosen, v)
            if g > best_gain:
                best_gain = g
                best_id = v
        chosen.append(best_id)
        remaining.remove(best_id)
        f_cum += best_gain
        steps.append(SelectionStep(
            chosen_id=best_id,
            gain=float(best_gain),
            f_cumulative=float(f_cum),
            wall_time=time.perf_counter() - t0,
        ))
    return SelectionTrace(steps=tuple(steps), final=EnsembleCandidate(tuple(chosen)))


def _combo_budget(m: int, k: int):
    if math.comb(m, k) > EXHAUSTIVE_BUDGET:
        raise ValidationError(
            f"exhaustive enumeration of C({m}, {k}) subsets exceeds the "
            f"budget of {EXHAUSTIVE_BUDGET}"
        )


def _f_of(modular, pair, combo):
    val = 0.0
    for mid in combo:
        val -= modular[mid]
    for a, b in itertools.permutations(combo, 2):
        val -= pair[(a, b)]
    return val


def exhaustive_select(pool, k: int, cache: PairwiseCache, config: TEConfig):
    """True argmax of f over all subsets of size k (lexicographic tie-break).

    Returns (candidate, f_value).  Guarded by an enumeration budget; use
    greedy_select beyond it.
    """
    ids = _resolve_ids(pool, cache)
    k = _check_k(k, len(ids))
    _combo_budget(len(ids), k)
    modular, pair = effective_terms(cache, config)
    best_combo = None
    best_f = -math.inf
    for combo in itertools.combinations(ids, k):
        f = _f_of(modular, pair, combo)
        if f > best_f:
            best_f = f
            best_combo = combo
    return EnsembleCandidate(best_combo), float(best_f)


def score_all(pool, k: int, cache: PairwiseCache, config: TEConfig,
              threads: int = 1):
    """Score every size-k subset; rows come back in lexicographic id order.

    Returns a list of (EnsembleCandidate, osborn_value) pairs.  Chunks are
    evaluated in parallel but reassembled in enumeration order, so output is
    independent of the thread count.
    """
    ids = _resolve_ids(pool, cache)
    k = _check_k(k, len(ids))
    _combo_budget(len(ids), k)
    threads = max(1, int(threads))
    modular, pair = effective_terms(cache, config)
    combos = list(itertools.combinations(ids, k))

    def eval_chunk(chunk):
        return [(EnsembleCandidate(c), float(-_f_of(modular, pair, c)))
                for c in chunk]

    if threads == 1 or len(combos) < 64:
        return eval_chunk(combos)
    size = (len(combos) + threads - 1) // threads
    chunks = [combos[i:i + size] for i in range(0, len(combos), size)]
    with ThreadPoolExecutor(max_workers=threads) as pool_exec:
        parts = list(pool_exec.map(eval_chunk, chunks))
    out = []
    for part in parts:
        out.extend(part)
    return out


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def write_selection(trace: SelectionTrace, path):
    from .data_io import format_real
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,chosen_id,gain,f_cumulative\n")
        for i, step in enumerate(trace.steps, start=1):
            fh.write(
                f"{i},{step.chosen_id},{format_real(step.gain)},"
                f"{format_real(step.f_cumulative)}\n"
            )
        fh.write("ensemble," + ";".join(trace.final.ids) + "\n")


def rankings_from_scores(scored) -> list:
    """Convert (candidate, osborn_value) pairs into ranking records with
    alpha = -osborn_value (higher alpha predicts better transfer)."""
    return [RankingRecord(ensemble=cand.sorted_ids(), alpha=-value)
            for cand, value in scored]
