"""Batch-mode query strategies for active learning.

Three per-instance criteria feed the strategies: posterior entropy H
(uncertainty), mean dissimilarity D to the 5 most similar labeled pages
(exploration), and a diversity factor D' that penalizes redundancy with
pages already picked for the current batch. The closed strategy set:

    S1 = H            S4 = D + D'     (greedy)
    S2 = D            S5 = H + D'     (greedy)
    S3 = H + D        S6 = H + D + D' (greedy)
    Random            uniform baseline
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import EmptyPoolError, InsufficientLabelsError, ParameterError
from .llp import LlpModel, predict_many

DEFAULT_BATCH_SIZE = 20
TOP_SIMILAR_LABELED = 5


class Strategy(enum.Enum):
    S1 = "S1"  # uncertainty
    S2 = "S2"  # dissimilarity
    S3 = "S3"  # uncertainty + dissimilarity
    S4 = "S4"  # dissimilarity, diversity-greedy
    S5 = "S5"  # uncertainty, diversity-greedy
    S6 = "S6"  # uncertainty + dissimilarity, diversity-greedy
    RANDOM = "Random"

    @classmethod
    def parse(cls, name: str) -> "Strategy":
        for member in cls:
            if member.value.lower() == name.strip().lower():
                return member
        valid = ", ".join(m.value for m in cls)
        raise ParameterError(f"unknown strategy {name!r}; expected one of: {valid}")


GREEDY_STRATEGIES = frozenset({Strategy.S4, Strategy.S5, Strategy.S6})


@dataclass(frozen=True)
class BatchPick:
    """One selected instance with its score breakdown at pick time."""

    index: int
    h: float
    d: float
    d_prime: float | None
    total: float | None


@dataclass(frozen=True)
class QueryBatch:
    strategy: Strategy
    picks: tuple[BatchPick, ...]

    @property
    def indices(self) -> list[int]:
        return [p.index for p in self.picks]


def uncertainty(model: LlpModel, x: np.ndarray) -> float:
    """Entropy of the class posterior (natural log, 0 log 0 = 0)."""
    return float(posterior_entropy(predict_many(model, np.atleast_2d(x)))[0])


def posterior_entropy(posteriors: np.ndarray) -> np.ndarray:
    p = np.atleast_2d(posteriors)
    terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return -terms.sum(axis=1)


def dissimilarity(u_index: int, labeled_indices: np.ndarray, s: np.ndarray) -> float:
    """Mean (1 - similarity) to the 5 labeled pages most similar to u.

    With fewer than 5 labeled pages the average runs over all of them.
    """
    labeled_indices = np.asarray(labeled_indices, dtype=int)
    if labeled_indices.size == 0:
        raise InsufficientLabelsError("dissimilarity needs at least one labeled instance")
    sims = np.sort(s[u_index, labeled_indices])[::-1]
    top = sims[: min(TOP_SIMILAR_LABELED, sims.size)]
    return float(np.mean(1.0 - top))


def diversity_factor(u_index: int, batch_indices: np.ndarray, s: np.ndarray) -> float:
    """Minimum (1 - similarity) between u and the batch picked so far."""
    batch_indices = np.asarray(batch_indices, dtype=int)
    if batch_indices.size == 0:
        raise ParameterError("diversity_factor requires a nonempty batch")
    return float(np.min(1.0 - s[u_index, batch_indices]))


def _dissimilarity_all(unlabeled: np.ndarray, labeled: np.ndarray, s: np.ndarray) -> np.ndarray:
    sub = s[np.ix_(unlabeled, labeled)]
    k = min(TOP_SIMILAR_LABELED, labeled.size)
    top = -np.sort(-sub, axis=1)[:, :k]
    return np.mean(1.0 - top, axis=1)


def select_batch(
    strategy: Strategy,
    model: LlpModel | None,
    unlabeled_indices: np.ndarray,
    labeled_indices: np.ndarray,
    s: np.ndarray,
    features: np.ndarray,
    batch_size: int = DEFAULT_BATCH_SIZE,
    rng: np.random.Generator | None = None,
) -> QueryBatch:
    """Pick min(batch_size, |U|) distinct unlabeled pages under a strategy.

    Indices address rows of the pool similarity matrix s and the feature
    array. Ranking strategies take the top scores outright; greedy ones
    seed with the best base score and then grow the batch by base + D'
    against the picks so far. Ties always break toward the lowest index.
    """
    u = np.sort(np.asarray(unlabeled_indices, dtype=int))
    l = np.asarray(labeled_indices, dtype=int)
    if u.size == 0:
        raise EmptyPoolError("no unlabeled instances to sample from")
    if batch_size < 1:
        raise ParameterError(f"batch_size must be >= 1, got {batch_size}")
    size = min(batch_size, u.size)

    if strategy is Strategy.RANDOM:
        if rng is None:
            raise ParameterError("Random strategy requires an rng")
        chosen = rng.permutation(u)[:size]
        h_all, d_all = _criteria(model, u, l, s, features)
        pos = {int(idx): i for i, idx in enumerate(u)}
        picks = tuple(
            BatchPick(index=int(i), h=float(h_all[pos[int(i)]]), d=float(d_all[pos[int(i)]]),
                      d_prime=None, total=None)
            for i in chosen
        )
        return QueryBatch(strategy=strategy, picks=picks)

    h_all, d_all = _criteria(model, u, l, s, features)
    base = {
        Strategy.S1: h_all,
        Strategy.S2: d_all,
        Strategy.S3: h_all + d_all,
        Strategy.S4: d_all,
        Strategy.S5: h_all,
        Strategy.S6: h_all + d_all,
    }[strategy]

    if strategy in GREEDY_STRATEGIES:
        return _select_greedy(strategy, u, base, h_all, d_all, s, size)

    order = np.lexsort((u, -base))[:size]
    picks = tuple(
        BatchPick(index=int(u[i]), h=float(h_all[i]), d=float(d_all[i]),
                  d_prime=None, total=float(base[i]))
        for i in order
    )
    return QueryBatch(strategy=strategy, picks=picks)


def _criteria(
    model: LlpModel | None,
    u: np.ndarray,
    l: np.ndarray,
    s: np.ndarray,
    features: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    if model is not None:
        h_all = posterior_entropy(predict_many(model, features[u]))
    else:
        h_all = np.zeros(u.size)
    d_all = (
        _dissimilarity_all(u, l, s) if l.size > 0 else np.zeros(u.size)
    )
    return h_all, d_all


def _select_greedy(
    strategy: Strategy,
    u: np.ndarray,
    base: np.ndarray,
    h_all: np.ndarray,
    d_all: np.ndarray,
    s: np.ndarray,
    size: int,
) -> QueryBatch:
    remaining = list(range(u.size))
    first = int(np.argmax(base))  # first occurrence wins ties (lowest index)
    picks = [
        BatchPick(index=int(u[first]), h=float(h_all[first]), d=float(d_all[first]),
                  d_prime=None, total=float(base[first]))
    ]
    remaining.remove(first)
    batch_rows = [first]
    while len(picks) < size:
        rem = np.array(remaining, dtype=int)
        d_prime = np.min(1.0 - s[np.ix_(u[rem], u[batch_rows])], axis=1)
        totals = base[rem] + d_prime
        best = int(np.argmax(totals))
        row = int(rem[best])
        picks.append(
            BatchPick(index=int(u[row]), h=float(h_all[row]), d=float(d_all[row]),
                      d_prime=float(d_prime[best]), total=float(totals[best]))
        )
        remaining.remove(row)
        batch_rows.append(row)
    return QueryBatch(strategy=strategy, picks=tuple(picks))
