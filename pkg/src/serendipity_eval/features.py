"""Item/user features shared by the proxy metrics and the prompt builder.

Items are represented by their audience: the set of users who interacted
with them.  When a case is passed, the case user's own interactions at or
after the cutoff are hidden from the audience sets so that a scorer never
sees the feedback it is asked to predict.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .data_model import Dataset, EvaluationCase, UserRecord

WEEK_SECONDS = 7 * 24 * 3600
KMEANS_MAX_ITER = 50
NO_RECENT_ACTIVITY = "no recent activity"
NO_HISTORY = "no history"


class EmptyHistoryError(ValueError):
    pass


class _AudienceIndex:
    def __init__(self, dataset: Dataset):
        self.user_order = {u: i for i, u in enumerate(sorted(dataset.users))}
        # item -> {user -> earliest interaction timestamp}
        first_seen: dict[str, dict[str, int]] = {i: {} for i in dataset.items}
        for user in dataset.users.values():
            for it in user.history:
                seen = first_seen[it.item_id]
                if user.user_id not in seen or it.timestamp < seen[user.user_id]:
                    seen[user.user_id] = it.timestamp
        self.first_seen = first_seen
        self.audience = {i: frozenset(s) for i, s in first_seen.items()}


def _index(dataset: Dataset) -> _AudienceIndex:
    idx = dataset.__dict__.get("_audience_index")
    if idx is None:
        idx = _AudienceIndex(dataset)
        object.__setattr__(dataset, "_audience_index", idx)
    return idx


def users_of(item_id: str, dataset: Dataset, case: EvaluationCase | None = None) -> frozenset[str]:
    """Users who interacted with ``item_id``, minus the case user if that
    user only reached the item at or after the cutoff."""
    idx = _index(dataset)
    aud = idx.audience[item_id]
    if case is not None and case.user_id in aud:
        if idx.first_seen[item_id][case.user_id] >= case.cutoff_timestamp:
            return aud - {case.user_id}
    return aud


@dataclass(frozen=True)
class ItemVector:
    item_id: str
    components: frozenset[str]

    def dense(self, dataset: Dataset) -> np.ndarray:
        order = _index(dataset).user_order
        v = np.zeros(len(order))
        for u in self.components:
            v[order[u]] = 1.0
        return v


def item_vector(item_id: str, dataset: Dataset, case: EvaluationCase | None = None) -> ItemVector:
    return ItemVector(item_id, users_of(item_id, dataset, case))


@dataclass(frozen=True)
class InterestClusters:
    centroids: tuple[np.ndarray, ...]

    @property
    def k(self) -> int:
        return len(self.centroids)


@dataclass(frozen=True)
class UserProfile:
    kind: str  # "short_term" | "long_term"
    text: str
    source_window: tuple[int, int]


def jaccard_distance(a: set | frozenset, b: set | frozenset) -> float:
    if not a and not b:
        return 0.0
    return 1.0 - len(a & b) / len(a | b)


def min_history_jaccard(
    target: str,
    history: Sequence[str],
    dataset: Dataset,
    case: EvaluationCase | None = None,
) -> float:
    if not history:
        raise EmptyHistoryError("no history")
    t = users_of(target, dataset, case)
    return min(jaccard_distance(t, users_of(h, dataset, case)) for h in history)


def relevance(
    target: str,
    history: Sequence[str],
    dataset: Dataset,
    case: EvaluationCase | None = None,
) -> float:
    """Mean audience overlap (1 - Jaccard distance) between target and history."""
    if not history:
        raise EmptyHistoryError("no history")
    t = users_of(target, dataset, case)
    sims = [1.0 - jaccard_distance(t, users_of(h, dataset, case)) for h in history]
    return sum(sims) / len(sims)


def popularity(item_id: str, dataset: Dataset, case: EvaluationCase | None = None) -> float:
    """Movie domain: share of all users with an interaction on the item.
    E-commerce: the item's binary hot flag (0 when absent)."""
    if dataset.domain == "movie":
        n_users = len(dataset.users)
        return len(users_of(item_id, dataset, case)) / n_users if n_users else 0.0
    raw = dataset.items[item_id].popularity_raw
    return 1.0 if raw else 0.0


def _kmeans(points: np.ndarray, k: int, seed: int) -> np.ndarray:
    n = len(points)
    rng = random.Random(seed)
    chosen = [rng.randrange(n)]
    d2 = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    while len(chosen) < k:
        far = int(np.argmax(d2))
        if d2[far] == 0.0:
            break  # every remaining point coincides with a centroid
        chosen.append(far)
        d2 = np.minimum(d2, ((points - points[far]) ** 2).sum(axis=1))
    centroids = points[chosen].copy()
    labels = None
    for _ in range(KMEANS_MAX_ITER):
        dist = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = dist.argmin(axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(len(centroids)):
            members = points[labels == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
    # collapse duplicate centroids
    uniq: list[np.ndarray] = []
    for c in centroids:
        if not any(np.array_equal(c, u) for u in uniq):
            uniq.append(c)
    return np.array(uniq)


def interest_clusters(
    history: Sequence[str],
    dataset: Dataset,
    k: int | None = None,
    seed: int = 0,
    case: EvaluationCase | None = None,
) -> InterestClusters:
    """Seeded k-means (farthest-point init, 50-iteration cap) over the
    audience vectors of the distinct history items."""
    if not history:
        raise EmptyHistoryError("no history")
    distinct = list(dict.fromkeys(history))
    if k is None:
        k = min(5, len(distinct))
    k = max(1, min(k, len(distinct)))
    points = np.array([item_vector(h, dataset, case).dense(dataset) for h in distinct])
    return InterestClusters(tuple(_kmeans(points, k, seed)))


def unexpectedness(
    target: str,
    clusters: InterestClusters,
    dataset: Dataset,
    case: EvaluationCase | None = None,
) -> float:
    """Distance to the nearest interest centroid, squashed by d / (1 + d)."""
    if not clusters.centroids:
        raise ValueError("clusters must be non-empty")
    v = item_vector(target, dataset, case).dense(dataset)
    d = min(float(np.sqrt(((v - c) ** 2).sum())) for c in clusters.centroids)
    return d / (1.0 + d)


def build_short_term_profile(
    user: UserRecord,
    cutoff: int,
    window_weeks: int,
    dataset: Dataset,
    max_titles: int = 5,
) -> UserProfile:
    if window_weeks not in (2, 3, 4):
        raise ValueError("window_weeks must be 2, 3 or 4")
    start = cutoff - window_weeks * WEEK_SECONDS
    recent = [it for it in user.history if start <= it.timestamp < cutoff]
    if not recent:
        return UserProfile("short_term", NO_RECENT_ACTIVITY, (start, cutoff))
    counts = Counter(g for it in recent for g in dataset.items[it.item_id].genres)
    genres = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    titles = [dataset.items[it.item_id].title for it in reversed(recent)]
    titles = list(dict.fromkeys(titles))[:max_titles]
    text = (
        f"In the past {window_weeks} weeks you interacted with {len(recent)} items. "
        + (
            "Genres, most frequent first: "
            + ", ".join(f"{g} ({n})" for g, n in genres)
            + ". "
            if genres
            else ""
        )
        + "Most recent items: "
        + ", ".join(titles)
        + "."
    )
    return UserProfile("short_term", text, (start, cutoff))


LONG_TERM_SUMMARY_PROMPT = (
    "Below is the complete interaction history of a user, sorted from oldest to newest. "
    "Summarize the user's long-term interests and preferences in at most three sentences. "
    "Describe the user in the second person.\n"
    "Interaction history: {history}\n"
    "Summary:"
)


def build_long_term_profile(
    user: UserRecord,
    cutoff: int,
    dataset: Dataset,
    summarizer: Callable[[str], str],
) -> UserProfile:
    """Summarise the full pre-cutoff history with an LLM.

    ``summarizer`` maps a prompt to a reply; caching is the summarizer's
    business (a ``BoundModel`` from ``llm_client`` caches on disk).
    """
    past = [it for it in user.history if it.timestamp < cutoff]
    start = past[0].timestamp if past else cutoff
    if not past:
        return UserProfile("long_term", NO_HISTORY, (start, cutoff))
    entries = []
    for it in past:
        item = dataset.items[it.item_id]
        genres = "/".join(sorted(item.genres))
        entries.append(f"{item.title} ({genres})" if genres else item.title)
    prompt = LONG_TERM_SUMMARY_PROMPT.format(history=", ".join(entries))
    return UserProfile("long_term", summarizer(prompt).strip(), (start, cutoff))
