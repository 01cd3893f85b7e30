"""Conventional proxy serendipity metrics (SOG, SNPR, PURS, DESR) and the
min-max mapping of raw metric outputs onto the 1-5 Likert scale."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from . import features as F
from .data_model import Dataset, EvaluationCase, round_half_up, visible_history

DEFAULT_HISTORY_LENGTH = 10
DEFAULT_SNPR_LAMBDA = 0.7


@dataclass(frozen=True)
class SogWeights:
    relevance_w: float = 0.25
    diversity_w: float = 0.25
    dissimilarity_w: float = 0.25
    unpopularity_w: float = 0.25

    def __post_init__(self) -> None:
        ws = (self.relevance_w, self.diversity_w, self.dissimilarity_w, self.unpopularity_w)
        if any(w < 0 or not math.isfinite(w) for w in ws):
            raise ValueError("SOG weights must be finite and >= 0")
        total = sum(ws)
        if total <= 0:
            raise ValueError("SOG weights must not all be zero")
        for name, w in zip(
            ("relevance_w", "diversity_w", "dissimilarity_w", "unpopularity_w"), ws
        ):
            object.__setattr__(self, name, w / total)

    def as_dict(self) -> dict[str, float]:
        return {
            "relevance": self.relevance_w,
            "diversity": self.diversity_w,
            "dissimilarity": self.dissimilarity_w,
            "unpopularity": self.unpopularity_w,
        }


@dataclass(frozen=True)
class RawScoreVector:
    method_id: str
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError(f"{self.method_id}: raw scores must be finite")


def _history_ids(case: EvaluationCase, dataset: Dataset, k: int | None) -> list[str]:
    hist = visible_history(dataset, case, k, exclude_item=case.target_item_id)
    if not hist:
        raise F.EmptyHistoryError(f"case {case.case_id}: empty history")
    return [it.item_id for it in hist]


def sog_components(
    case: EvaluationCase,
    dataset: Dataset,
    batch: Sequence[str] | None = None,
    history_length: int = DEFAULT_HISTORY_LENGTH,
) -> dict[str, float]:
    """The SOG component values; ``diversity`` only when a batch is given."""
    history = _history_ids(case, dataset, history_length)
    target = case.target_item_id
    comps = {
        "relevance": F.relevance(target, history, dataset, case),
        "dissimilarity": F.min_history_jaccard(target, history, dataset, case),
        "unpopularity": 1.0 - F.popularity(target, dataset, case),
    }
    others = [b for b in (batch or ()) if b != target]
    if others:
        t = F.users_of(target, dataset, case)
        comps["diversity"] = sum(
            F.jaccard_distance(t, F.users_of(b, dataset, case)) for b in others
        ) / len(others)
    return comps


def combine_sog(components: dict[str, float], weights: SogWeights) -> float:
    """Convex combination; a missing component's weight is spread
    proportionally over the components that are present."""
    w = {k: v for k, v in weights.as_dict().items() if k in components}
    total = sum(w.values())
    if total <= 0:
        raise ValueError("no weight left on the available SOG components")
    return sum(w[k] / total * components[k] for k in w)


def sog_score(
    case: EvaluationCase,
    dataset: Dataset,
    weights: SogWeights | None = None,
    batch: Sequence[str] | None = None,
    history_length: int = DEFAULT_HISTORY_LENGTH,
) -> float:
    comps = sog_components(case, dataset, batch, history_length)
    return combine_sog(comps, weights or SogWeights())


def snpr_score(
    case: EvaluationCase,
    dataset: Dataset,
    lam: float = DEFAULT_SNPR_LAMBDA,
    history_length: int = DEFAULT_HISTORY_LENGTH,
) -> float:
    """lam * relevance + (1 - lam) * unexpectedness, where unexpectedness is
    the minimum audience Jaccard distance to the history."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    history = _history_ids(case, dataset, history_length)
    rel = F.relevance(case.target_item_id, history, dataset, case)
    unexp = F.min_history_jaccard(case.target_item_id, history, dataset, case)
    return lam * rel + (1.0 - lam) * unexp


def purs_score(
    case: EvaluationCase,
    dataset: Dataset,
    seed: int = 0,
    unexp_factor: float = 1.0,
    k: int | None = None,
    history_length: int = DEFAULT_HISTORY_LENGTH,
) -> float:
    history = _history_ids(case, dataset, history_length)
    r = F.relevance(case.target_item_id, history, dataset, case)
    clusters = F.interest_clusters(history, dataset, k=k, seed=seed, case=case)
    unexp = F.unexpectedness(case.target_item_id, clusters, dataset, case)
    activated = min(max(unexp, 0.0), 1.0)
    return r + activated * unexp_factor


def desr_from_components(acc: float, dif: float) -> float:
    if acc + dif == 0:
        return 0.0
    return acc * dif / (acc + dif)


def desr_components(
    case: EvaluationCase,
    dataset: Dataset,
    short_length: int = DEFAULT_HISTORY_LENGTH,
) -> tuple[float, float]:
    """(acc, dif): acc averages long- and short-window similarity, dif
    averages short-window dissimilarity and unpopularity."""
    long_hist = _history_ids(case, dataset, None)
    short_hist = long_hist[-short_length:]
    target = case.target_item_id
    short_dis = F.min_history_jaccard(target, short_hist, dataset, case)
    long_dis = F.min_history_jaccard(target, long_hist, dataset, case)
    acc = ((1.0 - long_dis) + (1.0 - short_dis)) / 2.0
    dif = (short_dis + (1.0 - F.popularity(target, dataset, case))) / 2.0
    return acc, dif


def desr_score(
    case: EvaluationCase,
    dataset: Dataset,
    short_length: int = DEFAULT_HISTORY_LENGTH,
) -> float:
    return desr_from_components(*desr_components(case, dataset, short_length))


def normalize_to_likert(raw: RawScoreVector | Sequence[float]) -> list[int]:
    """Min-max map a score vector onto {1..5}; a constant vector maps to 3."""
    values = list(raw.values if isinstance(raw, RawScoreVector) else raw)
    if not values:
        raise ValueError("cannot normalize an empty score vector")
    if not all(math.isfinite(v) for v in values):
        raise ValueError("raw scores must be finite")
    lo, hi = min(values), max(values)
    if hi == lo:
        return [3] * len(values)
    # the 9-digit snap keeps ties stable under affine rescaling of the input
    return [round_half_up(round((v - lo) / (hi - lo) * 4 + 1, 9)) for v in values]


METRICS = ("sog", "snpr", "purs", "desr")


def score_cases(metric: str, dataset: Dataset, method_id: str | None = None, **params) -> RawScoreVector:
    """Score every case of ``dataset`` with one proxy metric."""
    metric = metric.lower()
    if metric == "sog":
        weights = params.pop("weights", None)
        if weights is not None and not isinstance(weights, SogWeights):
            weights = SogWeights(**weights) if isinstance(weights, dict) else SogWeights(*weights)
        fn = lambda c: sog_score(c, dataset, weights=weights, **params)  # noqa: E731
    elif metric == "snpr":
        if "lambda" in params:
            params["lam"] = params.pop("lambda")
        fn = lambda c: snpr_score(c, dataset, **params)  # noqa: E731
    elif metric == "purs":
        fn = lambda c: purs_score(c, dataset, **params)  # noqa: E731
    elif metric == "desr":
        fn = lambda c: desr_score(c, dataset, **params)  # noqa: E731
    else:
        raise ValueError(f"unknown proxy metric {metric!r}; expected one of {METRICS}")
    return RawScoreVector(method_id or metric.upper(), tuple(fn(c) for c in dataset.cases))
