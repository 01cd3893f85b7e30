"""Meta-evaluation: agreement of a scorer with ground-truth ratings.

Every method is summarised by Pearson correlation (in percent), MAE and
RMSE against the case ground truth, plus paired two-sided t-tests on the
per-case absolute errors between methods.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .data_model import Dataset


class DegenerateError(ValueError):
    pass


def _pair(pred: Sequence[float], truth: Sequence[float], min_len: int) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=float)
    t = np.asarray(truth, dtype=float)
    if p.shape != t.shape or p.ndim != 1:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    if len(p) < min_len:
        raise ValueError(f"need at least {min_len} values, got {len(p)}")
    return p, t


def pearson(pred: Sequence[float], truth: Sequence[float]) -> float:
    """Sample Pearson correlation; NaN when either vector has zero variance."""
    p, t = _pair(pred, truth, 2)
    dp = p - p.mean()
    dt = t - t.mean()
    sxx = float(dp @ dp)
    syy = float(dt @ dt)
    if sxx == 0.0 or syy == 0.0:
        return math.nan
    r = float(dp @ dt) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def mae(pred: Sequence[float], truth: Sequence[float]) -> float:
    p, t = _pair(pred, truth, 1)
    return float(np.abs(p - t).mean())


def rmse(pred: Sequence[float], truth: Sequence[float]) -> float:
    p, t = _pair(pred, truth, 1)
    return float(math.sqrt(((p - t) ** 2).mean()))


# -- Student t via the regularized incomplete beta function -----------------


def _betacf(a: float, b: float, x: float, max_iter: int = 500, eps: float = 1e-16) -> float:
    # modified Lentz evaluation of the continued fraction for I_x(a, b)
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h


def betainc_regularized(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and 0 <= x <= 1."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    return betainc_regularized(df / 2.0, 0.5, df / (df + t * t))


class TTestResult(NamedTuple):
    t_statistic: float
    p_value: float | None
    degenerate: bool


def significance_test(errors_a: Sequence[float], errors_b: Sequence[float]) -> TTestResult:
    """Paired two-sided t-test on per-case error differences (a - b).

    A zero-variance difference vector is flagged degenerate: identical
    inputs give t = 0, p = 1; a constant non-zero shift gives t = +-inf and
    an undefined p (None).
    """
    a, b = _pair(errors_a, errors_b, 2)
    d = a - b
    n = len(d)
    sd = float(d.std(ddof=1))
    mean = float(d.mean())
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, True)
        return TTestResult(math.copysign(math.inf, mean), None, True)
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t, t_two_sided_p(t, n - 1), False)


def random_baseline(n: int, seed: int) -> list[int]:
    """Seeded uniform ratings over {1..5}."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    return [int(v) for v in rng.integers(1, 6, size=n)]


# -- report ------------------------------------------------------------------


@dataclass
class MethodEntry:
    method_id: str
    pearson_pct: float | None
    pearson_p_value: float | None
    mae: float
    rmse: float
    n: int
    parse_failures: int = 0
    degenerate: bool = False
    members: list[str] | None = None
    per_user: dict | None = None


@dataclass
class PairwiseTest:
    method_a: str
    method_b: str
    t_statistic: float | None
    p_value: float | None
    degenerate: bool


@dataclass
class MetaEvalReport:
    methods: list[MethodEntry] = field(default_factory=list)
    significance: list[PairwiseTest] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "MetaEvalReport":
        return cls(
            methods=[MethodEntry(**m) for m in raw.get("methods", [])],
            significance=[PairwiseTest(**s) for s in raw.get("significance", [])],
            provenance=raw.get("provenance", {}),
        )

    def table(self) -> str:
        """Plain-text table: one row per method, Pearson(%) / MAE / RMSE."""
        width = max([len("Method")] + [len(m.method_id) for m in self.methods])
        lines = [
            f"{'Method':<{width}}  {'Pearson(%)':>10}  {'MAE':>7}  {'RMSE':>7}",
            "-" * (width + 32),
        ]
        for m in self.methods:
            pr = "degen." if m.pearson_pct is None else f"{m.pearson_pct:.4f}"
            lines.append(f"{m.method_id:<{width}}  {pr:>10}  {m.mae:>7.4f}  {m.rmse:>7.4f}")
        flagged = [m for m in self.methods if m.parse_failures]
        for m in flagged:
            lines.append(f"* {m.method_id}: {m.parse_failures} unparseable replies imputed as 3")
        return "\n".join(lines) + "\n"


def _pearson_p(r: float, n: int) -> float | None:
    if n < 3 or math.isnan(r):
        return None
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return t_two_sided_p(t, n - 2)


def _per_user(scores: np.ndarray, truth: np.ndarray, users: Sequence[str]) -> dict:
    groups: dict[str, list[int]] = defaultdict(list)
    for i, u in enumerate(users):
        groups[u].append(i)
    rs, maes, rmses = [], [], []
    for idx in groups.values():
        p, t = scores[idx], truth[idx]
        maes.append(mae(p, t))
        rmses.append(rmse(p, t))
        if len(idx) >= 2:
            r = pearson(p, t)
            if not math.isnan(r):
                rs.append(r)
    return {
        "users": len(groups),
        "pearson_pct": 100.0 * float(np.mean(rs)) if rs else None,
        "pearson_users": len(rs),
        "mae": float(np.mean(maes)),
        "rmse": float(np.mean(rmses)),
    }


def evaluate_method(
    scores: Sequence[float],
    dataset: Dataset,
    method_id: str,
    parse_failures: int = 0,
    members: list[str] | None = None,
) -> MethodEntry:
    truth = np.asarray(dataset.ground_truth(), dtype=float)
    pred = np.asarray(scores, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(
            f"{method_id}: {len(pred)} scores for {len(truth)} cases (misaligned)"
        )
    r = pearson(pred, truth) if len(pred) >= 2 else math.nan
    degenerate = math.isnan(r)
    return MethodEntry(
        method_id=method_id,
        pearson_pct=None if degenerate else 100.0 * r,
        pearson_p_value=None if degenerate else _pearson_p(r, len(pred)),
        mae=mae(pred, truth),
        rmse=rmse(pred, truth),
        n=len(pred),
        parse_failures=parse_failures,
        degenerate=degenerate,
        members=members,
        per_user=_per_user(pred, truth, [c.user_id for c in dataset.cases]),
    )


def pairwise_significance(
    score_vectors: dict[str, Sequence[float]], dataset: Dataset
) -> list[PairwiseTest]:
    truth = np.asarray(dataset.ground_truth(), dtype=float)
    errs = {k: np.abs(np.asarray(v, dtype=float) - truth) for k, v in score_vectors.items()}
    names = list(errs)
    out = []
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            if len(truth) < 2:
                continue
            res = significance_test(errs[a], errs[b])
            t = None if math.isinf(res.t_statistic) else res.t_statistic
            out.append(PairwiseTest(a, b, t, res.p_value, res.degenerate))
    return out
