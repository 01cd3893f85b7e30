"""Multi-LLM score averaging."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

RULES = ("mean",)


@dataclass(frozen=True)
class EnsembleSpec:
    members: tuple[str, ...]
    rule: str = "mean"

    def __post_init__(self) -> None:
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ValueError("an ensemble needs at least one member")
        if self.rule not in RULES:
            raise ValueError(f"unknown ensemble rule {self.rule!r}")


def ensemble_scores(
    member_scores: Sequence[Sequence[float]], spec: EnsembleSpec | None = None
) -> list[float]:
    """Element-wise mean of the members' per-case scores."""
    rule = spec.rule if spec else "mean"
    if not member_scores:
        raise ValueError("empty member list")
    lengths = {len(m) for m in member_scores}
    if len(lengths) != 1:
        raise ValueError(f"member score vectors differ in length: {sorted(lengths)}")
    if rule != "mean":
        raise ValueError(f"unknown ensemble rule {rule!r}")
    k = len(member_scores)
    out = []
    for column in zip(*member_scores):
        col = [float(v) for v in column]
        # fsum is exactly rounded, hence order-free; the clamp absorbs the
        # last-ulp drift of the division so bounds and idempotence hold exactly
        out.append(min(max(math.fsum(col) / k, min(col)), max(col)))
    return out
