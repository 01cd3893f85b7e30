"""Constrained serendipity-rating prompts and reply parsing."""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Callable, Iterable, Sequence

import yaml

from . import features as F
from .data_model import Dataset, EvaluationCase, Interaction, visible_history

TEMPLATE_VERSION = "v1"
AUX_FLAGS = (
    "curiosity",
    "big_five",
    "age",
    "gender",
    "short_term_profile",
    "long_term_profile",
    "popularity",
    "similarity",
)
_WORDING = {
    "ecommerce": {"platform": "Chinese e-commerce platform", "behavior": "clicked on or purchased"},
    "movie": {"platform": "movie platform", "behavior": "watched and rated"},
}
_KIND_LABEL = {"click": "clicked", "purchase": "purchased", "rating": "rated", "unspecified": "interacted"}
RESPONSE_HEADER = "## Response\n"
HISTORY_PREFIX = "Your behavior history: ["


class PromptError(ValueError):
    pass


class ParseFailure(ValueError):
    pass


@dataclass(frozen=True)
class PromptSpec:
    shots: int = 5
    history_length: int = 10
    include_interaction_kind: bool = False
    include_rating_values: bool = False
    aux: frozenset[str] = field(default_factory=frozenset)
    domain_wording: str = "ecommerce"
    few_shot_seed: int = 0
    interaction_kinds: frozenset[str] | None = None
    profile_window_weeks: int = 2

    def __post_init__(self) -> None:
        object.__setattr__(self, "aux", frozenset(self.aux))
        if self.interaction_kinds is not None:
            object.__setattr__(self, "interaction_kinds", frozenset(self.interaction_kinds))
        if self.shots < 0:
            raise PromptError("shots must be >= 0")
        if self.history_length < 1:
            raise PromptError("history_length must be >= 1")
        unknown = self.aux - set(AUX_FLAGS)
        if unknown:
            raise PromptError(f"unknown auxiliary-data flags: {sorted(unknown)}")
        if self.domain_wording not in _WORDING:
            raise PromptError(f"unknown domain wording {self.domain_wording!r}")
        if self.profile_window_weeks not in (2, 3, 4):
            raise PromptError("profile_window_weeks must be 2, 3 or 4")

    def digest(self) -> str:
        d = asdict(self)
        d["aux"] = sorted(self.aux)
        d["interaction_kinds"] = sorted(self.interaction_kinds) if self.interaction_kinds else None
        d["template"] = TEMPLATE_VERSION
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, raw: dict) -> "PromptSpec":
        raw = dict(raw)
        if "aux" in raw:
            raw["aux"] = frozenset(raw["aux"] or ())
        if raw.get("interaction_kinds") is not None:
            raw["interaction_kinds"] = frozenset(raw["interaction_kinds"])
        try:
            return cls(**raw)
        except TypeError as exc:
            raise PromptError(str(exc)) from None


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    case_id: str
    spec_digest: str


@lru_cache(maxsize=None)
def _template() -> str:
    return resources.files(__package__).joinpath(
        f"templates/rating_prompt_{TEMPLATE_VERSION}.txt"
    ).read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def _aux_templates() -> dict:
    raw = resources.files(__package__).joinpath(
        f"templates/aux_sections_{TEMPLATE_VERSION}.yaml"
    ).read_text(encoding="utf-8")
    return yaml.safe_load(raw)


def basic_template() -> str:
    """The raw rating template with its ``{placeholders}``."""
    return _template()


def _item_info(dataset: Dataset, item_id: str, extras: Iterable[str] = ()) -> str:
    item = dataset.items[item_id]
    parts = []
    if item.genres:
        parts.append("genres: " + "/".join(sorted(item.genres)))
    parts.extend(extras)
    return f"{item.title} ({'; '.join(parts)})" if parts else item.title


def _history_entry(dataset: Dataset, it: Interaction, spec: PromptSpec) -> str:
    extras = []
    if spec.include_interaction_kind:
        extras.append(f"action: {_KIND_LABEL[it.kind]}")
    if spec.include_rating_values and it.rating_value is not None:
        extras.append(f"rating: {it.rating_value:g}")
    return _item_info(dataset, it.item_id, extras)


def prompt_history(case: EvaluationCase, dataset: Dataset, spec: PromptSpec) -> list[Interaction]:
    """The interactions a prompt for ``case`` may show: pre-cutoff, target
    removed, kind-filtered, newest ``history_length``."""
    return visible_history(
        dataset,
        case,
        spec.history_length,
        kinds=spec.interaction_kinds,
        exclude_item=case.target_item_id,
    )


def _fmt(x: float) -> str:
    return f"{x:g}"


def _aux_value(
    flag: str,
    case: EvaluationCase,
    dataset: Dataset,
    spec: PromptSpec,
    history: list[Interaction],
    summarizer: Callable[[str], str] | None,
) -> str:
    tpl = _aux_templates()[flag]
    user = dataset.users[case.user_id]
    if flag in ("curiosity", "age", "gender", "big_five"):
        value = getattr(user, flag)
        if value is None:
            raise PromptError(f"aux flag {flag!r} set but user {user.user_id} has no {flag}")
        if flag == "big_five":
            names = ("openness", "conscientiousness", "extraversion", "agreeableness", "neuroticism")
            return tpl["text"].format(**{n: _fmt(v) for n, v in zip(names, value)})
        return tpl["text"].format(value=_fmt(value) if flag == "curiosity" else value)
    if flag == "short_term_profile":
        prof = F.build_short_term_profile(user, case.cutoff_timestamp, spec.profile_window_weeks, dataset)
        return tpl["text"].format(value=prof.text)
    if flag == "long_term_profile":
        if summarizer is None:
            raise PromptError("aux flag 'long_term_profile' needs a summarizer model")
        prof = F.build_long_term_profile(user, case.cutoff_timestamp, dataset, summarizer)
        return tpl["text"].format(value=prof.text)
    if flag == "popularity":
        pop = F.popularity(case.target_item_id, dataset, case)
        if dataset.domain == "movie":
            return tpl["movie"].format(value=f"{100 * pop:.1f}%")
        return tpl["ecommerce"].format(value="is listed" if pop else "is not listed")
    if flag == "similarity":
        if not history:
            raise PromptError(f"aux flag 'similarity' needs history; case {case.case_id} has none")
        d = F.min_history_jaccard(case.target_item_id, [it.item_id for it in history], dataset, case)
        return tpl["text"].format(value=f"{d:.4f}")
    raise PromptError(f"unknown aux flag {flag!r}")


def select_few_shot_examples(
    pool: Sequence[EvaluationCase], n: int, seed: int
) -> list[EvaluationCase]:
    """Seeded stratified draw: one case per Likert level where possible,
    the remainder uniformly; returned ascending by (rating, case id)."""
    if n < 0:
        raise PromptError("n must be >= 0")
    if len(pool) < n:
        raise PromptError(f"insufficient examples: pool has {len(pool)}, need {n}")
    if n == 0:
        return []
    rng = random.Random(seed)
    ordered = sorted(pool, key=lambda c: c.case_id)
    levels = sorted({c.ground_truth for c in ordered})
    if n < len(levels):
        levels = sorted(rng.sample(levels, n))
    picked = []
    for level in levels:
        group = [c for c in ordered if c.ground_truth == level]
        picked.append(rng.choice(group))
    taken = {c.case_id for c in picked}
    rest = [c for c in ordered if c.case_id not in taken]
    picked.extend(rng.sample(rest, n - len(picked)))
    return sorted(picked, key=lambda c: (c.ground_truth, c.case_id))


def _render_example(i: int, ex: EvaluationCase, dataset: Dataset, spec: PromptSpec) -> str:
    hist = prompt_history(ex, dataset, spec)
    return (
        f"Example {i}:\n"
        f"Behavior history: [{', '.join(_history_entry(dataset, it, spec) for it in hist)}]\n"
        f"Recommended item: ({_item_info(dataset, ex.target_item_id)})\n"
        f"Serendipity rating: {ex.ground_truth}\n"
    )


def build_prompt(
    case: EvaluationCase,
    dataset: Dataset,
    spec: PromptSpec,
    examples_pool: Sequence[EvaluationCase] = (),
    summarizer: Callable[[str], str] | None = None,
) -> RenderedPrompt:
    """Render the rating prompt for one case."""
    wording = _WORDING[spec.domain_wording]
    history = prompt_history(case, dataset, spec)

    aux = ""
    tpls = _aux_templates()
    for flag in AUX_FLAGS:
        if flag in spec.aux:
            body = _aux_value(flag, case, dataset, spec, history, summarizer)
            aux += f"### {tpls[flag]['label']}\n{body}\n"

    examples = ""
    if spec.shots:
        if any(c.case_id == case.case_id for c in examples_pool):
            raise PromptError(f"case {case.case_id} is part of the few-shot pool")
        chosen = select_few_shot_examples(examples_pool, spec.shots, spec.few_shot_seed)
        examples = "## Examples\n" + "".join(
            _render_example(i, ex, dataset, spec) for i, ex in enumerate(chosen, 1)
        )

    text = _template().format(
        platform=wording["platform"],
        behavior=wording["behavior"],
        aux=aux,
        examples=examples,
        history=", ".join(_history_entry(dataset, it, spec) for it in history),
        item=_item_info(dataset, case.target_item_id),
    )
    return RenderedPrompt(text=text, case_id=case.case_id, spec_digest=spec.digest())


def response_history_section(text: str) -> str:
    """The history list of the Response section of a rendered prompt."""
    start = text.rindex(RESPONSE_HEADER)
    start = text.index(HISTORY_PREFIX, start) + len(HISTORY_PREFIX)
    end = text.index("]\nRecommended item:", start)
    return text[start:end]


_NUMBER = re.compile(r"\d+(?:\.\d+)?")


def parse_rating(reply: str) -> int:
    """First standalone integer 1-5 in the reply."""
    for m in _NUMBER.finditer(reply or ""):
        tok = m.group()
        if "." not in tok and 1 <= int(tok) <= 5:
            return int(tok)
    raise ParseFailure(f"no rating in reply {reply[:60]!r}")
