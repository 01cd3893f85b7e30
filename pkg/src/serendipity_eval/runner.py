"""Config-driven experiment runs.

A run configuration is a single YAML file::

    dataset: path/to/manifest.yaml     # relative to the config file
    seed: 0
    runs_per_llm: 5
    parallelism: 4
    retry_budget: 2
    few_shot_pool: 25                  # cases held out as few-shot examples
    output_dir: runs/demo
    methods:
      - {id: Random, kind: random}
      - {id: SNPR, kind: proxy, metric: snpr, params: {lambda: 0.7}}
      - id: Qwen2.5-14B
        kind: llm
        model: {model_id: qwen2.5-14b, endpoint: "http://localhost:8000/v1"}
        prompt: {shots: 5, history_length: 10, aux: [curiosity]}
      - {id: Ensemble, kind: ensemble, members: [Qwen2.5-14B, GPT-4]}

The mock model id ``truth`` (endpoint ``mock``) answers every case with its
ground-truth rating.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import proxy_metrics as P
from . import seren_eva as S
from .data_model import Dataset, DatasetError, load_dataset
from .ensemble import EnsembleSpec, ensemble_scores
from .llm_client import (
    BoundModel,
    LLMClient,
    LLMError,
    ModelSpec,
    RateAllError,
    ResponseCache,
    case_lookup_mock,
    rate_all,
)
from .prompting import AUX_FLAGS, PromptError, PromptSpec, build_prompt

log = logging.getLogger(__name__)

METHOD_KINDS = ("random", "proxy", "llm", "ensemble")
TRUTH_MOCK = "truth"
DEFAULT_POOL = 25


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: Path
    methods: list[dict]
    seed: int = 0
    runs_per_llm: int = 5
    parallelism: int = 4
    retry_budget: int = 2
    few_shot_pool: int | None = None
    output_dir: Path | None = None
    cache_path: Path | None = None
    offline: bool = False
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML ({exc})") from None
        return cls.from_dict(raw, base=path.parent)

    @classmethod
    def from_dict(cls, raw: dict, base: Path | None = None) -> "RunConfig":
        base = base or Path.cwd()
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        unknown = set(raw) - {
            "dataset", "methods", "seed", "runs_per_llm", "parallelism", "retry_budget",
            "few_shot_pool", "output_dir", "cache_path", "offline",
        }
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "dataset" not in raw:
            raise ConfigError("config must name a dataset")
        methods = raw.get("methods") or []
        if not methods:
            raise ConfigError("config must list at least one method")

        def rel(p):
            return None if p is None else (base / p if not Path(p).is_absolute() else Path(p))

        cfg = cls(
            dataset=rel(raw["dataset"]),
            methods=[dict(m) for m in methods],
            seed=int(raw.get("seed", 0)),
            runs_per_llm=int(raw.get("runs_per_llm", 5)),
            parallelism=int(raw.get("parallelism", 4)),
            retry_budget=int(raw.get("retry_budget", 2)),
            few_shot_pool=raw.get("few_shot_pool"),
            output_dir=rel(raw.get("output_dir")),
            cache_path=rel(raw.get("cache_path")),
            offline=bool(raw.get("offline", False)),
            raw=raw,
        )
        if cfg.runs_per_llm < 1 or cfg.parallelism < 1 or cfg.retry_budget < 0:
            raise ConfigError("runs_per_llm and parallelism must be >= 1, retry_budget >= 0")
        return cfg

    def digest(self) -> str:
        # scalar overrides that do not change results stay out of the digest
        keep = {k: v for k, v in self.raw.items() if k not in ("output_dir", "parallelism", "offline", "cache_path")}
        return hashlib.sha256(json.dumps(keep, sort_keys=True, default=str).encode()).hexdigest()


def _prompt_spec(method: dict, dataset: Dataset) -> PromptSpec:
    block = dict(method.get("prompt") or {})
    block.setdefault("domain_wording", dataset.domain)
    return PromptSpec.from_dict(block)


def _model_spec(block) -> ModelSpec:
    if not isinstance(block, dict) or "model_id" not in block:
        raise ConfigError("llm method needs a 'model' block with a model_id")
    try:
        return ModelSpec.from_dict(block)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad model block: {exc}") from None


def _needs_pool(cfg: RunConfig, dataset: Dataset) -> int:
    shots = [
        _prompt_spec(m, dataset).shots for m in cfg.methods if m.get("kind") == "llm"
    ]
    if not shots or max(shots) == 0:
        return 0
    size = cfg.few_shot_pool if cfg.few_shot_pool is not None else DEFAULT_POOL
    return max(int(size), max(shots))


def check(cfg: RunConfig) -> tuple[list[str], Dataset | None]:
    """All problems found in ``cfg``; never runs a method or opens a socket."""
    errors: list[str] = []
    if not Path(cfg.dataset).exists():
        return [f"dataset not found: {cfg.dataset}"], None
    try:
        dataset = load_dataset(cfg.dataset)
    except DatasetError as exc:
        return [f"dataset {cfg.dataset}: {exc}"], None

    ids = [m.get("id") for m in cfg.methods]
    if any(not i for i in ids):
        errors.append("every method needs an 'id'")
    dup = {i for i in ids if i and ids.count(i) > 1}
    if dup:
        errors.append(f"duplicate method ids: {sorted(dup)}")
    llm_ids = set()
    users = {c.user_id for c in dataset.cases}
    for m in cfg.methods:
        mid, kind = m.get("id"), m.get("kind")
        if kind not in METHOD_KINDS:
            errors.append(f"{mid}: unknown kind {kind!r}")
        elif kind == "proxy":
            if str(m.get("metric", "")).lower() not in P.METRICS:
                errors.append(f"{mid}: unknown proxy metric {m.get('metric')!r}")
        elif kind == "llm":
            llm_ids.add(mid)
            try:
                _model_spec(m.get("model"))
                spec = _prompt_spec(m, dataset)
            except (ConfigError, PromptError) as exc:
                errors.append(f"{mid}: {exc}")
                continue
            for flag in sorted(spec.aux & {"curiosity", "big_five", "age", "gender"}):
                missing = [u for u in sorted(users) if getattr(dataset.users[u], flag) is None]
                if missing:
                    errors.append(
                        f"{mid}: aux flag {flag!r} is not available for {len(missing)} user(s), e.g. {missing[0]}"
                    )
        elif kind == "ensemble":
            members = m.get("members") or []
            if not members:
                errors.append(f"{mid}: ensemble needs members")
    for m in cfg.methods:
        if m.get("kind") == "ensemble":
            for member in m.get("members") or []:
                if member not in llm_ids:
                    errors.append(f"{m.get('id')}: member {member!r} is not an llm method of this config")
    if not errors:
        pool = _needs_pool(cfg, dataset)
        if pool and len(dataset.cases) - pool < 2:
            errors.append(f"few-shot pool of {pool} leaves fewer than 2 evaluation cases")
    return errors, dataset


def split_pool(dataset: Dataset, size: int, seed: int) -> tuple[Dataset, list]:
    """Hold out ``size`` seeded cases as the few-shot pool."""
    if size == 0:
        return dataset, []
    ids = sorted(c.case_id for c in dataset.cases)
    pool_ids = set(random.Random(seed).sample(ids, size))
    pool = [c for c in dataset.cases if c.case_id in pool_ids]
    return dataset.subset(set(ids) - pool_ids), pool


@dataclass
class MethodResult:
    method_id: str
    scores: list[float]
    parse_failures: int = 0
    members: list[str] | None = None


class RunFailed(RuntimeError):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


def _score_method(m: dict, cfg: RunConfig, ds: Dataset, pool: list, client: LLMClient,
                  done: dict[str, MethodResult]) -> MethodResult:
    mid, kind = m["id"], m["kind"]
    if kind == "random":
        return MethodResult(mid, [float(v) for v in S.random_baseline(len(ds.cases), int(m.get("seed", cfg.seed)))])
    if kind == "proxy":
        raw = P.score_cases(m["metric"], ds, method_id=mid, **dict(m.get("params") or {}))
        if m.get("normalize", True):
            return MethodResult(mid, [float(v) for v in P.normalize_to_likert(raw)])
        return MethodResult(mid, list(raw.values))
    if kind == "llm":
        model = _model_spec(m["model"])
        spec = _prompt_spec(m, ds)
        summarizer = BoundModel(client, _model_spec(m["summarizer"]) if m.get("summarizer") else model)
        prompts = [build_prompt(c, ds, spec, pool, summarizer) for c in ds.cases]
        res = rate_all(client, model, prompts, runs=cfg.runs_per_llm,
                       parallelism=cfg.parallelism, retry_budget=cfg.retry_budget)
        return MethodResult(mid, res.means, res.parse_failures)
    if kind == "ensemble":
        spec = EnsembleSpec(tuple(m["members"]), m.get("rule", "mean"))
        vectors = [done[x].scores for x in spec.members]
        return MethodResult(
            mid,
            ensemble_scores(vectors, spec),
            sum(done[x].parse_failures for x in spec.members),
            list(spec.members),
        )
    raise ConfigError(f"unknown method kind {kind!r}")


def build_report(results: list[MethodResult], ds: Dataset, cfg: RunConfig, n_pool: int) -> S.MetaEvalReport:
    report = S.MetaEvalReport(
        methods=[
            S.evaluate_method(r.scores, ds, r.method_id, r.parse_failures, r.members)
            for r in results
        ],
        significance=S.pairwise_significance({r.method_id: r.scores for r in results}, ds),
        provenance={
            "config_digest": cfg.digest(),
            "dataset_digest": ds.digest,
            "n_cases": len(ds.cases),
            "few_shot_pool": n_pool,
            "runs_per_llm": cfg.runs_per_llm,
        },
    )
    return report


def _write_outputs(out: Path, cfg: RunConfig, ds: Dataset, results: list[MethodResult],
                   report: S.MetaEvalReport | None, meta: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.raw, sort_keys=False), encoding="utf-8")
    if report is not None:
        (out / "report.json").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        (out / "table.txt").write_text(report.table(), encoding="utf-8")
    with (out / "scores.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case_id", "user_id", "target_item_id", "ground_truth"] + [r.method_id for r in results])
        for i, c in enumerate(ds.cases):
            w.writerow([c.case_id, c.user_id, c.target_item_id, c.ground_truth]
                       + [repr(r.scores[i]) for r in results])
    (out / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run(cfg: RunConfig, client: LLMClient | None = None) -> S.MetaEvalReport:
    """Execute every configured method and write the run directory.

    Raises ``RunFailed`` with exit code 2 (invalid config) or 3 (LLM transport
    failure; completed methods are still flushed to disk).
    """
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    errors, dataset = check(cfg)
    if errors:
        raise RunFailed("invalid config:\n  " + "\n  ".join(errors), 2)
    n_pool = _needs_pool(cfg, dataset)
    ds, pool = split_pool(dataset, n_pool, cfg.seed)

    out = cfg.output_dir
    if client is None:
        cache_path = cfg.cache_path or (out / "llm_cache.jsonl" if out else None)
        client = LLMClient(ResponseCache(cache_path), offline=cfg.offline)
    client.mocks.setdefault(TRUTH_MOCK, case_lookup_mock({c.case_id: str(c.ground_truth) for c in dataset.cases}))

    results: list[MethodResult] = []
    done: dict[str, MethodResult] = {}
    for m in cfg.methods:
        log.info("scoring method %s (%s)", m["id"], m["kind"])
        try:
            res = _score_method(m, cfg, ds, pool, client, done)
        except LLMError as exc:
            meta = {"started": started, "failed_method": m["id"], "error": str(exc)}
            if isinstance(exc, RateAllError):
                meta["partial_cases"] = exc.partial
            if out:
                partial = build_report(results, ds, cfg, n_pool) if results else None
                _write_outputs(out, cfg, ds, results, partial, meta)
            raise RunFailed(f"method {m['id']}: {exc}", 3) from exc
        except (PromptError, ValueError) as exc:
            raise RunFailed(f"method {m['id']}: {exc}", 2) from exc
        results.append(res)
        done[res.method_id] = res

    report = build_report(results, ds, cfg, n_pool)
    if out:
        meta = {
            "started": started,
            "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "llm_requests": client.request_count,
        }
        _write_outputs(out, cfg, ds, results, report, meta)
    return report
