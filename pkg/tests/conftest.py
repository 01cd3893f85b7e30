from __future__ import annotations

from pathlib import Path

import pytest

from serendipity_eval.data_model import (
    Dataset,
    EvaluationCase,
    Interaction,
    ItemRecord,
    UserRecord,
    load_dataset,
)
from serendipity_eval.fixture import bundled_path

DATA = Path(__file__).parent / "data"


def make_dataset(histories, cases=(), domain="movie", items=None, users=None):
    """histories: {user_id: [(item_id, ts) | (item_id, ts, kind)]}; cases:
    [(user, item, gt, cutoff)].  Items mentioned anywhere get auto records."""
    users = dict(users or {})
    mentioned = {i for h in histories.values() for i, *_ in h} | {c[1] for c in cases}
    items = dict(items or {})
    for i in sorted(mentioned):
        items.setdefault(i, ItemRecord(i, f"title-{i}", frozenset({"g"})))
    recs = {}
    for u, hist in histories.items():
        ints = []
        for entry in hist:
            item, ts, *rest = entry
            kind = rest[0] if rest else "click"
            ints.append(Interaction(item, ts, kind, 4.0 if kind == "rating" else None))
        ints.sort(key=lambda it: it.timestamp)
        base = users.get(u)
        recs[u] = UserRecord(u, tuple(ints), **({} if base is None else base))
    evals = [
        EvaluationCase(f"c{k}", u, i, gt, cut) for k, (u, i, gt, cut) in enumerate(cases)
    ]
    return Dataset(domain=domain, users=recs, items=items, cases=tuple(evals))


@pytest.fixture(scope="session")
def synthetic():
    return load_dataset(bundled_path())


@pytest.fixture(scope="session")
def mini():
    return load_dataset(DATA / "mini_ecommerce" / "manifest.yaml")
