"""Seeded generator for the bundled synthetic movie-domain dataset.

50 users, 60 items in six audience groups, 200 evaluation cases (four per
user).  Ground truth is planted: each case's latent serendipity is a
monotone function of the target's minimum audience-Jaccard distance to the
user's pre-cutoff history and of its unpopularity; three noisy Likert
answers are drawn around it and later averaged by the loader.

The audience/Jaccard arithmetic here is deliberately written with plain
sets and does not import ``features``; tests use it as an independent
reference.

Regenerate the shipped copy with::

    python -m serendipity_eval.fixture src/serendipity_eval/data/synthetic
"""

from __future__ import annotations

import csv
import random
import sys
from pathlib import Path

N_USERS = 50
N_ITEMS = 60
CASES_PER_USER = 4
DEFAULT_SEED = 20250101
DAY = 24 * 3600
T0 = 1_500_000_000

GROUPS = ["Drama", "Comedy", "Sci-Fi", "Horror", "Documentary", "Animation"]
ADJ = ["Silent", "Golden", "Broken", "Hidden", "Crimson", "Endless", "Quiet", "Electric", "Paper", "Iron"]
NOUN = ["River", "Garden", "Signal", "Harbor", "Mirror", "Forest", "Engine", "Lantern", "Orbit", "Bridge"]

SIGNAL_WEIGHTS = (0.6, 0.4)  # (min-history Jaccard distance, unpopularity)
ANSWER_NOISE = 0.7
SURVEY_VARIABLES = ["unexp_1", "unexp_2", "unexp_3"]


def _jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 0.0
    return 1.0 - len(a & b) / len(a | b)


def _round_half_up(x: float) -> int:
    return int(x + 0.5) if x >= 0 else -int(-x + 0.5)


def build(seed: int = DEFAULT_SEED) -> dict[str, list[dict]]:
    rng = random.Random(seed)

    items = []
    titles = rng.sample([f"The {a} {n}" for a in ADJ for n in NOUN], N_ITEMS)
    for i in range(N_ITEMS):
        group = i % len(GROUPS)
        genres = {GROUPS[group]}
        if rng.random() < 0.3:
            genres.add(rng.choice(GROUPS))
        items.append({
            "item_id": f"m{i:03d}",
            "title": titles[i],
            "genres": "|".join(sorted(genres)),
            "group": group,
            "weight": 1.0 / (1 + i // len(GROUPS)) ** 0.8,
        })

    users = []
    interactions: list[tuple[str, str, int, int]] = []  # user, item, ts, rating
    survey_time = {}
    pre_items: dict[str, list[str]] = {}
    for u in range(N_USERS):
        uid = f"u{u:03d}"
        groups = {rng.randrange(len(GROUPS))}
        if rng.random() < 0.5:
            groups.add(rng.randrange(len(GROUPS)))
        t_survey = T0 + 200 * DAY + u * 1000
        survey_time[uid] = t_survey
        n_hist = rng.randint(12, 24)
        chosen: list[str] = []
        while len(chosen) < n_hist:
            pool = [it for it in items if it["group"] in groups] if rng.random() < 0.85 else items
            pick = rng.choices(pool, weights=[it["weight"] for it in pool])[0]["item_id"]
            if pick not in chosen:
                chosen.append(pick)
        stamps = sorted(rng.sample(range(t_survey - 120 * DAY, t_survey), n_hist))
        for item_id, ts in zip(chosen, stamps):
            interactions.append((uid, item_id, ts, rng.randint(1, 5)))
        pre_items[uid] = chosen
        users.append({
            "user_id": uid,
            "age": rng.randint(18, 60),
            "gender": rng.choice(["female", "male", "other", "undisclosed"]),
            "curiosity": round(rng.uniform(1, 5), 1),
            **{t: rng.randint(2, 14) / 2 for t in (
                "openness", "conscientiousness", "extraversion", "agreeableness", "neuroticism")},
            "_groups": groups,
        })

    cases = []
    post: list[tuple[str, str, int, int]] = []
    for user in users:
        uid = user["user_id"]
        unseen = [it for it in items if it["item_id"] not in pre_items[uid]]
        inside = [it for it in unseen if it["group"] in user["_groups"]]
        outside = [it for it in unseen if it["group"] not in user["_groups"]]
        targets = rng.sample(inside, min(2, len(inside)))
        targets += rng.sample(outside, CASES_PER_USER - len(targets))
        for k, it in enumerate(targets):
            cases.append({
                "case_id": f"c{len(cases) + 1:04d}",
                "user_id": uid,
                "target_item_id": it["item_id"],
                "cutoff_timestamp": survey_time[uid],
            })
            # the user rates the target after the survey: must stay hidden
            post.append((uid, it["item_id"], survey_time[uid] + (k + 1) * DAY, rng.randint(1, 5)))
        extra = rng.choice(unseen)["item_id"]
        post.append((uid, extra, survey_time[uid] + 10 * DAY, rng.randint(1, 5)))
    interactions += post

    # planted ground truth, computed on the same hidden view scorers get
    first_seen: dict[str, dict[str, int]] = {it["item_id"]: {} for it in items}
    for uid, iid, ts, _ in interactions:
        prev = first_seen[iid].get(uid)
        if prev is None or ts < prev:
            first_seen[iid][uid] = ts

    def audience(item_id: str, case: dict) -> set:
        return {
            u for u, ts in first_seen[item_id].items()
            if u != case["user_id"] or ts < case["cutoff_timestamp"]
        }

    latent = []
    for case in cases:
        hist = [iid for uid, iid, ts, _ in sorted(interactions, key=lambda r: r[2])
                if uid == case["user_id"] and ts < case["cutoff_timestamp"]
                and iid != case["target_item_id"]][-10:]
        target = audience(case["target_item_id"], case)
        min_j = min(_jaccard(target, audience(h, case)) for h in hist)
        unpop = 1.0 - len(target) / N_USERS
        latent.append(SIGNAL_WEIGHTS[0] * min_j + SIGNAL_WEIGHTS[1] * unpop)
    lo, hi = min(latent), max(latent)
    for case, z in zip(cases, latent):
        z = (z - lo) / (hi - lo)
        for var in SURVEY_VARIABLES:
            case[var] = min(5, max(1, _round_half_up(1 + 4 * z + rng.gauss(0, ANSWER_NOISE))))

    return {
        "users": [{k: v for k, v in u.items() if not k.startswith("_")} for u in users],
        "items": [{k: it[k] for k in ("item_id", "title", "genres")} for it in items],
        "interactions": [
            {"user_id": u, "item_id": i, "timestamp": ts, "kind": "rating", "rating_value": r}
            for u, i, ts, r in sorted(interactions, key=lambda r: (r[0], r[2]))
        ],
        "cases": cases,
    }


MANIFEST = """\
# Synthetic movie-domain fixture (see serendipity_eval.fixture).
domain: movie
files:
  users: users.csv
  items: items.csv
  interactions: interactions.csv
  cases: cases.csv
ground_truth_variables: [unexp_1, unexp_2, unexp_3]
"""


def write(out_dir: str | Path, seed: int = DEFAULT_SEED) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables = build(seed)
    for name, rows in tables.items():
        with (out / f"{name}.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    (out / "manifest.yaml").write_text(MANIFEST, encoding="utf-8")
    return out


def bundled_path() -> Path:
    return Path(__file__).parent / "data" / "synthetic" / "manifest.yaml"


if __name__ == "__main__":
    write(sys.argv[1] if len(sys.argv) > 1 else "synthetic")
