import csv
import json
import math
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from serendipity_eval.data_model import (
    DatasetError,
    DatasetSchema,
    derive_movie_ground_truth,
    load_dataset,
    round_half_up,
    visible_history,
)

from conftest import DATA, make_dataset


def write_tables(tmp_path, users, items, interactions, cases, manifest="domain: movie\n"):
    for name, rows in [("users", users), ("items", items), ("interactions", interactions), ("cases", cases)]:
        (tmp_path / f"{name}.csv").write_text("\n".join(rows) + "\n")
    (tmp_path / "manifest.yaml").write_text(manifest)
    return tmp_path / "manifest.yaml"


MIN_USERS = ["user_id,age", "u1,30"]
MIN_ITEMS = ["item_id,title,genres", "i1,Film One,Drama|War"]
MIN_INTER = ["user_id,item_id,timestamp,kind,rating_value", "u1,i1,100,rating,4"]
MIN_CASES = ["case_id,user_id,target_item_id,ground_truth,cutoff_timestamp", "c1,u1,i1,3,200"]


def test_round_half_up():
    assert [round_half_up(x) for x in (0.5, 1.5, 2.5, 2.4999, -0.5, 3.0)] == [1, 2, 3, 2, 0, 3]
    with pytest.raises(ValueError):
        round_half_up(math.nan)


def test_minimal_round_trip(tmp_path):
    ds = load_dataset(write_tables(tmp_path, MIN_USERS, MIN_ITEMS, MIN_INTER, MIN_CASES))
    assert len(ds.cases) == 1 and ds.cases[0].ground_truth == 3
    assert ds.items["i1"].genres == frozenset({"Drama", "War"})
    assert ds.users["u1"].history[0].rating_value == 4.0
    assert ds.users["u1"].curiosity is None  # absent, not a sentinel


def test_empty_cases_rejected(tmp_path):
    with pytest.raises(DatasetError, match="no evaluation cases"):
        load_dataset(write_tables(tmp_path, MIN_USERS, MIN_ITEMS, MIN_INTER, MIN_CASES[:1]))


@pytest.mark.parametrize(
    "table, rows, message",
    [
        ("interactions", MIN_INTER + ["u1,nope,5,click,"], "dangling item"),
        ("interactions", MIN_INTER + ["ghost,i1,5,click,"], "dangling user"),
        ("cases", MIN_CASES + ["c2,u1,nope,3,"], "dangling item"),
        ("users", MIN_USERS + ["u1,40"], "duplicate user"),
        ("items", MIN_ITEMS + ["i1,Again,"], "duplicate item"),
        ("cases", MIN_CASES + ["c1,u1,i1,2,"], "duplicate case"),
        ("cases", MIN_CASES + ["c2,u1,i1,7,"], "not in 1..5"),
        ("interactions", MIN_INTER + ["u1,i1,abc,click,"], "cannot parse"),
        ("interactions", MIN_INTER + ["u1,i1,5,click,3"], "rating_value"),
    ],
)
def test_malformed_rows_report_line(tmp_path, table, rows, message):
    tables = {"users": MIN_USERS, "items": MIN_ITEMS, "interactions": MIN_INTER, "cases": MIN_CASES}
    tables[table] = rows
    with pytest.raises(DatasetError, match=message) as exc:
        load_dataset(write_tables(tmp_path, **tables))
    assert f"{table}.csv:3" in str(exc.value) or table == "users"


def test_missing_file(tmp_path):
    path = write_tables(tmp_path, MIN_USERS, MIN_ITEMS, MIN_INTER, MIN_CASES)
    (tmp_path / "items.csv").unlink()
    with pytest.raises(DatasetError, match="missing file"):
        load_dataset(path)


def _count_data_lines(path: Path) -> int:
    # independent of the loader: raw line count minus header
    with open(path, encoding="utf-8") as fh:
        return sum(1 for line in fh if line.strip()) - 1


def test_mini_fixture_counts_match_manifest(mini):
    root = DATA / "mini_ecommerce"
    expected = json.loads((root / "fixture_manifest.json").read_text())
    files = {"users": "users.tsv", "items": "items.tsv", "interactions": "behaviors.tsv", "cases": "survey.tsv"}
    counted = {k: _count_data_lines(root / f) for k, f in files.items()}
    assert counted == expected
    assert len(mini.users) == expected["users"] == 11
    assert len(mini.items) == expected["items"] == 10
    assert sum(len(u.history) for u in mini.users.values()) == expected["interactions"]
    assert len(mini.cases) == expected["cases"]


def test_mini_fixture_column_mapping_and_defaults(mini):
    u = mini.users["U01"]
    assert (u.age, u.gender, u.curiosity) == (21, "male", 1.3)
    assert u.big_five == (3.0, 4.0, 5.0, 2.0, 6.0)
    assert mini.users["U03"].big_five is None and mini.users["U03"].age is None
    assert mini.items["I00"].genres == frozenset({"Shoes", "Gift"})
    assert mini.items["I01"].popularity_raw is None
    # missing exposure time -> latest interaction of the user + 1
    c0 = mini.cases[0]
    assert c0.cutoff_timestamp == mini.users["U00"].history[-1].timestamp + 1


def test_load_is_deterministic(mini):
    again = load_dataset(DATA / "mini_ecommerce" / "manifest.yaml")
    assert again == mini
    assert again.digest == mini.digest


def test_load_directory_form(tmp_path):
    write_tables(tmp_path, MIN_USERS, MIN_ITEMS, MIN_INTER, MIN_CASES)
    assert len(load_dataset(tmp_path).cases) == 1
    schema = DatasetSchema(domain="ecommerce")
    assert load_dataset(tmp_path, schema).domain == "ecommerce"


@pytest.mark.parametrize("values, expected", [((4, 4, 4), 4), ((1, 2, 2), 2), ((3, 4, 4), 4), ((2, 3, 2), 2)])
def test_derive_movie_ground_truth(values, expected):
    names = ["a", "b", "c"]
    assert derive_movie_ground_truth(dict(zip(names, values)), names) == expected


def test_derive_movie_ground_truth_hand_check():
    # 3 + 4 + 4 = 11; 11 / 3 = 3.667; the nearest integer is 4
    mean = (3 + 4 + 4) / 3
    assert abs(mean - 3.6667) < 1e-3 and int(mean + 0.5) == 4
    assert derive_movie_ground_truth({"a": 3, "b": 4, "c": 4}, ["a", "b", "c"]) == 4


@pytest.mark.parametrize("resp", [{"a": 1, "b": 2}, {"a": 1, "b": 2, "c": 6}, {"a": 1, "b": 2, "c": ""}])
def test_derive_movie_ground_truth_errors(resp):
    with pytest.raises(DatasetError):
        derive_movie_ground_truth(resp, ["a", "b", "c"])


def test_synthetic_ground_truth_derivation(synthetic):
    from serendipity_eval.fixture import bundled_path

    with open(bundled_path().parent / "cases.csv") as fh:
        rows = list(csv.DictReader(fh))
    for row, case in zip(rows, synthetic.cases):
        mean = sum(int(row[k]) for k in ("unexp_1", "unexp_2", "unexp_3")) / 3
        assert case.ground_truth == int(mean + 0.5)


def test_visible_history_windowing():
    ds = make_dataset({"u": [(f"i{k}", 10 * k) for k in range(15)]}, [("u", "t", 3, 1000)])
    case = ds.cases[0]
    hist = visible_history(ds, case, 10)
    assert [it.item_id for it in hist] == [f"i{k}" for k in range(5, 15)]
    ds3 = make_dataset({"u": [("a", 1), ("b", 2), ("c", 3)]}, [("u", "t", 3, 1000)])
    assert [it.item_id for it in visible_history(ds3, ds3.cases[0], 10)] == ["a", "b", "c"]


def test_visible_history_respects_cutoff_and_exclusion():
    ds = make_dataset({"u": [("a", 1), ("t", 2), ("b", 5), ("c", 6)]}, [("u", "t", 3, 5)])
    case = ds.cases[0]
    assert [it.item_id for it in visible_history(ds, case, 10)] == ["a", "t"]
    assert [it.item_id for it in visible_history(ds, case, 10, exclude_item="t")] == ["a"]
    with pytest.raises(ValueError):
        visible_history(ds, case, 0)


def test_visible_history_kind_filter(mini):
    case = next(c for c in mini.cases if c.user_id == "U02")
    got = visible_history(mini, case, 1000, kinds={"purchase"})
    brute = [
        it for it in mini.users["U02"].history
        if it.kind == "purchase" and it.timestamp < case.cutoff_timestamp
    ]
    assert got == brute
    assert all(it.kind == "purchase" for it in got)


histories = st.lists(st.integers(0, 50), min_size=0, max_size=25)


@settings(max_examples=200, deadline=None)
@given(histories, st.integers(0, 60), st.integers(1, 30), st.integers(1, 30))
def test_visible_history_properties(stamps, cutoff, k1, k2):
    ds = make_dataset({"u": [(f"i{n}", ts) for n, ts in enumerate(stamps)]}, [("u", "t", 3, cutoff)])
    case = ds.cases[0]
    lo, hi = sorted((k1, k2))
    short, long = visible_history(ds, case, lo), visible_history(ds, case, hi)
    assert all(it.timestamp < cutoff for it in long)
    assert len(short) <= lo
    assert long[len(long) - len(short):] == short
    assert [it.timestamp for it in long] == sorted(it.timestamp for it in long)
