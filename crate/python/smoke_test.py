"""Smoke test for the repurpose extension module.

Build and install first, e.g.
    pip install maturin
    maturin build --release -m crates/py/Cargo.toml
    pip install target/wheels/repurpose-*.whl
then run `python python/smoke_test.py`. Set ML100K_DIR to also exercise
the MovieLens reader.
"""

import os
import pathlib
import tempfile

import repurpose


def write_fixture(root: pathlib.Path) -> None:
    items = ["item_id,title,A,B,C"]
    for i in range(1, 13):
        flags = "1,0,0" if i <= 5 else "0,1,0" if i <= 8 else "1,1,0" if i <= 10 else "0,0,1"
        items.append(f"{i},item {i},{flags}")
    users = ["user_id,age,gender,occupation,zip"]
    ratings = ["user_id,item_id,rating,timestamp"]
    for u in range(1, 41):
        users.append(f"{u},{15 + u},{'F' if u % 3 == 0 else 'M'},other,00000")
        for i in range(1, 13):
            if (u * 5 + i * 3) % 4:
                ratings.append(f"{u},{i},{1 + (u * 7 + i * 11) % 5},{1000 + u * 100 + i}")
    for name, lines in (("items.csv", items), ("users.csv", users), ("ratings.csv", ratings)):
        (root / name).write_text("\n".join(lines) + "\n")


def check_fixture(tmp: pathlib.Path) -> None:
    data = tmp / "data"
    data.mkdir()
    write_fixture(data)
    ds = repurpose.Dataset.generic(str(data))
    assert (ds.n_users, ds.n_items) == (40, 12), ds
    assert ds.genres == ["A", "B", "C"]

    m = repurpose.link_matrix(ds)
    a, b = m["genres"].index("A"), m["genres"].index("B")
    # items 9 and 10 are in both A and B; B has 5 items
    assert abs(m["values"][a][b] - 2 / 5) < 1e-12
    assert repurpose.link(ds, "B", "A") == m["values"][a][b]
    assert repurpose.decide(ds, "B", "A")["verdict"] == "incompatible"

    corr = repurpose.correlations(ds, min_pair_users=3)
    assert corr["tested_pairs"] <= 3

    rep = repurpose.probe(ds, ["A", "B"], ["A", "B", "C"], neighbors=5, folds=4, seed=1)
    assert 0.0 <= rep["model_accuracy_new"] <= 1.0

    curve = repurpose.risk_curve(ds, [1, 2, 4], trials=100, seed=3)
    rates = [p["unique_match_rate"] for p in curve]
    assert rates == sorted(rates), rates

    imp = repurpose.expand_and_compare(ds, ["A", "B"], "C", k_top=3, neighbors=5, seed=1)
    assert len(imp["per_user"]) == 40

    mon = repurpose.Monitor(ds, min_batch=50)
    batch = [tuple(int(x) for x in line.split(",")) for line in (data / "ratings.csv").read_text().splitlines()[1:]]
    assert mon.feed(batch) == []
    shifted = [(u, i, 5 if i <= 5 else r, t) for (u, i, r, t) in batch]
    alerts = mon.feed(shifted)
    assert any(al["genre_or_group"] == "A" for al in alerts), alerts

    reg = repurpose.Registry(str(tmp / "store"))
    reg.add_genre_purpose("genres:A+B", ["A", "B"])
    reg.add_genre_purpose("genres:C", ["C"])
    rid = reg.open_assessment("genres:A+B", "genres:C", "Tester")
    assert len(reg.unassessed(rid)) == 5
    try:
        reg.decide(rid, "compatible")
    except ValueError as e:
        assert "a_link" in str(e)
    else:
        raise AssertionError("deciding an unassessed record must fail")
    assert reg.list()[0]["record_id"] == rid

    try:
        repurpose.Dataset.generic(str(tmp / "missing"))
    except OSError:
        pass
    else:
        raise AssertionError("missing directory must raise OSError")


def check_ml100k(path: str) -> None:
    ds = repurpose.Dataset.movielens(path)
    assert (ds.n_ratings, ds.n_users, ds.n_items) == (100000, 943, 1682)
    assert len(ds.genres) == 18
    assert abs(repurpose.link(ds, "Adventure", "Action") - 0.556) < 0.01


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        check_fixture(pathlib.Path(tmp))
    ml = os.environ.get("ML100K_DIR")
    if ml:
        check_ml100k(ml)
    print(f"repurpose {repurpose.__version__}: smoke test passed" + (" (with ml-100k)" if ml else ""))


if __name__ == "__main__":
    main()
