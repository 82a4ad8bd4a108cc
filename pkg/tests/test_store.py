"""Dataset directory writing, loading, and split hygiene."""

import hashlib
import json
from dataclasses import replace
from pathlib import Path

import pytest

from perceptqa.errors import StoreError
from perceptqa.qagen import GenConfig, generate_items, item_to_dict
from perceptqa.store import (
    check_leakage,
    load_dataset,
    manifest_from_dict,
    manifest_to_dict,
    split_holdout,
    write_dataset,
)

from support import rendered_pool


@pytest.fixture(scope="module")
def corpus():
    """Six rendered charts, 24 items, two charts held out."""
    charts = rendered_pool(6)
    pairs = [(spec, geom) for spec, _, geom in charts]
    items, _ = generate_items(pairs, GenConfig(per_chart=4, seed=7))
    chart_ids = [spec.chart_id for spec, _, _ in charts]
    _, test_ids = split_holdout(chart_ids, seed=5, count=2)
    held = set(test_ids)
    items = [replace(i, split="test" if i.chart_id in held else "train")
             for i in items]
    return charts, items, test_ids


def _write(root, charts, items, holdout, **kw):
    return write_dataset(root, "ds-test", charts, items, holdout,
                         config_digest="cfg0", tool_version="0.1.0", **kw)


# ---------------------------------------------------------------------------
# holdout split

def test_split_is_deterministic_and_order_free():
    ids = ["c3", "c1", "c2", "c4", "c0"]
    first = split_holdout(ids, seed=9, count=2)
    again = split_holdout(list(reversed(ids)), seed=9, count=2)
    assert first == again
    train, test = first
    assert sorted(train) == list(train) and sorted(test) == list(test)
    assert set(train) | set(test) == set(ids)
    assert set(train) & set(test) == set()


def test_split_fraction_rounds_to_count():
    ids = [f"c{i}" for i in range(10)]
    _, test = split_holdout(ids, seed=1, fraction=0.3)
    assert len(test) == 3


def test_split_count_zero_keeps_everything_in_train():
    train, test = split_holdout(["a", "b"], seed=0, count=0)
    assert test == ()
    assert train == ("a", "b")


def test_split_varies_with_seed():
    ids = [f"c{i}" for i in range(30)]
    picks = {split_holdout(ids, seed=s, count=10)[1] for s in range(6)}
    assert len(picks) > 1


def test_split_dedupes_ids():
    train, test = split_holdout(["a", "b", "a", "c"], seed=0, count=1)
    assert len(train) + len(test) == 3


def test_split_argument_validation():
    ids = ["a", "b", "c"]
    with pytest.raises(StoreError):
        split_holdout(ids, seed=0)
    with pytest.raises(StoreError):
        split_holdout(ids, seed=0, fraction=0.5, count=1)
    with pytest.raises(StoreError):
        split_holdout(ids, seed=0, fraction=1.0)
    with pytest.raises(StoreError):
        split_holdout(ids, seed=0, count=-1)
    with pytest.raises(StoreError, match="no training data"):
        split_holdout(ids, seed=0, count=3)
    with pytest.raises(StoreError):
        split_holdout([], seed=0, count=0)


# ---------------------------------------------------------------------------
# leakage

def test_check_leakage_passes_clean_split(corpus):
    _, items, test_ids = corpus
    check_leakage(items, test_ids)


def test_check_leakage_catches_train_item_on_held_out_chart(corpus):
    _, items, test_ids = corpus
    bad = next(i for i in items if i.split == "test")
    with pytest.raises(StoreError, match="leakage"):
        check_leakage([replace(bad, split="train")], test_ids)


def test_check_leakage_catches_test_item_off_the_holdout(corpus):
    _, items, test_ids = corpus
    bad = next(i for i in items if i.split == "train")
    with pytest.raises(StoreError, match="leakage"):
        check_leakage([replace(bad, split="test")], test_ids)


# ---------------------------------------------------------------------------
# writing and loading

def test_write_then_load_round_trip(corpus, tmp_path):
    charts, items, test_ids = corpus
    root = tmp_path / "ds"
    manifest = _write(root, charts, items, test_ids)

    assert manifest.train_size + manifest.test_size == len(items)
    assert manifest.holdout_chart_ids == tuple(sorted(test_ids))
    assert sum(manifest.counts.values()) == len(items)
    for spec, _, _ in charts:
        for ext in (".json", ".svg", ".geom.json"):
            assert (root / "charts" / f"{spec.chart_id}{ext}").is_file()

    ds = load_dataset(root)
    assert ds.manifest == manifest
    assert set(ds.charts) == {spec.chart_id for spec, _, _ in charts}
    assert set(ds.geoms) == set(ds.charts)
    assert ({i.qa_id: item_to_dict(i) for i in ds.items}
            == {i.qa_id: item_to_dict(i) for i in items})
    assert ds.review_rows == ()
    fams = {i.family for i in items}
    for fam in fams:
        assert all(i.family == fam for i in ds.items_for(fam))
    assert sum(len(ds.items_for(f)) for f in fams) == len(items)


def test_manifest_covers_every_written_file(corpus, tmp_path):
    charts, items, test_ids = corpus
    root = tmp_path / "ds"
    manifest = _write(root, charts, items, test_ids)
    on_disk = {
        str(p.relative_to(root))
        for p in root.rglob("*") if p.is_file()
    } - {"manifest.json"}
    assert on_disk == set(manifest.file_digests)
    for rel, digest in manifest.file_digests.items():
        data = (root / rel).read_bytes()
        assert hashlib.sha256(data).hexdigest() == digest


def test_write_is_byte_stable(corpus, tmp_path):
    charts, items, test_ids = corpus
    a, b = tmp_path / "a", tmp_path / "b"
    _write(a, charts, items, test_ids)
    _write(b, charts, items, test_ids)
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_load_detects_corruption(corpus, tmp_path):
    charts, items, test_ids = corpus
    root = tmp_path / "ds"
    _write(root, charts, items, test_ids)
    victim = next((root / "charts").glob("*.svg"))
    victim.write_text(victim.read_text("utf-8") + " ", "utf-8")
    with pytest.raises(StoreError, match="digest mismatch"):
        load_dataset(root)
    # unverified loads skip digests but nothing else
    ds = load_dataset(root, verify=False)
    assert len(ds.items) == len(items)


def test_load_detects_count_drift(corpus, tmp_path):
    charts, items, test_ids = corpus
    root = tmp_path / "ds"
    _write(root, charts, items, test_ids)
    path = root / "manifest.json"
    doc = json.loads(path.read_text("utf-8"))
    fam = next(f for f, n in doc["counts"].items() if n > 0)
    doc["counts"][fam] += 1
    path.write_text(json.dumps(doc, indent=2) + "\n", "utf-8")
    with pytest.raises(StoreError, match="manifest says"):
        load_dataset(root)


def test_load_checks_leakage_even_without_verify(corpus, tmp_path):
    charts, items, test_ids = corpus
    root = tmp_path / "ds"
    _write(root, charts, items, test_ids)
    path = root / "manifest.json"
    doc = json.loads(path.read_text("utf-8"))
    train_chart = next(i.chart_id for i in items if i.split == "train")
    doc["holdout_chart_ids"] = sorted(set(doc["holdout_chart_ids"])
                                      | {train_chart})
    path.write_text(json.dumps(doc, indent=2) + "\n", "utf-8")
    with pytest.raises(StoreError, match="leakage"):
        load_dataset(root, verify=False)


def test_load_requires_manifest(tmp_path):
    with pytest.raises(StoreError, match="manifest"):
        load_dataset(tmp_path)


def test_review_rows_round_trip(corpus, tmp_path):
    charts, items, test_ids = corpus
    rows = [
        {"qa_id": items[0].qa_id, "status": "needs_review",
         "answers": ["41", "42"]},
        {"qa_id": items[1].qa_id, "status": "needs_review",
         "answers": ["B", "C"]},
    ]
    root = tmp_path / "ds"
    _write(root, charts, items, test_ids, review_rows=rows)
    ds = load_dataset(root)
    assert list(ds.review_rows) == rows


def test_manifest_dict_round_trip(corpus, tmp_path):
    charts, items, test_ids = corpus
    manifest = _write(tmp_path / "ds", charts, items, test_ids)
    assert manifest_from_dict(manifest_to_dict(manifest)) == manifest


# ---------------------------------------------------------------------------
# write-time validation: nothing lands on disk when inputs are bad

def test_write_refuses_duplicate_qa_id(corpus, tmp_path):
    charts, items, test_ids = corpus
    root = tmp_path / "ds"
    with pytest.raises(StoreError, match="duplicate qa_id"):
        _write(root, charts, items + [items[0]], test_ids)
    assert not root.exists()


def test_write_refuses_dangling_chart_reference(corpus, tmp_path):
    charts, items, test_ids = corpus
    ghost = replace(items[0], qa_id="ghost-extract-001", chart_id="ghost")
    with pytest.raises(StoreError, match="missing chart"):
        _write(tmp_path / "ds", charts, items + [ghost], test_ids)


def test_write_refuses_duplicate_question_text(corpus, tmp_path):
    charts, items, test_ids = corpus
    twin = replace(items[0], qa_id=items[0].qa_id + "-b",
                   question="  " + items[0].question.upper())
    with pytest.raises(StoreError, match="duplicate question"):
        _write(tmp_path / "ds", charts, items + [twin], test_ids)


def test_write_refuses_unknown_family(corpus, tmp_path):
    charts, items, test_ids = corpus
    bad = replace(items[0], qa_id=items[0].qa_id + "-b", family="layout",
                  question="Which layout is used?")
    with pytest.raises(StoreError, match="unknown family"):
        _write(tmp_path / "ds", charts, items + [bad], test_ids)


def test_write_refuses_duplicate_chart_ids(corpus, tmp_path):
    charts, items, test_ids = corpus
    with pytest.raises(StoreError, match="duplicate chart_id"):
        _write(tmp_path / "ds", charts + [charts[0]], items, test_ids)


def test_write_refuses_unknown_holdout_id(corpus, tmp_path):
    charts, items, test_ids = corpus
    with pytest.raises(StoreError, match="not in chart list"):
        _write(tmp_path / "ds", charts, items, list(test_ids) + ["nope"])


def test_write_refuses_leaky_split(corpus, tmp_path):
    charts, items, test_ids = corpus
    root = tmp_path / "ds"
    all_train = [replace(i, split="train") for i in items]
    with pytest.raises(StoreError, match="leakage"):
        _write(root, charts, all_train, test_ids)
    assert not root.exists()


def test_write_respects_existing_lock(corpus, tmp_path):
    charts, items, test_ids = corpus
    root = tmp_path / "ds"
    root.mkdir()
    (root / ".lock").touch()
    with pytest.raises(StoreError, match="locked by another writer"):
        _write(root, charts, items, test_ids)
    (root / ".lock").unlink()
    _write(root, charts, items, test_ids)
    assert not (root / ".lock").exists()
