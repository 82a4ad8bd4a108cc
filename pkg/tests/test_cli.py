"""End-to-end command line behavior and exit codes."""

import json
from pathlib import Path

import pytest

import perceptqa.cli as cli
from perceptqa.cli import main
from perceptqa.errors import InvariantError
from perceptqa.reasoning import format_trace
from perceptqa.store import load_dataset


def _tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def _write_jsonl(path: Path, rows) -> None:
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), "utf-8")


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    """One synthetic dataset shared by the evaluate/report tests."""
    out = tmp_path_factory.mktemp("cli") / "ds"
    rc = main(["build-dataset", "--seed", "3", "--charts", "6",
               "--per-chart", "4", "--out", str(out)])
    assert rc == 0
    return out, load_dataset(out)


# ---------------------------------------------------------------------------
# generation commands

def test_build_dataset_runs_are_byte_identical(tmp_path):
    args = ["build-dataset", "--seed", "5", "--charts", "4",
            "--per-chart", "3"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert _tree_bytes(a) == _tree_bytes(b)


def test_build_dataset_output_shape(built):
    out, ds = built
    assert sum(ds.manifest.counts.values()) == len(ds.items)
    assert ds.manifest.train_size + ds.manifest.test_size == len(ds.items)
    assert ds.manifest.template_hashes == {}

    record = json.loads((out / "run.json").read_text("utf-8"))
    assert record["command"] == "build-dataset"
    # the serving host is run metadata, never part of the dataset identity
    assert "endpoint" not in record["config"]
    assert record["endpoint"] is None
    assert record["config_digest"] == ds.manifest.config_digest
    assert ds.manifest.dataset_id == f"ds-{record['config_digest'][:12]}"
    assert record["versions"]["perceptqa"]
    assert len(record["template_hashes"]) == 9


def test_weights_flag_steers_the_mix(tmp_path):
    out = tmp_path / "ds"
    rc = main(["build-dataset", "--seed", "2", "--charts", "6",
               "--per-chart", "3", "--weights", "1,0,0,0",
               "--out", str(out)])
    assert rc == 0
    ds = load_dataset(out)
    assert {i.family for i in ds.items} == {"position"}


def test_gen_charts_then_gen_qa_matches_build_dataset(tmp_path):
    staged = tmp_path / "staged"
    direct = tmp_path / "direct"
    assert main(["gen-charts", "--seed", "7", "--charts", "6",
                 "--out", str(staged)]) == 0
    assert main(["gen-qa", "--seed", "7", "--per-chart", "3",
                 "--out", str(staged)]) == 0
    assert main(["build-dataset", "--seed", "7", "--charts", "6",
                 "--per-chart", "3", "--out", str(direct)]) == 0

    staged_files = _tree_bytes(staged)
    direct_files = _tree_bytes(direct)
    for rel in direct_files:
        if rel == "run.json":
            continue  # records gen-qa vs build-dataset as the command
        assert staged_files[rel] == direct_files[rel], rel


def test_gen_qa_requires_staged_charts(tmp_path, capsys):
    rc = main(["gen-qa", "--out", str(tmp_path / "empty")])
    assert rc == 1
    assert "gen-charts first" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# evaluate and report

def test_evaluate_gold_predictions_score_everything(built, tmp_path, capsys):
    out, ds = built
    preds = tmp_path / "preds.jsonl"
    _write_jsonl(preds, [{"qa_id": i.qa_id, "prediction": i.answer}
                         for i in ds.items])
    outcomes = tmp_path / "outcomes.jsonl"
    report = tmp_path / "report.json"
    rc = main(["evaluate", "--dataset", str(out), "--predictions", str(preds),
               "--out", str(outcomes), "--report", str(report)])
    assert rc == 0
    doc = json.loads(report.read_text("utf-8"))
    assert doc["overall"] == "100.00"
    assert set(doc["by_family"].values()) == {"100.00"}
    assert doc["violation_rate"] == "0.00"
    lines = [l for l in outcomes.read_text("utf-8").splitlines() if l.strip()]
    assert len(lines) == len(ds.items)
    table = capsys.readouterr().out
    assert "Avg." in table and "100.00" in table


def test_evaluate_dot_mode_accepts_formatted_traces(built, tmp_path):
    out, ds = built
    preds = tmp_path / "preds.jsonl"
    _write_jsonl(preds, [{"qa_id": i.qa_id,
                          "prediction": format_trace(i.trace)}
                         for i in ds.items])
    outcomes = tmp_path / "outcomes.jsonl"
    report = tmp_path / "report.json"
    rc = main(["evaluate", "--dataset", str(out), "--predictions", str(preds),
               "--mode", "dot", "--out", str(outcomes),
               "--report", str(report)])
    assert rc == 0
    doc = json.loads(report.read_text("utf-8"))
    assert doc["overall"] == "100.00"
    assert doc["violation_rate"] == "0.00"


def test_evaluate_scores_missing_predictions_as_zero(built, tmp_path, capsys):
    out, ds = built
    preds = tmp_path / "preds.jsonl"
    _write_jsonl(preds, [{"qa_id": i.qa_id, "prediction": i.answer}
                         for i in list(ds.items)[:-2]])
    outcomes = tmp_path / "outcomes.jsonl"
    report = tmp_path / "report.json"
    rc = main(["evaluate", "--dataset", str(out), "--predictions", str(preds),
               "--out", str(outcomes), "--report", str(report)])
    assert rc == 0
    assert "2 items have no prediction" in capsys.readouterr().err
    doc = json.loads(report.read_text("utf-8"))
    assert doc["overall"] != "100.00"
    lines = [l for l in outcomes.read_text("utf-8").splitlines() if l.strip()]
    assert len(lines) == len(ds.items)


def test_evaluate_validates_predictions_file(built, tmp_path, capsys):
    out, _ = built
    outcomes = tmp_path / "outcomes.jsonl"
    rc = main(["evaluate", "--dataset", str(out),
               "--predictions", str(tmp_path / "absent.jsonl"),
               "--out", str(outcomes)])
    assert rc == 1
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"prediction": "42"}\n', "utf-8")
    rc = main(["evaluate", "--dataset", str(out), "--predictions", str(bad),
               "--out", str(outcomes)])
    assert rc == 1
    assert "qa_id and prediction" in capsys.readouterr().err


def test_report_rerenders_evaluate_output(built, tmp_path, capsys):
    out, ds = built
    preds = tmp_path / "preds.jsonl"
    _write_jsonl(preds, [{"qa_id": i.qa_id, "prediction": i.answer}
                         for i in ds.items])
    outcomes = tmp_path / "outcomes.jsonl"
    report = tmp_path / "report.json"
    main(["evaluate", "--dataset", str(out), "--predictions", str(preds),
          "--out", str(outcomes), "--report", str(report)])
    evaluate_table = capsys.readouterr().out

    rerendered = tmp_path / "report2.json"
    rc = main(["report", "--outcomes", str(outcomes),
               "--json", str(rerendered)])
    assert rc == 0
    assert capsys.readouterr().out == evaluate_table
    assert rerendered.read_bytes() == report.read_bytes()


def test_report_shows_placeholder_for_absent_families(tmp_path, capsys):
    outcomes = tmp_path / "outcomes.jsonl"
    _write_jsonl(outcomes, [
        {"family": "extract", "qa_id": "a", "metric": "em", "score": 1.0,
         "passed": True, "pred": "B", "gold": "B", "violations": []},
        {"family": "position", "qa_id": "b", "metric": "relaxed", "score": 0.0,
         "passed": False, "pred": "1", "gold": "2", "violations": []},
    ])
    assert main(["report", "--outcomes", str(outcomes)]) == 0
    table = capsys.readouterr().out
    assert "—" in table
    head, body = table.splitlines()
    assert body.split() == ["0.00", "—", "—", "100.00", "50.00"]


# ---------------------------------------------------------------------------
# labeling

def test_label_routes_agreements_and_disputes(tmp_path, capsys):
    pairs = tmp_path / "pairs.jsonl"
    _write_jsonl(pairs, [
        {"qa_id": "q1", "answer_a": "42", "answer_b": "42.0"},
        {"qa_id": "q2", "answer_a": "99", "answer_b": "95"},
        {"qa_id": "q3", "answer_a": "(B).", "answer_b": "b",
         "answer_type": "mcq"},
    ])
    accepted = tmp_path / "accepted.jsonl"
    review = tmp_path / "review.jsonl"
    rc = main(["label", "--pairs", str(pairs), "--accepted", str(accepted),
               "--review", str(review)])
    assert rc == 0
    accepted_rows = [json.loads(l) for l in
                     accepted.read_text("utf-8").splitlines()]
    review_rows = [json.loads(l) for l in
                   review.read_text("utf-8").splitlines()]
    assert accepted_rows == [{"qa_id": "q1", "gold": "42"},
                             {"qa_id": "q3", "gold": "B"}]
    assert review_rows == [{"qa_id": "q2", "answer_a": "99",
                            "answer_b": "95"}]
    assert "accepted 2, queued 1" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# exit codes

def test_usage_errors_exit_1():
    with pytest.raises(SystemExit) as exc:
        main(["evaluate"])  # required options missing
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 1


def test_validation_errors_return_1(tmp_path, capsys):
    out = str(tmp_path / "ds")
    assert main(["build-dataset", "--out", out]) == 1  # --charts missing
    assert main(["build-dataset", "--charts", "2", "--holdout", "1.0",
                 "--out", out]) == 1
    assert main(["build-dataset", "--charts", "2", "--mode", "llm",
                 "--model", "m", "--out", out]) == 1
    assert main(["build-dataset", "--charts", "2", "--weights", "1,2,3",
                 "--out", out]) == 1
    err = capsys.readouterr().err
    assert "requires --endpoint" in err
    assert "--weights needs 4" in err


def test_transport_failure_returns_2(tmp_path, capsys):
    rc = main(["build-dataset", "--charts", "1", "--mode", "llm",
               "--endpoint", "http://127.0.0.1:9/v1/chat", "--model", "m",
               "--out", str(tmp_path / "ds")])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_invariant_breach_returns_3(tmp_path, monkeypatch, capsys):
    def boom(args):
        raise InvariantError("internal disagreement")

    monkeypatch.setattr(cli, "cmd_label", boom)
    pairs = tmp_path / "pairs.jsonl"
    pairs.write_text("", "utf-8")
    rc = main(["label", "--pairs", str(pairs),
               "--accepted", str(tmp_path / "a.jsonl"),
               "--review", str(tmp_path / "r.jsonl")])
    assert rc == 3
    assert "internal disagreement" in capsys.readouterr().err


def test_version_flag_exits_0(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "perceptqa" in capsys.readouterr().out
