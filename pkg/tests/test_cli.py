import json
import os

import pytest

from elq.cli import main

ENT = ["--entities", "w/entities.jsonl", "--embeddings", "w/entities.emb"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cwd = os.getcwd()
    os.chdir(root)
    try:
        assert run("generate", "--out", "w", "--entities", 60, "--dim", 16, "--train", 60,
                   "--dev", 10, "--test", 20) == 0
        assert run("build-index", *ENT, "--index", "exact", "--out", "w/idx") == 0
        assert run("train", *ENT, "--index-path", "w/idx", "--data", "w/train.jsonl",
                   "--features", "w/train.qemb", "--epochs", 3, "--out", "w/ck", "--loss-csv", "w/loss.csv") == 0
        yield root
    finally:
        os.chdir(cwd)


MODEL = [*ENT, "--index-path", "w/idx", "--checkpoint", "w/ck"]


def test_loss_csv(workspace):
    lines = (workspace / "w/loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss_md,loss_ed,total" and len(lines) == 4


def test_link_and_eval_identity(workspace, capsys):
    assert run("link", *MODEL, "--questions", "w/test.jsonl", "--features", "w/test.qemb", "--out", "w/p.jsonl") == 0
    preds = [json.loads(l) for l in (workspace / "w/p.jsonl").read_text().splitlines()]
    assert len(preds) == 20 and all(p["predictions"] for p in preds)
    # gold file doubles as a prediction file once reshaped
    gold = [json.loads(l) for l in (workspace / "w/test.jsonl").read_text().splitlines()]
    with open(workspace / "w/gold_pred.jsonl", "w") as fh:
        for g in gold:
            fh.write(json.dumps({"id": g["id"], "predictions": g["mentions"]}) + "\n")
    capsys.readouterr()
    assert run("eval", "--gold", "w/test.jsonl", "--predictions", "w/gold_pred.jsonl", "--report", "w/r.json") == 0
    assert "F1         1.0000" in capsys.readouterr().out
    assert json.loads((workspace / "w/r.json").read_text())["f1"] == 1.0


def test_threads_do_not_change_output(workspace):
    args = [*MODEL, "--questions", "w/test.jsonl", "--features", "w/test.qemb"]
    assert run("link", *args, "--out", "w/p1.jsonl") == 0
    assert run("link", *args, "--out", "w/p4.jsonl", "--threads", 4) == 0
    assert (workspace / "w/p1.jsonl").read_bytes() == (workspace / "w/p4.jsonl").read_bytes()


def test_eval_modes(workspace, capsys):
    run("link", *MODEL, "--questions", "w/test.jsonl", "--features", "w/test.qemb", "--out", "w/p.jsonl")
    capsys.readouterr()
    assert run("eval", "--gold", "w/test.jsonl", "--predictions", "w/p.jsonl", "--mode", "md-only") == 0
    md = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert run("eval", "--gold", "w/test.jsonl", "--predictions", "w/p.jsonl") == 0
    full = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert md["correct"] >= full["correct"]
    assert run("eval", "--gold", "w/test.jsonl", "--mode", "el-only", *MODEL, "--features", "w/test.qemb") == 0
    el = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert el["precision"] == el["recall"] == el["f1"]


def test_bench_repetitions(workspace, capsys):
    assert run("bench", *MODEL, "--questions", "w/test.jsonl", "--features", "w/test.qemb",
               "--repetitions", 2, "--report", "w/b.json") == 0
    rep = json.loads((workspace / "w/b.json").read_text())
    assert len(rep["samples"]) == 2
    assert rep["total_seconds"] == pytest.approx(sum(rep["samples"]) / 2)
    assert sum(rep["stage_seconds"].values()) <= rep["total_seconds"]


def test_tune_gamma(workspace, capsys):
    assert run("tune-gamma", *MODEL, "--questions", "w/dev.jsonl", "--features", "w/dev.qemb") == 0
    out = json.loads(capsys.readouterr().out)
    assert out["best_gamma"] in [float(k) for k in out["f1"]]


def test_errors_are_structured(workspace, capsys):
    assert run("eval", "--gold", "missing.jsonl", "--predictions", "x") == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "missing_file"
    assert run("link", "--entities", "w/entities.jsonl", "--embeddings", "w/train.qemb", "--index-path", "w/idx",
               "--checkpoint", "w/ck", "--questions", "w/test.jsonl", "--out", "w/x") == 2
    assert json.loads(capsys.readouterr().err)["error"] == "format"
    assert run("eval", "--gold", "w/test.jsonl", "--mode", "el-only") == 2
    assert json.loads(capsys.readouterr().err)["error"] == "invalid_argument"
    assert run("train", *ENT, "--index-path", "w/idx", "--data", "w/train.jsonl", "--dim", 7, "--out", "w/c2") == 2
    assert json.loads(capsys.readouterr().err)["error"] == "dimension"
