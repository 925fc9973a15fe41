import json
import subprocess
import sys

import pytest

from _helpers import make_threads
from cqathread.cli import main
from cqathread.corpus import Dataset, serialize_jsonl, thread_to_dict

pytestmark = pytest.mark.filterwarnings("ignore:POS annotations unavailable")

XML = b"""<root>
<Question QID="Q1" QCATEGORY="Cars" QUSERID="U1"><QSubject>car</QSubject><QBody>which car?</QBody>
<Comment CID="Q1_C1" CUSERID="U2" CGOLD="Good"><CSubject/><CBody>buy a toyota</CBody></Comment>
<Comment CID="Q1_C2" CUSERID="U3" CGOLD="Dialogue"><CSubject/><CBody>lol</CBody></Comment>
</Question></root>"""


def run(*argv):
    return main([str(a) for a in argv])


def read_jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines() if line]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "train.jsonl").write_bytes(serialize_jsonl(Dataset("train", make_threads(0, 40))))
    (root / "dev.jsonl").write_bytes(serialize_jsonl(Dataset("dev", make_threads(1, 12))))
    config = root / "config.toml"
    config.write_text('seed = 1\n[features]\nngram_orders = [1, 2]\n[local]\nsigma = 1.0\n')
    assert run("train", "--train", root / "train.jsonl", "--model-dir", root / "model", "--config", config) == 0
    return root


class TestIngest:
    def test_xml_with_created_dir(self, tmp_path, capsys):
        src = tmp_path / "in.xml"
        src.write_bytes(XML)
        out = tmp_path / "new" / "dir" / "train.jsonl"
        assert run("ingest", src, "--format", "semeval-xml", "--mapping", "default", "-o", out) == 0
        records = read_jsonl(out)
        assert [c["label"] for c in records[0]["comments"]] == ["Good", "Bad"]
        stats = json.loads(out.with_name("train.jsonl.stats.json").read_text())
        assert stats["question_count"] == 1 and stats["comment_count"] == 2
        assert "comments\t2" in capsys.readouterr().out

    def test_map_override_and_mapping_file(self, tmp_path):
        src = tmp_path / "in.xml"
        src.write_bytes(XML)
        out = tmp_path / "o.jsonl"
        assert run("ingest", src, "--format", "semeval-xml", "--map", "Dialogue=Drop", "-o", out) == 0
        assert len(read_jsonl(out)[0]["comments"]) == 1
        mapping = tmp_path / "map.txt"
        mapping.write_text("Good=Good\n")
        assert run("ingest", src, "--format", "semeval-xml", "--mapping", mapping, "-o", out) == 1

    def test_unknown_format_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run("ingest", tmp_path / "x", "--format", "csv", "-o", tmp_path / "o")
        assert exc.value.code == 2

    def test_parse_error_exit_1(self, tmp_path, capsys):
        src = tmp_path / "bad.xml"
        src.write_bytes(b"<root><Question>")
        assert run("ingest", src, "--format", "semeval-xml", "-o", tmp_path / "o.jsonl") == 1
        assert "byte offset" in capsys.readouterr().err

    def test_missing_input_exit_1(self, tmp_path):
        assert run("ingest", tmp_path / "nope.jsonl", "--format", "jsonl", "-o", tmp_path / "o") == 1


class TestTrain:
    def test_artifacts(self, workspace):
        model = workspace / "model"
        assert {p.name for p in model.iterdir()} == {"local.json", "pairwise.json", "pipeline.json", "train_log.json"}
        log = json.loads((model / "train_log.json").read_text())
        assert log["pairwise"]["classes"] == ["Different", "Same"]
        assert "final_loss" in log["local"] and "iterations" in log["local"]
        params = json.loads((model / "pipeline.json").read_text())["params"]
        assert params["seed"] == 1 and params["feature_config"]["ngram_orders"] == [1, 2]

    def test_rerun_is_byte_identical(self, workspace):
        again = workspace / "model2"
        assert run("train", "--train", workspace / "train.jsonl", "--model-dir", again,
                   "--config", workspace / "config.toml") == 0
        for name in ("local.json", "pairwise.json", "pipeline.json", "train_log.json"):
            assert (again / name).read_bytes() == (workspace / "model" / name).read_bytes()

    def test_three_class(self, workspace, tmp_path):
        assert run("--pairwise-mode", "three_class", "train", "--train", workspace / "train.jsonl",
                   "--model-dir", tmp_path / "m3", "--max-iter", "200") == 0
        log = json.loads((tmp_path / "m3" / "train_log.json").read_text())
        assert log["pairwise"]["classes"] == ["Different", "Same-Bad", "Same-Good"]


class TestDecode:
    def test_local_equals_cut_at_lambda_one(self, workspace, tmp_path):
        assert run("decode", "--decoder", "local", "--data", workspace / "dev.jsonl",
                   "--model-dir", workspace / "model", "-o", tmp_path / "local.jsonl") == 0
        assert run("decode", "--decoder", "cut", "--lambda", "1.0", "--data", workspace / "dev.jsonl",
                   "--model-dir", workspace / "model", "-o", tmp_path / "cut.jsonl") == 0
        local = read_jsonl(tmp_path / "local.jsonl")
        assert local == read_jsonl(tmp_path / "cut.jsonl")
        assert set(local[0]) == {"question_id", "comment_id", "label", "s_G"}
        n_comments = sum(len(r["comments"]) for r in read_jsonl(workspace / "dev.jsonl"))
        assert len(local) == n_comments

    def test_scores_round_trip(self, workspace, tmp_path):
        assert run("decode", "--decoder", "ilp", "--lambda", "0.9", "--data", workspace / "dev.jsonl",
                   "--model-dir", workspace / "model", "-o", tmp_path / "a.jsonl",
                   "--scores-out", tmp_path / "scores.jsonl") == 0
        assert run("decode", "--decoder", "ilp", "--lambda", "0.9", "--data", workspace / "dev.jsonl",
                   "--scores", tmp_path / "scores.jsonl", "-o", tmp_path / "b.jsonl") == 0
        assert read_jsonl(tmp_path / "a.jsonl") == read_jsonl(tmp_path / "b.jsonl")

    def test_unlabeled_data(self, workspace, tmp_path):
        records = read_jsonl(workspace / "dev.jsonl")
        for rec in records:
            for c in rec["comments"]:
                c.pop("label", None)
        data = tmp_path / "unlabeled.jsonl"
        data.write_text("".join(json.dumps(r) + "\n" for r in records))
        assert run("decode", "--data", data, "--model-dir", workspace / "model", "-o", tmp_path / "p.jsonl") == 0
        assert {r["label"] for r in read_jsonl(tmp_path / "p.jsonl")} <= {"Good", "Bad"}

    def test_missing_model(self, workspace, tmp_path, capsys):
        assert run("decode", "--data", workspace / "dev.jsonl", "--model-dir", tmp_path / "none",
                   "-o", tmp_path / "p.jsonl") == 1
        assert "pipeline.json" in capsys.readouterr().err

    def test_model_or_scores_required(self, workspace, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run("decode", "--data", workspace / "dev.jsonl", "-o", tmp_path / "p.jsonl")
        assert exc.value.code == 2


class TestTune:
    def test_curve_and_best(self, workspace, tmp_path, capsys):
        out = tmp_path / "tune.json"
        assert run("tune", "--decoder", "cut", "--data", workspace / "dev.jsonl",
                   "--model-dir", workspace / "model", "-o", out) == 0
        doc = json.loads(out.read_text())
        grid = [p["lambda"] for p in doc["curve"]]
        assert len(grid) == 33 and doc["best_lambda"] in grid
        best = max(doc["curve"], key=lambda p: (p["accuracy"], p["lambda"]))
        assert doc["best_lambda"] == best["lambda"]
        assert "best_lambda" in capsys.readouterr().out

    def test_custom_grid(self, workspace, tmp_path):
        out = tmp_path / "tune.json"
        assert run("tune", "--decoder", "ilp", "--grid", "0.5", "1.0", "--data", workspace / "dev.jsonl",
                   "--model-dir", workspace / "model", "-o", out) == 0
        assert [p["lambda"] for p in json.loads(out.read_text())["curve"]] == [0.5, 1.0]

    def test_unlabeled_rejected(self, workspace, tmp_path):
        records = read_jsonl(workspace / "dev.jsonl")
        for rec in records:
            for c in rec["comments"]:
                c.pop("label", None)
        data = tmp_path / "unlabeled.jsonl"
        data.write_text("".join(json.dumps(r) + "\n" for r in records))
        assert run("tune", "--data", data, "--model-dir", workspace / "model", "-o", tmp_path / "t.json") == 1


class TestEvaluate:
    @pytest.fixture
    def predictions(self, workspace, tmp_path):
        path = tmp_path / "pred.jsonl"
        assert run("decode", "--decoder", "local", "--data", workspace / "dev.jsonl",
                   "--model-dir", workspace / "model", "-o", path) == 0
        return path

    def test_self_comparison(self, workspace, predictions, tmp_path, capsys):
        out = tmp_path / "eval.json"
        assert run("evaluate", "--predictions", predictions, "--gold", workspace / "dev.jsonl",
                   "--compare", predictions, "--iterations", "1000", "-o", out) == 0
        doc = json.loads(out.read_text())
        assert doc["significance"]["p_value"] == 1.0
        assert set(doc["metrics"]) >= {"precision", "recall", "f1", "accuracy"}
        text = capsys.readouterr().out
        assert "system\tP\tR\tF1\tAcc" in text and "accuracy\t" in text

    def test_id_mismatch(self, workspace, predictions, capsys):
        lines = predictions.read_text().splitlines()
        dropped = json.loads(lines[0])
        predictions.write_text("\n".join(lines[1:]) + "\n")
        assert run("evaluate", "--predictions", predictions, "--gold", workspace / "dev.jsonl") == 1
        err = capsys.readouterr().err
        assert "missing predictions" in err and dropped["comment_id"] in err

    def test_unknown_ids(self, workspace, predictions):
        with predictions.open("a") as fh:
            fh.write(json.dumps({"question_id": "QX", "comment_id": "CX", "label": "Good"}) + "\n")
        assert run("evaluate", "--predictions", predictions, "--gold", workspace / "dev.jsonl") == 1


def test_json_config_and_module_entry(workspace, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"decoder": "local"}))
    proc = subprocess.run(
        [sys.executable, "-m", "cqathread", "decode", "--config", str(cfg),
         "--data", str(workspace / "dev.jsonl"), "--model-dir", str(workspace / "model"),
         "-o", str(tmp_path / "p.jsonl")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "p.jsonl").exists()


def test_thread_to_dict_shape():
    rec = thread_to_dict(make_threads(0, 1)[0])
    assert {"question_id", "category", "asker_id", "subject", "body", "comments"} <= set(rec)
