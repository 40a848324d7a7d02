import csv
import json

import numpy as np
import pytest

from anova_tpnn.cli import main
from anova_tpnn.data import Dataset, SyntheticSpec, generate_synthetic, write_csv
from anova_tpnn.interpret import importance_scores
from anova_tpnn.model import load_model

CONFIG = """
[data]
train = "train.csv"
target = "y"
{validation}

[model]
order = {order}
K = 6
link = "{link}"

[fit]
max_epochs = 4
batch_size = 128
learning_rate = 0.01
{loss}

{monotone}

[output]
model = "model.json"
report = "report.json"
"""


def _run(*args):
    return main([str(a) for a in args])


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture()
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    sd = generate_synthetic(SyntheticSpec("F1", 500, 5.0, 0))
    write_csv(sd.dataset, tmp_path / "train.csv")
    return tmp_path


def _config(workdir, order=1, link="identity", monotone="", validation="", loss="", name="run.toml"):
    path = workdir / name
    path.write_text(CONFIG.format(order=order, link=link, monotone=monotone,
                                  validation=validation, loss=loss))
    return path


@pytest.fixture()
def trained(workdir):
    assert _run("--no-timestamp", "train", "--config", _config(workdir)) == 0
    return workdir


class TestTrain:
    def test_outputs(self, trained):
        report = json.loads((trained / "report.json").read_text())
        assert report["selected_epoch"] == 4
        assert "wall_clock_seconds" not in report and "timestamp" not in report
        assert load_model(trained / "model.json").order == 1

    def test_timestamp_on_by_default(self, workdir):
        assert _run("train", "--config", _config(workdir)) == 0
        assert "wall_clock_seconds" in json.loads((workdir / "report.json").read_text())

    def test_byte_identical(self, workdir):
        cfg = _config(workdir, order=2)
        _run("--no-timestamp", "--seed", "3", "train", "--config", cfg)
        first = ((workdir / "model.json").read_bytes(), (workdir / "report.json").read_bytes())
        _run("--no-timestamp", "--seed", "3", "train", "--config", cfg)
        assert ((workdir / "model.json").read_bytes(), (workdir / "report.json").read_bytes()) == first

    def test_monotone_pair(self, workdir, capsys):
        cfg = _config(workdir, order=2, monotone='[fit.monotone]\n"x1,x2" = "increasing"')
        assert _run("train", "--config", cfg) == 1
        assert "monotone requires main effect" in capsys.readouterr().err

    def test_monotone_main(self, workdir):
        cfg = _config(workdir, monotone='[fit.monotone]\nx1 = "increasing"')
        assert _run("train", "--config", cfg) == 0
        m = load_model(workdir / "model.json")
        assert m.components[0].monotone == "inc"

    def test_missing_data(self, workdir):
        (workdir / "train.csv").unlink()
        assert _run("train", "--config", _config(workdir)) == 2

    def test_unknown_key(self, workdir, capsys):
        cfg = _config(workdir)
        cfg.write_text(cfg.read_text() + "\n[extra]\nfoo = 1\n")
        assert _run("train", "--config", cfg) == 1
        cfg.write_text(cfg.read_text().replace("K = 6", "K = 6\nwidth = 2").replace("[extra]\nfoo = 1", ""))
        assert _run("train", "--config", cfg) == 1
        assert "width" in capsys.readouterr().err

    def test_validation_file(self, workdir):
        sd = generate_synthetic(SyntheticSpec("F1", 100, 5.0, 1))
        write_csv(sd.dataset, workdir / "val.csv")
        assert _run("train", "--config", _config(workdir, validation='validation = "val.csv"')) == 0
        report = json.loads((workdir / "report.json").read_text())
        assert len(report["val_loss"]) == 4
        assert report["selected_epoch"] == int(np.argmin(report["val_loss"])) + 1

    def test_usage_error(self):
        assert _run("train") == 1
        assert _run("no-such-command") == 1


class TestPredict:
    def test_matches_library(self, trained):
        assert _run("predict", "--model", "model.json", "--data", "train.csv", "--out", "p.csv") == 0
        rows = _rows(trained / "p.csv")
        assert rows[0] == ["row", "prediction"] and len(rows) == 501
        m = load_model(trained / "model.json")
        X = np.loadtxt(trained / "train.csv", delimiter=",", skiprows=1)[:, :5]
        f = m.forward(X)
        for i in (0, 7, 100, 250, 499):
            assert float(rows[i + 1][1]) == f[i]

    def test_header_only(self, trained):
        (trained / "empty.csv").write_text("x1,x2,x3,x4,x5\n")
        assert _run("predict", "--model", "model.json", "--data", "empty.csv", "--out", "p.csv") == 0
        assert _rows(trained / "p.csv") == [["row", "prediction"]]

    def test_arity(self, trained):
        (trained / "bad.csv").write_text("a,b\n1,2\n")
        assert _run("predict", "--model", "model.json", "--data", "bad.csv", "--out", "p.csv") == 2

    def test_logit_probability(self, workdir):
        X = np.random.default_rng(0).uniform(size=(300, 5))
        y = (X[:, 0] > 0.5).astype(float)
        write_csv(Dataset(X, y), workdir / "train.csv")
        cfg = _config(workdir, link="logit", loss='loss = "logistic"')
        assert _run("train", "--config", cfg) == 0
        assert _run("predict", "--model", "model.json", "--data", "train.csv", "--out", "p.csv") == 0
        rows = _rows(workdir / "p.csv")
        assert rows[0] == ["row", "prediction", "probability"]
        probs = np.array([float(r[2]) for r in rows[1:]])
        assert np.all((probs >= 0) & (probs <= 1))


class TestExplain:
    def test_records(self, trained):
        assert _run("explain", "--model", "model.json", "--data", "train.csv", "--out", "e.jsonl") == 0
        recs = [json.loads(l) for l in (trained / "e.jsonl").read_text().splitlines()]
        assert len(recs) == 500
        for r in recs[:20]:
            assert r["sum"] == pytest.approx(r["prediction_minus_beta0"], abs=1e-10)
            assert set(r["shap"]) == {"x1", "x2", "x3", "x4", "x5"}

    def test_matches_curves(self, trained):
        assert _run("curves", "--model", "model.json", "--out", "curves", "--grid", "11") == 0
        rows = _rows(trained / "curves" / "curve_x2.csv")[1:]
        xs = [float(r[0]) for r in rows]
        X = np.full((len(xs), 5), 0.5)
        X[:, 1] = xs
        write_csv(Dataset(X, np.zeros(len(xs))), trained / "probe.csv")
        assert _run("explain", "--model", "model.json", "--data", "probe.csv", "--out", "e.jsonl") == 0
        recs = [json.loads(l) for l in (trained / "e.jsonl").read_text().splitlines()]
        for rec, row in zip(recs, rows):
            assert rec["shap"]["x2"] == pytest.approx(float(row[2]), abs=1e-10)

    def test_malformed_model(self, trained):
        (trained / "broken.json").write_text("{not json")
        assert _run("explain", "--model", "broken.json", "--data", "train.csv", "--out", "e.jsonl") == 2


class TestCurves:
    def test_main_and_pair(self, workdir):
        _run("train", "--config", _config(workdir, order=2))
        assert _run("curves", "--model", "model.json", "--out", "c", "--grid", "3") == 0
        main_rows = _rows(workdir / "c" / "curve_x1.csv")
        assert main_rows[0] == ["x1_raw", "x1_transformed", "f"] and len(main_rows) == 4
        assert _run("curves", "--model", "model.json", "--out", "c2", "--grid", "201") == 0
        pair = _rows(workdir / "c2" / "curve_x1_x2.csv")
        assert pair[0] == ["x1", "x2", "f"]
        F = np.array([float(r[2]) for r in pair[1:]]).reshape(201, 201)
        scale = np.abs(F).max()
        assert np.abs(F.mean(0)).max() < 0.02 * scale
        assert np.abs(F.mean(1)).max() < 0.02 * scale

    def test_raw_units(self, trained):
        _run("curves", "--model", "model.json", "--out", "c", "--grid", "5")
        rows = _rows(trained / "c" / "curve_x1.csv")[1:]
        X = np.loadtxt(trained / "train.csv", delimiter=",", skiprows=1)
        assert float(rows[0][0]) == X[:, 0].min() and float(rows[-1][0]) == X[:, 0].max()

    def test_deterministic(self, trained):
        _run("curves", "--model", "model.json", "--out", "a")
        _run("curves", "--model", "model.json", "--out", "b")
        for f in (trained / "a").iterdir():
            assert f.read_bytes() == (trained / "b" / f.name).read_bytes()


class TestOtherCommands:
    def test_importance(self, trained):
        assert _run("importance", "--model", "model.json", "--data", "train.csv", "--out", "i.json") == 0
        doc = json.loads((trained / "i.json").read_text())
        m = load_model(trained / "model.json")
        X = np.loadtxt(trained / "train.csv", delimiter=",", skiprows=1)[:, :5]
        ref = importance_scores(m, X)
        assert [c["raw"] for c in doc["components"]] == ref.raw.tolist()
        assert _run("importance", "--model", "model.json", "--data", "train.csv", "--out", "i.csv") == 0

    def test_stability(self, workdir):
        cfg = _config(workdir)
        assert _run("--seed", "2", "stability", "--config", cfg, "--repetitions", "2", "--out", "s.json") == 0
        doc = json.loads((workdir / "s.json").read_text())
        assert 0 <= doc["overall"] <= 1 and len(doc["runs"]) == 2
        assert set(doc["per_component"]) == {"1", "2", "3", "4", "5"}

    def test_stability_identical_subsamples(self, workdir):
        cfg = _config(workdir)
        assert _run("stability", "--config", cfg, "--repetitions", "2", "--fraction", "1.0",
                    "--out", "s.json") == 0
        # the subsample is the full set but seeds differ per repetition
        assert json.loads((workdir / "s.json").read_text())["overall"] > 0

    def test_purify_tables(self, workdir):
        g = np.linspace(0, 1, 41)
        A, B = np.meshgrid(g, g, indexing="ij")
        doc = {"beta0": 0.0, "axes": {"1": g.tolist(), "2": g.tolist()},
               "components": [{"S": [1], "values": (-g).tolist()},
                              {"S": [2], "values": g.tolist()},
                              {"S": [1, 2], "values": (A * (B + 2)).tolist()}]}
        (workdir / "t.json").write_text(json.dumps(doc))
        assert _run("purify", "--tables", "t.json", "--out", "p.json") == 0
        out = json.loads((workdir / "p.json").read_text())
        assert out["beta0"] == pytest.approx(1.25, abs=1e-12)
        f12 = np.array(out["components"][2]["values"])
        np.testing.assert_allclose(f12, (A - 0.5) * (B - 0.5), atol=1e-12)

    def test_purify_model(self, workdir):
        _run("train", "--config", _config(workdir, order=2))
        assert _run("purify", "--model", "model.json", "--out", "pm", "--grid", "31") == 0
        summary = json.loads((workdir / "pm" / "summary.json").read_text())
        assert max(summary["max_axis_mean"].values()) < 1e-10

    def test_purify_needs_one_input(self, workdir):
        assert _run("purify", "--out", "x") == 1

    def test_purify_malformed(self, workdir):
        (workdir / "t.json").write_text('{"axes": {}}')
        assert _run("purify", "--tables", "t.json", "--out", "p.json") == 2

    def test_synth(self, workdir):
        assert _run("--seed", "5", "synth", "--kind", "F2", "--n", "30", "--out", "s.csv") == 0
        rows = _rows(workdir / "s.csv")
        assert len(rows) == 31 and rows[0][-1] == "y" and len(rows[0]) == 11
        _run("--seed", "5", "synth", "--kind", "F2", "--n", "30", "--out", "s2.csv")
        assert (workdir / "s.csv").read_bytes() == (workdir / "s2.csv").read_bytes()

    def test_bench(self, workdir):
        assert _run("bench", "--experiment", "selection", "--n", "400", "--repetitions", "2",
                    "--K", "3", "--epochs", "2", "--out", "b") == 0
        doc = json.loads((workdir / "b" / "selection.json").read_text())
        assert len(doc["values"]) == 2 and doc["spec"]["K"] == 3
