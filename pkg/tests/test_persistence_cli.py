import json

import numpy as np
import pytest

from tesskernel.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, main, tsa_score
from tesskernel.data import generate_circle, load_csv
from tesskernel.persistence import FORMAT_VERSION, ModelFileError, load_model, save_model
from tesskernel.qp import decision_function
from tesskernel.train import TrainConfig, train_model


@pytest.fixture(scope="module")
def circle_models():
    ds = generate_circle(30, seed=2)
    out = {}
    for method in ("tessellated-saddle", "mkl-gaussian-poly", "mkl-combined"):
        out[method] = train_model(ds, TrainConfig(method=method, R=5, mkl_max_iter=5))[0]
    return out


@pytest.mark.parametrize("method", ["tessellated-saddle", "mkl-gaussian-poly", "mkl-combined"])
def test_model_round_trip(tmp_path, circle_models, method):
    model = circle_models[method]
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    X = np.random.default_rng(0).uniform(-0.8, 0.8, (100, 2))
    np.testing.assert_allclose(decision_function(back, X), decision_function(model, X), rtol=0, atol=1e-12)


def test_truncated_file_is_rejected(tmp_path, circle_models):
    path = tmp_path / "m.json"
    save_model(circle_models["tessellated-saddle"], path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(ModelFileError, match="checksum"):
        load_model(path)


def test_tampered_payload_is_rejected(tmp_path, circle_models):
    path = tmp_path / "m.json"
    save_model(circle_models["tessellated-saddle"], path)
    doc = json.loads(path.read_text())
    doc["payload"]["bias"] += 1.0
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelFileError, match="checksum"):
        load_model(path)


def test_unknown_version_is_rejected(tmp_path, circle_models):
    path = tmp_path / "m.json"
    save_model(circle_models["tessellated-saddle"], path)
    doc = json.loads(path.read_text())
    doc["format_version"] = FORMAT_VERSION + 1
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelFileError, match="version"):
        load_model(path)


def test_tsa_of_constant_predictor():
    y = np.array([1, -1] * 10)
    assert tsa_score(np.ones(20, dtype=int), y) == 0.5


def test_cli_generate(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["generate", "--kind", "circle", "--m", "50", "--seed", "1", "-o", str(a)]) == EXIT_OK
    assert main(["generate", "--kind", "circle", "--m", "50", "--seed", "1", "-o", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    assert load_csv(a).m == 50
    s = tmp_path / "s.csv"
    assert main(["generate", "--kind", "spiral", "--m", "150", "-o", str(s)]) == EXIT_OK
    assert set(load_csv(s).labels.tolist()) == {-1, 1}
    assert main(["generate", "--kind", "circle", "--m", "0", "-o", str(a)]) == EXIT_USAGE


def test_cli_train_evaluate_predict(tmp_path, capsys):
    data = tmp_path / "toy.csv"
    main(["generate", "--kind", "circle", "--m", "30", "--seed", "3", "-o", str(data)])
    model = tmp_path / "model.json"
    assert main(["train", "--data", str(data), "-o", str(model), "--C", "10"]) == EXIT_OK
    capsys.readouterr()
    assert main(["evaluate", "--model", str(model), "--data", str(data)]) == EXIT_OK
    assert "TSA 1.000000" in capsys.readouterr().out
    pred = tmp_path / "pred.csv"
    assert main(["predict", "--model", str(model), "--data", str(data), "-o", str(pred)]) == EXIT_OK
    assert len(pred.read_text().splitlines()) == 31


def test_cli_degree_zero_one_feature(tmp_path):
    data = tmp_path / "line.csv"
    data.write_text("x,label\n0.1,1\n0.35,0\n0.6,1\n0.85,0\n")
    model = tmp_path / "m.json"
    assert main(["train", "--data", str(data), "-o", str(model), "--degree", "0", "--C", "100"]) == EXIT_OK
    kern = json.loads(model.read_text())["payload"]["kernel"]
    # one basis element: four scalar coefficients
    assert [np.array(kern[k]).shape for k in ("Q1", "Q2", "Q3", "Q4")] == [(1, 1)] * 4


def test_cli_errors(tmp_path):
    missing = str(tmp_path / "missing.csv")
    assert main(["train", "--data", missing, "-o", str(tmp_path / "m.json")]) == EXIT_IO
    empty = tmp_path / "empty.csv"
    empty.write_text("a,label\n")
    assert main(["evaluate", "--model", str(tmp_path / "m.json"), "--data", str(empty)]) == EXIT_IO
    assert main(["train"]) == EXIT_USAGE
    assert main(["benchmark", "--generated", "circle:20", "--out-dir", str(tmp_path / "b")]) == EXIT_USAGE


def test_mkl_random_tess_reproducible():
    ds = generate_circle(24, seed=5)
    cfg = TrainConfig(method="mkl-random-tess", R=300, seed=9, mkl_max_iter=3)
    _, s1 = train_model(ds, cfg)
    _, s2 = train_model(ds, cfg)
    assert s1.extra["mu"] == s2.extra["mu"]


def test_benchmark_records_and_table(tmp_path, capsys):
    args = ["benchmark", "--generated", "circle:30", "--trials", "1", "--C-grid", "1,10", "--methods", "tessellated-saddle,fixed-kernel"]
    assert main(args + ["--out-dir", str(tmp_path / "r1")]) == EXIT_OK
    table = capsys.readouterr().out
    for col in ("Method", "Accuracy", "Time", "Data Features"):
        assert col in table
    assert "± 0.00" in table.splitlines()[2]
    main(args + ["--out-dir", str(tmp_path / "r2")])
    assert (tmp_path / "r1/records.csv").read_bytes() == (tmp_path / "r2/records.csv").read_bytes()
    summary = json.loads((tmp_path / "r1/summary.json").read_text())
    assert all(s["accuracy_std"] == 0.0 for s in summary["stats"])


def test_scaling_study_records(tmp_path):
    args = ["scaling-study", "--kind", "spiral", "--m-grid", "40,80,160", "--test-size", "100", "--C", "10"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == EXIT_OK
    rows = (tmp_path / "a/records.csv").read_text().splitlines()
    assert len(rows) == 4
    ms, tsa, res = [], [], []
    for line in rows[1:]:
        f = line.split(",")
        ms.append(int(f[2]))
        tsa.append(float(f[4]))
        res.append(float(f[5]))
    assert ms == [40, 80, 160]
    assert all(abs(r - (1 - t)) < 1e-15 for r, t in zip(res, tsa))
    assert (tmp_path / "a/records.csv").read_bytes() == (tmp_path / "b/records.csv").read_bytes()
