import csv
import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from graphcox.benchmark import (
    BenchmarkError,
    BenchmarkRun,
    FitSettings,
    fit_model,
    run_benchmark,
)
from graphcox.cli import main
from graphcox.graph import ErdosRenyi
from graphcox.simulation import StudySpec, generate_replication

SMALL = {
    "topology": {"kind": "erdos_renyi", "p": 10, "p0": 0.1, "seed": 3},
    "n_train": 60,
    "n_test": 80,
    "replications": 2,
    "seed": 11,
    "n_lambda": 8,
    "max_iter": 1000,
    "cv_max_iter": 200,
}


def small_spec(**kw):
    d = dict(SMALL, **kw)
    return StudySpec.from_dict(d)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def spec_file(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(SMALL))
    return path


class TestBenchmark:
    def test_zero_model(self, tmp_path):
        spec = small_spec(replications=3)
        report = run_benchmark(BenchmarkRun(spec, ("zero",), tmp_path))
        (row,) = report.summary()
        assert row["cindex_mean"] == 0.5 and row["cindex_sd"] == 0.0
        norms = [np.linalg.norm(generate_replication(spec, r).beta0) for r in range(3)]
        assert_allclose(row["l2_mean"], np.mean(norms), rtol=1e-12)
        assert row["replications"] == 3

    def test_files_and_manifest(self, tmp_path):
        run_benchmark(BenchmarkRun(small_spec(), ("zero", "lasso"), tmp_path))
        for name in ("replications.csv", "report.csv", "report.json", "manifest.json"):
            assert (tmp_path / name).exists()
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["status"] == "complete"
        assert manifest["replications_completed"] == [0, 1]
        assert manifest["models"] == ["zero", "lasso"]
        rows = read_rows(tmp_path / "replications.csv")
        assert len(rows) == 4
        report = json.loads((tmp_path / "report.json").read_text())
        assert [r["model"] for r in report["summary"]] == ["zero", "lasso"]

    def test_deterministic_and_thread_independent(self, tmp_path):
        spec = small_spec()
        models = ("graph", "lasso", "cox_unregularized")
        a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        run_benchmark(BenchmarkRun(spec, models, a))
        run_benchmark(BenchmarkRun(spec, models, b))
        run_benchmark(BenchmarkRun(spec, models, c, threads=2))
        for name in ("replications.csv", "report.csv", "report.json", "manifest.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
            assert (a / name).read_bytes() == (c / name).read_bytes()

    @pytest.mark.parametrize("kw", [
        {"models": ()}, {"models": ("bogus",)}, {"models": ("lasso", "lasso")}, {"threads": 0},
    ])
    def test_run_validation(self, kw):
        with pytest.raises(ValueError):
            BenchmarkRun(small_spec(), **kw)

    def test_failure_keeps_partial_results(self, tmp_path, monkeypatch):
        import graphcox.benchmark as bm

        real = bm.run_replication

        def flaky(spec, r, models):
            if r == 1:
                raise np.linalg.LinAlgError("boom")
            return real(spec, r, models)

        monkeypatch.setattr(bm, "run_replication", flaky)
        with pytest.raises(BenchmarkError):
            run_benchmark(BenchmarkRun(small_spec(), ("zero",), tmp_path))
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["status"] == "partial"
        assert manifest["replications_completed"] == [0]
        assert "boom" in manifest["error"]

    def test_fit_model_fixed_lambda(self):
        rep = generate_replication(small_spec(), 0)
        fit, cv = fit_model("lasso", rep.train, rep.graph, FitSettings(), lam=1e6)
        assert cv is None and np.all(fit.beta == 0)
        with pytest.raises(ValueError):
            fit_model("nope", rep.train, rep.graph)


class TestCli:
    def test_pipeline_matches_benchmark_row(self, tmp_path, spec_file):
        bench = tmp_path / "bench"
        assert main(["benchmark", "--spec", str(spec_file), "--out", str(bench), "--models", "graph,lasso"]) == 0
        rows = read_rows(bench / "replications.csv")
        spec = small_spec()
        r = 1
        sim = tmp_path / "sim"
        assert main(["simulate", "--spec", str(spec_file), "--replication", str(r), "--out", str(sim)]) == 0
        seed = json.loads((sim / "truth.json").read_text())["seed"]
        assert seed == spec.seed + r
        for model in ("graph", "lasso"):
            fit = tmp_path / f"{model}.json"
            code = main(["fit", "--data", str(sim / "train.csv"), "--graph", str(sim / "graph.txt"),
                         "--penalty", model, "--lambda", "cv", "--seed", str(seed),
                         "--spec", str(spec_file), "--out", str(fit)])
            assert code in (0, 3)
            scores = tmp_path / f"{model}_scores.csv"
            assert main(["predict", "--data", str(sim / "test.csv"), "--fit", str(fit), "--out", str(scores)]) == 0
            ev = tmp_path / f"{model}_eval.json"
            assert main(["evaluate", "--data", str(sim / "test.csv"), "--scores", str(scores),
                         "--fit", str(fit), "--truth", str(sim / "truth.json"), "--out", str(ev)]) == 0
            got = json.loads(ev.read_text())
            (row,) = [x for x in rows if x["model"] == model and int(x["replication"]) == r]
            assert got["c_index"] == float(row["c_index"])
            assert got["l2_error"] == float(row["l2_error"])
            assert got["rpe"] == float(row["rpe"])
            assert json.loads(fit.read_text())["lambda"] == float(row["lambda"])

    def test_cli_benchmark_deterministic(self, tmp_path, spec_file):
        for d in ("a", "b"):
            assert main(["benchmark", "--spec", str(spec_file), "--out", str(tmp_path / d),
                         "--models", "zero,ridge"]) == 0
        for name in ("replications.csv", "report.csv", "report.json", "manifest.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seed_override_changes_output(self, tmp_path, spec_file):
        main(["benchmark", "--spec", str(spec_file), "--out", str(tmp_path / "a"), "--models", "zero"])
        main(["benchmark", "--spec", str(spec_file), "--out", str(tmp_path / "b"), "--models", "zero",
              "--seed", "99"])
        assert (tmp_path / "a" / "report.csv").read_bytes() != (tmp_path / "b" / "report.csv").read_bytes()

    def test_graph_command(self, tmp_path, spec_file):
        out = tmp_path / "g.txt"
        assert main(["graph", "--spec", str(spec_file), "--out", str(out)]) == 0
        from graphcox.graph import generate_graph, read_edge_list
        assert read_edge_list(out, 10) == generate_graph(ErdosRenyi(10, 0.1, seed=3))
        sim = tmp_path / "sim"
        main(["simulate", "--spec", str(spec_file), "--out", str(sim)])
        assert main(["graph", "--data", str(sim / "train.csv"), "--out", str(tmp_path / "h.txt"),
                     "--merge", str(out)]) == 0
        assert read_edge_list(tmp_path / "h.txt", 10).has_edge(*sorted(read_edge_list(out, 10).edges)[0]) \
            or not read_edge_list(out, 10).edges

    def test_cv_command(self, tmp_path, spec_file):
        sim = tmp_path / "sim"
        main(["simulate", "--spec", str(spec_file), "--out", str(sim)])
        out = tmp_path / "cv.json"
        assert main(["cv", "--data", str(sim / "train.csv"), "--penalty", "lasso", "--spec", str(spec_file),
                     "--out", str(out)]) == 0
        d = json.loads(out.read_text())
        assert len(d["lambda_grid"]) == 8 and d["best_lambda"] in d["lambda_grid"]

    @pytest.mark.parametrize("argv", [
        [],
        ["fit"],
        ["frobnicate"],
        ["benchmark", "--out", "x"],
        ["graph", "--out", "x"],
        ["cv", "--data", "d.csv", "--penalty", "zero", "--out", "x"],
    ])
    def test_usage_errors_exit_1(self, argv, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        if argv[:1] == ["cv"]:
            (tmp_path / "d.csv").write_text("time,status,x0\n1.0,1,0.5\n2.0,1,0.1\n")
        assert main(argv) == 1

    def test_bad_lambda_and_models(self, tmp_path, spec_file):
        sim = tmp_path / "sim"
        main(["simulate", "--spec", str(spec_file), "--out", str(sim)])
        assert main(["fit", "--data", str(sim / "train.csv"), "--penalty", "lasso", "--lambda", "-1",
                     "--out", str(tmp_path / "f.json")]) == 1
        assert main(["fit", "--data", str(sim / "train.csv"), "--penalty", "graph",
                     "--out", str(tmp_path / "f.json")]) == 1
        assert main(["benchmark", "--spec", str(spec_file), "--out", str(tmp_path / "b"),
                     "--models", "lasso,bogus"]) == 1

    def test_data_errors_exit_2(self, tmp_path, spec_file):
        assert main(["fit", "--data", str(tmp_path / "missing.csv"), "--penalty", "lasso",
                     "--out", str(tmp_path / "f.json")]) == 2
        bad = tmp_path / "bad.csv"
        bad.write_text("time,status,x0\n1.0,2,0.5\n")
        assert main(["fit", "--data", str(bad), "--penalty", "lasso", "--out", str(tmp_path / "f.json")]) == 2
        bad_spec = tmp_path / "bad_spec.json"
        bad_spec.write_text(json.dumps({"topology": {"kind": "ring", "p": 5}, "censor_rate": 2.0}))
        assert main(["benchmark", "--spec", str(bad_spec), "--out", str(tmp_path / "b")]) == 2

    def test_unconverged_fit_exits_3(self, tmp_path, spec_file):
        sim = tmp_path / "sim"
        main(["simulate", "--spec", str(spec_file), "--out", str(sim)])
        tight = tmp_path / "tight.json"
        tight.write_text(json.dumps(dict(SMALL, max_iter=1, tol=1e-12)))
        out = tmp_path / "f.json"
        code = main(["fit", "--data", str(sim / "train.csv"), "--graph", str(sim / "graph.txt"),
                     "--penalty", "graph", "--lambda", "0.001", "--spec", str(tight), "--out", str(out)])
        assert code == 3
        assert json.loads(out.read_text())["converged"] is False

    def test_predict_dimension_mismatch(self, tmp_path, spec_file):
        sim = tmp_path / "sim"
        main(["simulate", "--spec", str(spec_file), "--out", str(sim)])
        fit = tmp_path / "f.json"
        fit.write_text(json.dumps({"beta": [0.0, 1.0], "converged": True, "iterations": 1,
                                   "objective": [0.0], "lambda": 0.0, "penalty": "lasso"}))
        assert main(["predict", "--data", str(sim / "test.csv"), "--fit", str(fit)]) == 2
        fit.write_text(json.dumps({"beta": [0.0] * 10, "objective": 0.0}))
        assert main(["predict", "--data", str(sim / "test.csv"), "--fit", str(fit)]) == 2

    def test_version(self, capsys):
        assert main(["--version"]) == 0
        assert "0.1.0" in capsys.readouterr().out
