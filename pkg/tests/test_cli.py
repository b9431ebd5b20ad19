import json
import subprocess
import sys

import numpy as np
import pytest
from click.testing import CliRunner

from perspbnb.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def gen_instance(runner, tmp_path, **overrides):
    args = {"--task": "squared", "--n": "30", "--p": "12", "--k-true": "3",
            "--sigma": "0.5", "--snr": "5", "--seed": "0",
            "--out": str(tmp_path / "inst")}
    args.update(overrides)
    flat = [x for kv in args.items() for x in kv]
    res = runner.invoke(main, ["gen", *flat])
    assert res.exit_code == 0, res.output
    return tmp_path / "inst"


class TestGen:
    def test_writes_four_files(self, runner, tmp_path):
        out = gen_instance(runner, tmp_path)
        for name in ("X.csv", "y.csv", "meta.json", "beta_true.csv"):
            assert (out / name).exists()

    def test_deterministic_content(self, runner, tmp_path):
        a = gen_instance(runner, tmp_path / "a")
        b = gen_instance(runner, tmp_path / "b")
        for name in ("X.csv", "y.csv", "meta.json", "beta_true.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_golden_file_hashes(self, runner, tmp_path):
        # frozen at first build: the generator is a pure function of the
        # seed, so these digests must never drift
        import hashlib
        out = gen_instance(runner, tmp_path, **{"--n": "100", "--p": "50",
                                                "--k-true": "5", "--seed": "0"})
        golden = {
            "X.csv": "e7982976e461031e8cf30abb95865fd88c9927ed3304ff03556813cb8081a165",
            "y.csv": "fa5d22843ba2a7ca3a011ccb4e5e3ced5c1112c33251a4f7dfa0c86380d95242",
            "beta_true.csv": "bfec2d6473c5ab66ffb8b5e9a6b3f56d7ed3ff7841bb5baf353047222ced5eb2",
        }
        for name, digest in golden.items():
            assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest

    def test_meta_embeds_manifest(self, runner, tmp_path):
        out = gen_instance(runner, tmp_path)
        meta = json.loads((out / "meta.json").read_text())
        assert meta["manifest"]["command"] == "gen"
        assert meta["manifest"]["seed"] == 0
        assert "version" in meta["manifest"]

    def test_bad_sigma_exits_2(self, runner, tmp_path):
        res = runner.invoke(main, ["gen", "--n", "10", "--p", "5", "--k-true", "1",
                                   "--sigma", "1.5", "--out", str(tmp_path / "x")])
        assert res.exit_code == 2

    def test_zero_p_exits_2(self, runner, tmp_path):
        res = runner.invoke(main, ["gen", "--n", "10", "--p", "0", "--k-true", "1",
                                   "--out", str(tmp_path / "x")])
        assert res.exit_code == 2


class TestRelax:
    def test_reaches_gap_tolerance(self, runner, tmp_path):
        data = gen_instance(runner, tmp_path)
        res = runner.invoke(main, ["relax", "--data", str(data), "--k", "3",
                                   "--m", "2", "--lambda2", "1", "--tol", "1e-6",
                                   "--restart", "gap"])
        assert res.exit_code == 0, res.output
        out = json.loads(res.output)
        assert out["termination"] == "GapTol"
        assert out["gap"] <= 1e-6
        assert out["manifest"]["command"] == "relax"
        assert set(out["manifest"]["input_hashes"]) == {"X.csv", "y.csv", "meta.json"}

    def test_no_restart_needs_more_iterations(self, runner, tmp_path):
        data = gen_instance(runner, tmp_path, **{"--n": "60", "--p": "60",
                                                 "--k-true": "5"})
        iters = {}
        for mode in ("gap", "none"):
            res = runner.invoke(main, ["relax", "--data", str(data), "--k", "5",
                                       "--m", "2", "--lambda2", "1", "--tol", "1e-6",
                                       "--restart", mode])
            assert res.exit_code == 0, res.output
            iters[mode] = json.loads(res.output)["iters"]
        assert iters["none"] > iters["gap"]

    def test_huge_tolerance_immediate(self, runner, tmp_path):
        data = gen_instance(runner, tmp_path)
        baseline = runner.invoke(main, ["relax", "--data", str(data), "--k", "3",
                                        "--m", "2", "--tol", "1e-6"])
        res = runner.invoke(main, ["relax", "--data", str(data), "--k", "3",
                                   "--m", "2", "--tol", "10"])
        out = json.loads(res.output)
        assert out["termination"] == "GapTol"
        # loose tolerance stops almost at once (well before the tight run)
        assert out["iters"] <= max(5, json.loads(baseline.output)["iters"] // 4)

    def test_trace_and_plot_files(self, runner, tmp_path):
        data = gen_instance(runner, tmp_path)
        trace = tmp_path / "trace.csv"
        res = runner.invoke(main, ["relax", "--data", str(data), "--k", "3",
                                   "--m", "2", "--trace", str(trace), "--plot"])
        assert res.exit_code == 0, res.output
        lines = trace.read_text().strip().splitlines()
        assert lines[0] == "iter,phi,psi,gap,restarted"
        assert (tmp_path / "trace.png").exists()

    def test_rerun_reproduces_output(self, runner, tmp_path):
        data = gen_instance(runner, tmp_path)
        outs = []
        for _ in range(2):
            res = runner.invoke(main, ["relax", "--data", str(data), "--k", "3",
                                       "--m", "2", "--tol", "1e-8"])
            doc = json.loads(res.output)
            doc.pop("seconds")   # wall clock is not reproducible
            outs.append(json.dumps(doc, sort_keys=True))
        assert outs[0] == outs[1]

    def test_bad_tol_exits_2(self, runner, tmp_path):
        data = gen_instance(runner, tmp_path)
        res = runner.invoke(main, ["relax", "--data", str(data), "--tol", "-1"])
        assert res.exit_code == 2

    def test_plot_without_trace_exits_2(self, runner, tmp_path):
        data = gen_instance(runner, tmp_path)
        res = runner.invoke(main, ["relax", "--data", str(data), "--plot"])
        assert res.exit_code == 2


class TestCertify:
    def test_small_instance_optimal(self, runner, tmp_path):
        from perspbnb.oracles import oracle_certify_enumerate
        from perspbnb.problem import load_instance_dir
        data = gen_instance(runner, tmp_path)
        res = runner.invoke(main, ["certify", "--data", str(data), "--k", "2",
                                   "--m", "2", "--lambda2", "1"])
        assert res.exit_code == 0, res.output
        doc = json.loads(res.output)
        inst = load_instance_dir(data, lambda2=1.0, M=2.0, k=2)
        opt, _ = oracle_certify_enumerate(inst)
        assert doc["status"] in ("Optimal", "GapLimit")
        assert doc["objective"] == pytest.approx(opt, abs=1e-6)
        assert doc["lower_bound"] <= doc["objective"] + 1e-9

    def test_time_limit_status(self, runner, tmp_path):
        data = gen_instance(runner, tmp_path)
        res = runner.invoke(main, ["certify", "--data", str(data), "--k", "2",
                                   "--m", "2", "--time-limit", "0.001"])
        doc = json.loads(res.output)
        assert doc["status"] == "TimeLimit"
        assert doc["lower_bound"] <= doc["objective"] + 1e-9

    def test_missing_data_exits_2(self, runner):
        res = runner.invoke(main, ["certify", "--k", "2"])
        assert res.exit_code == 2

    def test_writes_output_file(self, runner, tmp_path):
        data = gen_instance(runner, tmp_path)
        out = tmp_path / "cert.json"
        res = runner.invoke(main, ["certify", "--data", str(data), "--k", "2",
                                   "--m", "2", "--out", str(out)])
        assert res.exit_code == 0
        assert json.loads(out.read_text())["status"]


class TestBenchKernels:
    def test_csv_columns_and_plot(self, runner, tmp_path):
        out = tmp_path / "bench.csv"
        res = runner.invoke(main, ["bench-kernels", "--p-list", "500,2000",
                                   "--k", "5", "--repeats", "2",
                                   "--out", str(out), "--plot"])
        assert res.exit_code == 0, res.output
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "kernel,p,mean_seconds,std_seconds,repeats"
        assert len(lines) == 1 + 3 * 2
        assert (tmp_path / "bench.png").exists()

    def test_single_repeat_std_zero(self, runner):
        res = runner.invoke(main, ["bench-kernels", "--p-list", "500",
                                   "--k", "5", "--repeats", "1"])
        assert res.exit_code == 0, res.output
        rows = res.output.strip().splitlines()[1:]
        assert all(row.split(",")[3] == "0" for row in rows)

    def test_bad_plist_exits_2(self, runner):
        res = runner.invoke(main, ["bench-kernels", "--p-list", "12,foo"])
        assert res.exit_code == 2


class TestEntryPoint:
    def test_module_invocation(self):
        proc = subprocess.run([sys.executable, "-m", "perspbnb.cli", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        for sub in ("gen", "relax", "certify", "bench-kernels"):
            assert sub in proc.stdout
