"""End-to-end tests of the command-line entry point."""

import json

import pytest

from mirrorcert import io
from mirrorcert.cli import main


@pytest.fixture
def out(isolated, tmp_path):
    return tmp_path / "out"


def _write(path, data):
    path.write_text(json.dumps(data))
    return str(path)


class TestSinkhorn:
    def test_random_instance_certified(self, out):
        code = main(["sinkhorn", "--seed", "1", "--size", "5", "--iters", "30", "--certify", "--out-dir", str(out)])
        assert code == 0
        header, rows = io.read_csv(out / "sinkhorn_trace.csv")
        assert header == ["n", "objective", "tv_x", "tv_y"]
        assert len(rows) == 31
        certificate = io.read_json(out / "sinkhorn_certificate.json")
        assert certificate["ok"] is True
        assert certificate["stability"]["pairs"] == {"reference": 31, "consecutive": 30}
        manifest = io.read_json(out / "sinkhorn_manifest.json")
        assert manifest["status"] == "ok"
        assert manifest["config"]["seed"] == 1

    def test_zero_cost_from_files(self, out, tmp_path):
        args = [
            "sinkhorn",
            "--cost", _write(tmp_path / "cost.json", [[0.0] * 3] * 3),
            "--mu", _write(tmp_path / "mu.json", {"weights": [0.2, 0.3, 0.5]}),
            "--nu", _write(tmp_path / "nu.json", [0.25, 0.25, 0.5]),
            "--epsilon", "1",
            "--iters", "5",
            "--certify",
            "--out-dir", str(out),
        ]
        assert main(args) == 0
        checks = io.read_json(out / "sinkhorn_certificate.json")["checks"]
        assert all(checks.values())

    def test_single_row_csv_cost(self, out, tmp_path):
        (tmp_path / "cost.csv").write_text("0.0,1.0,2.0\n")
        args = [
            "sinkhorn",
            "--cost", str(tmp_path / "cost.csv"),
            "--mu", _write(tmp_path / "mu.json", [1.0]),
            "--nu", _write(tmp_path / "nu.json", [0.25, 0.25, 0.5]),
            "--epsilon", "1",
            "--iters", "3",
            "--out-dir", str(out),
        ]
        assert main(args) == 0
        assert io.read_json(out / "sinkhorn_manifest.json")["status"] == "ok"

    def test_missing_file(self, out, tmp_path):
        args = ["sinkhorn", "--cost", str(tmp_path / "absent.json"), "--epsilon", "1", "--out-dir", str(out)]
        assert main(args) == 1
        assert not (out / "sinkhorn_manifest.json").exists()

    def test_partial_files(self, out, tmp_path):
        args = ["sinkhorn", "--cost", _write(tmp_path / "cost.json", [[0.0]]), "--epsilon", "1", "--out-dir", str(out)]
        assert main(args) == 1

    def test_files_need_epsilon(self, out, tmp_path):
        args = [
            "sinkhorn",
            "--cost", _write(tmp_path / "cost.json", [[0.0]]),
            "--mu", _write(tmp_path / "mu.json", [1.0]),
            "--nu", _write(tmp_path / "nu.json", [1.0]),
            "--out-dir", str(out),
        ]
        assert main(args) == 1

    def test_numeric_error(self, out, tmp_path):
        args = [
            "sinkhorn",
            "--cost", _write(tmp_path / "cost.json", [[0.0, 0.0]]),
            "--mu", _write(tmp_path / "mu.json", [1.0]),
            "--nu", _write(tmp_path / "nu.json", [1.0, 0.0]),
            "--epsilon", "1",
            "--out-dir", str(out),
        ]
        assert main(args) == 2
        assert io.read_json(out / "sinkhorn_manifest.json")["status"] == "numeric_error"

    def test_config_file_overrides_flags(self, out, tmp_path):
        config = tmp_path / "run.yaml"
        config.write_text("iters: 4\nsizes: [3]\n")
        assert main(["sinkhorn", "--iters", "50", "--config", str(config), "--out-dir", str(out)]) == 0
        _, rows = io.read_csv(out / "sinkhorn_trace.csv")
        assert len(rows) == 5

    def test_trace_out_and_log_file(self, out, tmp_path):
        trace, log = tmp_path / "t" / "trace.csv", tmp_path / "log.jsonl"
        args = ["sinkhorn", "--size", "3", "--iters", "2", "--trace-out", str(trace), "--log-file", str(log), "--out-dir", str(out)]
        assert main(args) == 0
        assert trace.exists()
        entry = json.loads(log.read_text().splitlines()[-1])
        assert entry["event"] == "experiment"
        assert entry["status"] == "ok"
        assert list(entry)[:3] == ["timestamp", "event", "kind"]


class TestOtherExperiments:
    def test_latent_em(self, out):
        assert main(["latent-em", "--seed", "2", "--size", "4", "6", "--iters", "50", "--certify", "--out-dir", str(out)]) == 0
        assert io.read_json(out / "latent_em_certificate.json")["ok"] is True

    def test_latent_em_needs_one_kernel(self, out, tmp_path):
        args = ["latent-em", "--obs", _write(tmp_path / "obs.json", [0.5, 0.5]), "--out-dir", str(out)]
        assert main(args) == 1

    def test_latent_em_identity_kernel(self, out, tmp_path):
        args = [
            "latent-em",
            "--kernel", _write(tmp_path / "k.json", [[1.0, 0.0], [0.0, 1.0]]),
            "--obs", _write(tmp_path / "obs.json", [0.3, 0.7]),
            "--iters", "3",
            "--out-dir", str(out),
        ]
        assert main(args) == 0
        _, rows = io.read_csv(out / "latent_em_trace.csv")
        assert float(rows[-1][1]) == pytest.approx(0.0, abs=1e-15)

    def test_mmd_md(self, out):
        assert main(["mmd-md", "--seed", "3", "--size", "6", "--iters", "40", "--certify", "--out-dir", str(out)]) == 0
        assert io.read_json(out / "mmd_md_certificate.json")["ok"] is True

    def test_verify_quick(self, out):
        assert main(["verify", "--quick", "--out-dir", str(out)]) == 0
        assert io.read_json(out / "verify_report.json")["ok"] is True


class TestGen:
    def test_deterministic(self, tmp_path, isolated):
        for name in ("a", "b"):
            assert main(["gen", "sinkhorn", "--seed", "42", "--size", "4", "--out-dir", str(tmp_path / name)]) == 0
        for name in ("cost.json", "mu.json", "nu.json", "instance.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_generated_instance_runs(self, tmp_path, isolated):
        data = tmp_path / "data"
        assert main(["gen", "latent-em", "--seed", "5", "--size", "3", "4", "--out-dir", str(data)]) == 0
        args = [
            "latent-em",
            "--kernel", str(data / "kernel.json"),
            "--obs", str(data / "obs.json"),
            "--init", str(data / "init.json"),
            "--iters", "10",
            "--out-dir", str(tmp_path / "run"),
        ]
        assert main(args) == 0

    def test_size_cap(self, out):
        assert main(["gen", "mmd-md", "--size", "501", "--out-dir", str(out)]) == 1


class TestBatch:
    def test_isolated_outputs_and_worst_exit_code(self, out, tmp_path):
        good = tmp_path / "good.yaml"
        good.write_text("kind: sinkhorn\niters: 3\nsizes: [3]\n")
        bad = tmp_path / "bad.yaml"
        bad.write_text("kind: sinkhorn\nspeed: 3\n")
        assert main(["batch", str(good), "--out-dir", str(out), "--workers", "2"]) == 0
        assert (out / "good" / "sinkhorn_trace.csv").exists()
        assert main(["batch", str(good), str(bad), "--out-dir", str(out)]) == 1


class TestEnvironment:
    def test_bad_seed_variable(self, out, monkeypatch):
        monkeypatch.setenv("MIRRORCERT_SEED", "x")
        assert main(["verify", "--quick", "--out-dir", str(out)]) == 1
