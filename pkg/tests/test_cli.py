import json

import numpy as np
import pytest

from nmfdyn.cascades import load_cascades
from nmfdyn.cli import main, parse_grid, parse_sources, UsageError
from nmfdyn.model import load_model
from nmfdyn.network import load_network

TRAIN_CONFIG = {"batch_size": 20, "epochs": 2, "lr": 0.01,
                "integrator": {"method": "rk4", "steps": 20, "T": 10.0}}


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    spec = write_json(d / "spec.json", {"seed": "hier", "n": 8, "degree": 2})
    assert main(["net-gen", "--spec", spec, "--out", str(d / "net.tsv"), "--seed", "1"]) == 0
    assert main(["simulate", "--net", str(d / "net.tsv"), "--sources", "5", "--per-source", "4",
                 "--T", "10", "--out", str(d / "c.jsonl"), "--seed", "2"]) == 0
    cfg = write_json(d / "train.json", TRAIN_CONFIG)
    assert main(["train", "--cascades", str(d / "c.jsonl"), "--config", cfg,
                 "--out", str(d / "model.json"), "--seed", "3"]) == 0
    return d


class TestParsing:
    def test_sources(self):
        assert parse_sources("7") == (7, None)
        assert parse_sources("0,3;5") == (2, [(0, 3), (5,)])
        with pytest.raises(UsageError):
            parse_sources("0")
        with pytest.raises(UsageError):
            parse_sources("x")

    def test_grid(self):
        np.testing.assert_allclose(parse_grid("4", 20.0), [5.0, 10.0, 15.0, 20.0])
        np.testing.assert_allclose(parse_grid("1.5,3", 20.0), [1.5, 3.0])


class TestPipeline:
    def test_outputs(self, workdir):
        net = load_network(workdir / "net.tsv")
        data = load_cascades(workdir / "c.jsonl")
        assert net.n == 8 and len(data) == 20
        model = load_model(workdir / "model.json")
        assert model.n == 8
        rows = (workdir / "model.json.loss.csv").read_text().splitlines()
        assert rows[0] == "epoch,mean_loss" and len(rows) == 1 + TRAIN_CONFIG["epochs"]

    def test_estimate(self, workdir, capsys, tmp_path):
        out = tmp_path / "curve.csv"
        assert main(["estimate", "--model", str(workdir / "model.json"), "--source", "0,3",
                     "--grid", "5", "--out", str(out)]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 5 and float(lines[-1].split("\t")[0]) == 10.0
        assert out.read_text().splitlines()[0].startswith("t,x0")

    def test_eval_net(self, workdir, capsys):
        assert main(["eval-net", "--model", str(workdir / "model.json"),
                     "--truth", str(workdir / "net.tsv")]) == 0
        report = json.loads(capsys.readouterr().out)
        assert set(report) == {"prc", "rcl", "acc", "cor"}

    def test_infmax(self, workdir, capsys):
        assert main(["infmax", "--model", str(workdir / "model.json"), "--budget", "2",
                     "--config", write_json(workdir / "im.json", {"max_iters": 5})]) == 0
        result = json.loads(capsys.readouterr().out)
        assert len(result["selected"]) == 2 and result["iters"] <= 5

    def test_edges_known(self, workdir):
        out = workdir / "known.json"
        assert main(["train", "--cascades", str(workdir / "c.jsonl"),
                     "--config", str(workdir / "train.json"), "--out", str(out),
                     "--edges-known", str(workdir / "net.tsv")]) == 0
        truth = load_network(workdir / "net.tsv")
        np.testing.assert_array_equal(load_model(out).theta.A[truth.A == 0], 0.0)

    def test_verify_projection(self, capsys):
        assert main(["verify", "--suite", "projection"]) == 0
        assert json.loads(capsys.readouterr().out)["passed"]


class TestDeterminism:
    def run_twice(self, tmp_path, make_args, name):
        outs = []
        for k in range(2):
            path = tmp_path / f"{k}_{name}"
            assert main(make_args(path)) == 0
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]

    def test_net_gen(self, tmp_path):
        spec = write_json(tmp_path / "spec.json", {"seed": "rand", "n": 16, "degree": 3})
        self.run_twice(tmp_path, lambda p: ["net-gen", "--spec", spec, "--out", str(p),
                                            "--seed", "9"], "net.tsv")

    def test_simulate(self, workdir, tmp_path):
        for threads in ("1", "3"):
            self.run_twice(tmp_path, lambda p: ["simulate", "--net", str(workdir / "net.tsv"),
                                                "--sources", "4", "--out", str(p),
                                                "--threads", threads], f"c{threads}.jsonl")
        assert (tmp_path / "0_c1.jsonl").read_bytes() == (tmp_path / "0_c3.jsonl").read_bytes()

    def test_train(self, workdir, tmp_path):
        cfg = write_json(tmp_path / "cfg.json", dict(TRAIN_CONFIG, epochs=1))
        self.run_twice(tmp_path, lambda p: ["train", "--cascades", str(workdir / "c.jsonl"),
                                            "--config", cfg, "--out", str(p)], "m.json")
        assert (tmp_path / "0_m.json.loss.csv").read_bytes() == \
            (tmp_path / "1_m.json.loss.csv").read_bytes()

    def test_infmax(self, workdir, tmp_path):
        cfg = write_json(tmp_path / "im.json", {"max_iters": 10})
        self.run_twice(tmp_path, lambda p: ["infmax", "--model", str(workdir / "model.json"),
                                            "--budget", "2", "--config", cfg, "--out", str(p)],
                       "r.json")


class TestExitCodes:
    def test_zero_edge_spec_writes_header_only(self, tmp_path):
        spec = write_json(tmp_path / "s.json", {"seed": [[0.5, 0.5], [0.5, 0.5]], "iterations": 2,
                                                 "target_edges": 0})
        assert main(["net-gen", "--spec", spec, "--out", str(tmp_path / "n.tsv")]) == 0
        assert (tmp_path / "n.tsv").read_text() == "# n=4\n"

    def test_bad_spec(self, tmp_path):
        spec = write_json(tmp_path / "s.json", {"seed": "hier", "n": 12, "degree": 2})
        assert main(["net-gen", "--spec", spec, "--out", str(tmp_path / "n.tsv")]) == 2

    def test_missing_file(self, tmp_path):
        assert main(["simulate", "--net", str(tmp_path / "none.tsv"), "--sources", "2",
                     "--out", str(tmp_path / "c.jsonl")]) == 2

    def test_unknown_node(self, workdir):
        assert main(["estimate", "--model", str(workdir / "model.json"), "--source", "99"]) == 2

    def test_budget_too_large(self, workdir):
        assert main(["infmax", "--model", str(workdir / "model.json"), "--budget", "8"]) == 2

    def test_oracle_capacity(self):
        assert main(["verify", "--suite", "oracles", "--n", "15"]) == 2

    def test_unknown_config_key(self, workdir, tmp_path):
        cfg = write_json(tmp_path / "bad.json", {"learning_rate": 1.0})
        assert main(["train", "--cascades", str(workdir / "c.jsonl"), "--config", cfg,
                     "--out", str(tmp_path / "m.json")]) == 2

    def test_argparse_errors(self):
        with pytest.raises(SystemExit) as err:
            main(["infmax"])
        assert err.value.code == 2
