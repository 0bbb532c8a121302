import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest

from fedasta.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from fedasta.config import OUTPUT_ENV, parse_config
from fedasta.experiments import ABLATIONS
from fedasta.protocol import Federation

TINY = """\
data.synthetic.n_per_cluster = 2
data.synthetic.T = 240
data.synthetic.periods = 2
train.rounds = 2
train.batch_size = 8
train.batches_per_round = 2
train.hidden = 4
train.layers = 1
train.server_layers = 1
train.horizon = 3
train.periods = 2
train.k = 1
privacy.attack_steps = 20
privacy.intensities = 0.0, 1.0
privacy.thresholds = 0.5
sweep.k = 1, 2
"""


@pytest.fixture
def cfg_file(tmp_path, monkeypatch):
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY)
    return p


def run(cfg_file, out, *args):
    return main([args[0], "--config", str(cfg_file), "--output-dir", str(out), *args[1:]])


def hash_of(out):
    return parse_config(TINY + f"output.dir = {out}\n").config_hash()


def test_train_outputs_and_header(cfg_file, tmp_path, capsys):
    out = tmp_path / "o"
    assert run(cfg_file, out, "train") == EXIT_OK
    h = hash_of(out)
    for name in ("rounds.csv", "metrics.csv"):
        assert (out / name).read_text().splitlines()[0] == f"# config_hash={h}"
    lines = (out / "rounds.csv").read_text().splitlines()
    assert lines[1] == "round,stage,loss,up_bytes,down_bytes"
    assert [l.split(",")[1] for l in lines[2:]] == ["graph", "J", "J"]
    with np.load(out / "checkpoint.npz") as z:
        assert str(z["config_hash"]) == h
    assert "RMSE" in capsys.readouterr().out


def test_train_twice_byte_identical(cfg_file, tmp_path, monkeypatch):
    # the environment override leaves the config hash untouched, so whole files compare
    outs = []
    for name in ("a", "b"):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / name))
        assert main(["train", "--config", str(cfg_file)]) == EXIT_OK
        outs.append(tmp_path / name)
    for f in ("rounds.csv", "metrics.csv"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()


def test_evaluate_reproduces_val(cfg_file, tmp_path):
    out = tmp_path / "o"
    run(cfg_file, out, "train")
    assert run(cfg_file, out, "evaluate") == EXIT_OK
    train_rows = {l.split(",")[0]: l for l in (out / "metrics.csv").read_text().splitlines()[2:]}
    eval_rows = {l.split(",")[0]: l for l in (out / "evaluation.csv").read_text().splitlines()[2:]}
    assert set(eval_rows) == {"train", "val", "test"}
    assert eval_rows["val"] == train_rows["val"] and eval_rows["test"] == train_rows["test"]


def test_evaluate_missing_checkpoint(cfg_file, tmp_path):
    assert run(cfg_file, tmp_path / "o", "evaluate", "--checkpoint", str(tmp_path / "nope.npz")) == EXIT_CONFIG


def test_build_graph_k1(cfg_file, tmp_path):
    out = tmp_path / "o"
    assert run(cfg_file, out, "build-graph") == EXIT_OK
    with np.load(out / "graphs.npz") as z:
        for p in range(2):
            m = z[f"dynamic_mask{p}"]
            off = ~np.eye(4, dtype=bool)
            assert ((m > -1e300) & off).sum(axis=1).tolist() == [1] * 4
    assert "intra-cluster" in (out / "graph_summary.txt").read_text()


def test_privacy_sim(cfg_file, tmp_path):
    out = tmp_path / "o"
    assert run(cfg_file, out, "privacy-sim") == EXIT_OK
    lines = (out / "privacy.csv").read_text().splitlines()
    assert lines[1].startswith("E,threshold")
    assert len(lines) == 2 + 2


def test_comm_report(cfg_file, tmp_path):
    out = tmp_path / "o"
    assert run(cfg_file, out, "comm-report") == EXIT_OK
    text = (out / "comm_report.txt").read_text()
    assert "353.050" in text and "this configuration" in text


def test_ablate_and_edge_sweep(cfg_file, tmp_path):
    out = tmp_path / "o"
    assert run(cfg_file, out, "ablate") == EXIT_OK
    text = (out / "ablation.txt").read_text()
    assert all(name in text for name in ABLATIONS)
    assert run(cfg_file, out, "edge-sweep") == EXIT_OK
    csv_lines = (out / "edge_sweep.csv").read_text().splitlines()
    assert csv_lines[1] == "k,mae,mape,rmse" and len(csv_lines) == 4
    assert "#edges" in (out / "edge_sweep.txt").read_text()


def test_env_var_overrides_output(cfg_file, tmp_path, monkeypatch):
    target = tmp_path / "env"
    monkeypatch.setenv(OUTPUT_ENV, str(target))
    assert main(["comm-report", "--config", str(cfg_file)]) == EXIT_OK
    assert (target / "comm_report.txt").exists()


@pytest.mark.parametrize("extra", [["--set", "train.nonsense=1"], ["--set", "train.rounds=abc"], ["--set", "novalue"]])
def test_config_errors_exit_2(cfg_file, tmp_path, extra, capsys):
    assert run(cfg_file, tmp_path / "o", "train", *extra) == EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["train", "--config", str(tmp_path / "none.cfg")]) == EXIT_CONFIG


def test_runtime_error_exit_1(tmp_path):
    bad = tmp_path / "v.csv"
    bad.write_text("t,a\n0,x\n")
    assert main(["train", "--set", "data.source=csv", "--set", f"data.path={bad}",
                 "--output-dir", str(tmp_path / "o")]) == EXIT_RUNTIME


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "fedasta", "comm-report", "--output-dir", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "merge-parameters" in r.stdout


class TestAblationInventories:
    def _params(self, **flags):
        cfg = parse_config(TINY).train_config()
        fed = Federation(parse_config(TINY).data.load(), replace(cfg, **flags))
        return set(fed.clients[0].params), set(fed.server.params)

    def test_decomposition_removes_trend_head(self):
        full_c, full_s = self._params()
        c, s = self._params(no_decomposition=True)
        assert full_c - c == {"trend.w", "trend.b"} and s == full_s

    @pytest.mark.parametrize("flags,gone,added", [
        ({"no_static_graph": True}, {"static"}, set()),
        ({"no_dynamic_graph": True}, {"dynamic"}, set()),
        ({"no_static_graph": True, "no_dynamic_graph": True}, {"static", "dynamic"}, {"plain"}),
    ])
    def test_graph_branches(self, flags, gone, added):
        full_c, full_s = self._params()
        c, s = self._params(**flags)
        assert c == full_c
        branch = lambda names: {n.split(".")[2] for n in names} - {"out"}
        assert branch(full_s) - branch(s) == gone
        assert branch(s) - branch(full_s) == added
