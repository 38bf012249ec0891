import json
import os

import pytest

from neurphy.cli import EXIT_IO, EXIT_USAGE, main
from neurphy.physics import load_tasks_jsonl


def run(argv):
    return main(argv)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "pend.jsonl"
    rc = run(["generate", "--system", "pendulum", "--out", str(path),
              "--l", "1:3:3", "--m", "1:4:3", "--T", "20"])
    assert rc == 0
    return path


@pytest.fixture(scope="module")
def rundir(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "r1"
    rc = run(["train", "--data", str(dataset), "--out", str(out),
              "--D", "2", "--epochs", "2", "--batch-tasks", "2",
              "--n-c", "4", "--dim-z", "2", "--dim-r", "2"])
    assert rc == 0
    return out


def test_generate_line_count(dataset):
    tasks = load_tasks_jsonl(dataset)
    assert len(tasks) == 9
    assert all(t.length == 20 for t in tasks)


def test_generate_byte_identical_rerun(dataset, tmp_path):
    other = tmp_path / "again.jsonl"
    rc = run(["generate", "--system", "pendulum", "--out", str(other),
              "--l", "1:3:3", "--m", "1:4:3", "--T", "20"])
    assert rc == 0
    assert other.read_bytes() == dataset.read_bytes()


def test_generate_orbit(tmp_path):
    path = tmp_path / "orbit.jsonl"
    rc = run(["generate", "--system", "orbit", "--out", str(path),
              "--r0", "1.5:2:2", "--v0r", "0:0.2:2", "--v0t", "0.7:0.8:2",
              "--T", "15"])
    assert rc == 0
    tasks = load_tasks_jsonl(path)
    assert 0 < len(tasks) <= 8
    assert set(tasks[0].globals) == {"r_n", "e", "theta_n"}


def test_generate_bad_axis_is_usage_error(tmp_path, capsys):
    rc = run(["generate", "--system", "pendulum",
              "--out", str(tmp_path / "x.jsonl"), "--l", "nope"])
    assert rc == EXIT_USAGE
    assert "axis" in capsys.readouterr().err


def test_generate_config_file(tmp_path):
    cfgfile = tmp_path / "grid.ini"
    cfgfile.write_text("[grid]\nl = 1:3:2\nm = 1:4:2\nT = 12\n")
    path = tmp_path / "cfg.jsonl"
    rc = run(["generate", "--system", "pendulum", "--config", str(cfgfile),
              "--out", str(path)])
    assert rc == 0
    tasks = load_tasks_jsonl(path)
    assert len(tasks) == 4 and tasks[0].length == 12


def test_train_outputs(rundir):
    assert (rundir / "model.ckpt").exists()
    manifest = json.loads((rundir / "manifest.json").read_text())
    assert manifest["config"]["D"] == 2
    assert len(manifest["dataset_sha256"]) == 64
    lines = (rundir / "metrics.csv").read_text().strip().split("\n")
    assert lines[0] == "epoch,recon,kl1,kl2,total"
    assert len(lines) == 3


def test_train_missing_dataset(tmp_path, capsys):
    rc = run(["train", "--data", str(tmp_path / "none.jsonl"),
              "--out", str(tmp_path / "o")])
    assert rc == EXIT_USAGE


def test_train_determinism(dataset, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        rc = run(["train", "--data", str(dataset), "--out", str(out),
                  "--D", "1", "--epochs", "1", "--batch-tasks", "2",
                  "--n-c", "4", "--dim-z", "2", "--dim-r", "2"])
        assert rc == 0
        outs.append(out)
    assert (outs[0] / "model.ckpt").read_bytes() == (outs[1] / "model.ckpt").read_bytes()
    assert (outs[0] / "metrics.csv").read_bytes() == (outs[1] / "metrics.csv").read_bytes()


def test_eval_writes_tables(rundir):
    rc = run(["eval", "--run", str(rundir), "--stage", "training"])
    assert rc == 0
    mse = (rundir / "mse_training.csv").read_text().strip().split("\n")
    assert mse[0] == "stage,T+0,T+1,T+2"
    kl = (rundir / "kl_training.csv").read_text().strip().split("\n")
    assert kl[0] == "stage,kl1,kl2"
    r2 = (rundir / "r2_training.csv").read_text().strip().split("\n")
    assert r2[0] == "target,degree,r2"
    assert len(r2) == 5  # l and m, degrees 1 and 2


def test_eval_metatest_stage_and_manifold(rundir, tmp_path):
    prefix = str(tmp_path / "mani")
    rc = run(["eval", "--run", str(rundir), "--stage", "metatest2",
              "--manifold-out", prefix])
    assert rc == 0
    assert (rundir / "mse_metatest2.csv").exists()
    assert os.path.exists(prefix + "_global.csv")
    assert os.path.exists(prefix + "_states.csv")


def test_eval_missing_run(tmp_path, capsys):
    rc = run(["eval", "--run", str(tmp_path / "norun"), "--stage", "training"])
    assert rc == EXIT_USAGE


def test_rollout_csv(rundir, tmp_path):
    out = tmp_path / "roll.csv"
    rc = run(["rollout", "--run", str(rundir), "--task", "0",
              "--start", "3", "--horizon", "5", "--out", str(out)])
    assert rc == 0
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "t,true_x,true_y,pred_x,pred_y"
    assert len(lines) == 7
    assert lines[1].split(",")[0] == "3"


def test_rollout_out_of_range(rundir, tmp_path):
    rc = run(["rollout", "--run", str(rundir), "--task", "0",
              "--start", "3", "--horizon", "500",
              "--out", str(tmp_path / "x.csv")])
    assert rc == EXIT_USAGE


def test_plot_rollout_and_metrics_deterministic(rundir, tmp_path):
    roll = tmp_path / "roll.csv"
    assert run(["rollout", "--run", str(rundir), "--task", "0",
                "--start", "3", "--horizon", "5", "--out", str(roll)]) == 0
    svgs = []
    for name in ("p1.svg", "p2.svg"):
        out = tmp_path / name
        assert run(["plot", "--in", str(roll), "--out", str(out)]) == 0
        svgs.append(out.read_bytes())
    assert svgs[0] == svgs[1]
    assert svgs[0].startswith(b"<svg")

    m_out = tmp_path / "metrics.svg"
    assert run(["plot", "--in", str(rundir / "metrics.csv"),
                "--out", str(m_out)]) == 0
    assert m_out.read_bytes().startswith(b"<svg")


def test_plot_manifold_schema(rundir, tmp_path):
    prefix = str(tmp_path / "mani")
    assert run(["eval", "--run", str(rundir), "--stage", "training",
                "--manifold-out", prefix]) == 0
    out = tmp_path / "mani.svg"
    assert run(["plot", "--in", prefix + "_global.csv", "--out", str(out)]) == 0
    assert b"circle" in out.read_bytes()


def test_plot_unknown_schema(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    rc = run(["plot", "--in", str(bad), "--out", str(tmp_path / "o.svg")])
    assert rc == EXIT_USAGE


def test_seed_env_override(dataset, tmp_path, monkeypatch):
    out1 = tmp_path / "s1"
    monkeypatch.setenv("NEURPHY_SEED", "7")
    assert run(["train", "--data", str(dataset), "--out", str(out1),
                "--D", "1", "--epochs", "1", "--batch-tasks", "2",
                "--n-c", "4", "--dim-z", "2", "--dim-r", "2", "--seed", "0"]) == 0
    manifest = json.loads((out1 / "manifest.json").read_text())
    assert manifest["seed"] == 7
