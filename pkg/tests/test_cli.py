import json
import os

import numpy as np
import pytest

from idode.cli import main


def run(args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def lorenz_set(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "lorenz.set"
    code = run(["generate", "lorenz", "--step", 1.0, "--t-end", 5.0, "--out", path])
    assert code == 0
    return path


def test_generate_counts(lorenz_set, capsys):
    from idode.dataset import load_trajectories

    tset = load_trajectories(lorenz_set)
    assert len(tset) == 27  # 3 values per axis at step 1.0
    assert os.path.exists(str(lorenz_set) + ".meta.json")


def test_generate_lattice_125(tmp_path):
    from idode.dataset import load_trajectories

    out = tmp_path / "lorenz125.set"
    assert run(["generate", "lorenz", "--step", 0.5, "--t-end", 1.0, "--out", out]) == 0
    assert len(load_trajectories(out)) == 125


def test_generate_missing_out_exits_2(capsys):
    with pytest.raises(SystemExit) as info:
        run(["generate", "lorenz", "--step", "0.5"])
    assert info.value.code == 2


def test_generate_zero_dt_exits_2(tmp_path):
    code = run(["generate", "lorenz", "--step", 1.0, "--dt", 0, "--t-end", 1.0,
                "--out", tmp_path / "x.set"])
    assert code == 2


def test_help_exits_zero(capsys):
    for sub in ("generate", "embed", "train", "infer", "eval", "sweep-dt", "oracle-fit"):
        with pytest.raises(SystemExit) as info:
            run([sub, "--help"])
        assert info.value.code == 0
        assert "--" in capsys.readouterr().out


def test_embed_writes_embedded_set(lorenz_set, tmp_path, capsys):
    out = tmp_path / "emb.set"
    code = run(["embed", "--in", lorenz_set, "--channel", 0, "--tau", 16, "--dim", 3,
                "--out", out])
    assert code == 0
    from idode.dataset import load_trajectories

    tset = load_trajectories(out)
    assert tset.embedding.embedded_dim == 3
    # rows reduced by (dim-1)*tau
    assert len(tset.trajectories[0]) == 501 - 2 * 16


def test_embed_dim_one_passthrough(lorenz_set, tmp_path):
    out = tmp_path / "id.set"
    assert run(["embed", "--in", lorenz_set, "--channel", 0, "--tau", 1, "--dim", 1,
                "--out", out]) == 0
    from idode.dataset import load_trajectories

    src = load_trajectories(lorenz_set)
    emb = load_trajectories(out)
    assert np.array_equal(
        emb.trajectories[0].states[:, 0], src.trajectories[0].states[:, 0]
    )


def test_embed_estimate_prints_dims(tmp_path, capsys):
    # a sine embeds in the plane: kennel says 2
    from idode.dataset import TrajectorySet, save_trajectories
    from idode.integrate import Trajectory

    series = np.sin(2 * np.pi * np.arange(4000) / 99.7)
    traj = Trajectory(
        times=np.arange(4000) * 0.01, states=series[:, None], params=np.array([0.0]),
        dt=0.01, system_name="sine",
    )
    path = tmp_path / "sine.set"
    save_trajectories(TrajectorySet([traj], "sine", 0.01), path)
    code = run(["embed", "--in", path, "--channel", 0, "--tau", 25, "--d-max", 5,
                "--estimate"])
    assert code == 0
    out = capsys.readouterr().out
    assert "cao:" in out and "kennel: 2" in out


def test_embed_too_short_exits_3(tmp_path):
    from idode.dataset import TrajectorySet, save_trajectories
    from idode.integrate import Trajectory

    traj = Trajectory(
        times=np.arange(30) * 0.01, states=np.random.default_rng(0).standard_normal((30, 1)),
        params=np.array([0.0]), dt=0.01, system_name="short",
    )
    path = tmp_path / "short.set"
    save_trajectories(TrajectorySet([traj], "short", 0.01), path)
    code = run(["embed", "--in", path, "--channel", 0, "--tau", 10, "--dim", 9,
                "--out", tmp_path / "o.set"])
    assert code == 3


def test_train_and_infer_cycle(lorenz_set, tmp_path, capsys):
    model_path = tmp_path / "m.bin"
    code = run(["train", "--data", lorenz_set, "--out-model", model_path,
                "--hidden", "16,16", "--epochs", 150, "--lr", 1e-3, "--seed", 1])
    assert code == 0
    assert model_path.exists() and os.path.exists(str(model_path) + ".meta.json")

    out = tmp_path / "results.jsonl"
    code = run(["infer", "--model", model_path, "--data", lorenz_set, "--out", out,
                "--system", "lorenz", "--max-iters", 50, "--lr", 1e-3,
                "--optimizer", "adam"])
    assert code == 0
    lines = [json.loads(l) for l in out.read_text().splitlines()]
    assert len(lines) == 27
    assert set(lines[0]) >= {"alpha_hat", "true_alpha", "iters", "termination"}


def test_infer_missing_model_flag_exits_2(lorenz_set, tmp_path):
    with pytest.raises(SystemExit) as info:
        run(["infer", "--data", lorenz_set, "--out", tmp_path / "r.jsonl"])
    assert info.value.code == 2


def test_infer_corrupt_model_exits_4(lorenz_set, tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"IDODEMDLgarbage" + b"\x00" * 100)
    code = run(["infer", "--model", bad, "--data", lorenz_set, "--out", tmp_path / "r.jsonl",
                "--system", "lorenz"])
    assert code == 4


def test_oracle_fit(lorenz_set, tmp_path):
    out = tmp_path / "fits.jsonl"
    assert run(["oracle-fit", "lorenz", "--in", lorenz_set, "--out", out]) == 0
    lines = [json.loads(l) for l in out.read_text().splitlines()]
    assert len(lines) == 27
    errs = [
        max(abs(a - b) for a, b in zip(l["alpha_hat"], l["true_alpha"])) for l in lines
    ]
    assert np.median(errs) < 0.5  # t_end=5 fits are rough but centered


def test_sweep_dt_csv(tmp_path):
    out = tmp_path / "sweep.csv"
    code = run(["sweep-dt", "lorenz", "--t-end", 5.0, "--dts", "0.04,0.02,0.01",
                "--alpha", "10,28,2.6667", "--out", out])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "dt_or_eps,error"
    assert len(lines) == 4


def test_eval_subcommand_runs(tmp_path):
    from idode.evaluation import ExperimentConfig
    from idode.infer import InferConfig
    from idode.train import TrainConfig

    cfg = ExperimentConfig(
        system="lorenz", train_step=1.0, n_test=3, t_end=3.0, dt=0.01,
        hidden=[8, 8],
        train=TrainConfig(epochs=30, batch_size=64, lr=1e-3, seed=0),
        infer=InferConfig(optimizer="adam", lr=1e-2, max_iters=30, batch_size=64,
                          init="box_midpoint", seed=1),
    )
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg.to_json_dict()))
    outdir = tmp_path / "out"
    assert run(["eval", "--config", cfg_path, "--outdir", outdir]) == 0
    assert (outdir / "report.json").exists()


def test_no_partial_file_on_error(tmp_path, lorenz_set):
    # an output path in a non-writable location must not leave partial files
    out = tmp_path / "sub" / "x.jsonl"  # parent dir missing -> open fails
    code = run(["oracle-fit", "lorenz", "--in", lorenz_set, "--out", out])
    assert code == 3
    assert not out.exists()
