import json
import os

import numpy as np
import pytest

from idode.evaluation import (
    ExperimentConfig,
    Representation,
    StageError,
    UndefinedRSquaredError,
    compare_representations,
    r_squared,
    run_experiment,
)
from idode.infer import InferConfig
from idode.train import TrainConfig


def tiny_config(**overrides) -> ExperimentConfig:
    base = dict(
        system="lorenz",
        train_step=1.0,
        n_test=4,
        t_end=3.0,
        dt=0.01,
        hidden=[16, 16],
        activation="relu",
        train=TrainConfig(lr=1e-3, batch_size=64, epochs=120, seed=1, optimizer="adam"),
        infer=InferConfig(
            optimizer="sgd_momentum", lr=1e-4, momentum=0.9, max_iters=100,
            batch_size=128, init="box_midpoint", seed=2,
        ),
        data_seed=0,
        net_seed=3,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


# --- r_squared -----------------------------------------------------------------


def test_r_squared_perfect():
    assert r_squared([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 1.0


def test_r_squared_mean_predictor_zero():
    true = np.array([1.0, 2.0, 3.0])
    assert r_squared(true, np.full(3, true.mean())) == 0.0


def test_r_squared_hand_computed():
    assert r_squared([1.0, 2.0, 3.0], [1.0, 2.0, 4.0]) == pytest.approx(0.5)


def test_r_squared_degenerate_true_values():
    with pytest.raises(UndefinedRSquaredError):
        r_squared([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])


def test_r_squared_length_mismatch():
    with pytest.raises(ValueError):
        r_squared([1.0, 2.0], [1.0])


def test_r_squared_affine_invariance():
    rng = np.random.default_rng(0)
    true = rng.standard_normal(50)
    pred = true + 0.1 * rng.standard_normal(50)
    base = r_squared(true, pred)
    for a, b in ((2.0, 5.0), (0.25, -3.0)):
        scaled = r_squared(a * true + b, a * pred + b)
        assert abs(scaled - base) <= 1e-12


# --- representations --------------------------------------------------------------


def test_representation_labels_and_widths():
    full = Representation()
    spaced = Representation(kind="full_state_spaced_delay", delay_steps=100, dim=3)
    scalar = Representation(kind="scalar_delay", channel=0, delay_steps=16, dim=7)
    assert full.state_width(3) == 3
    assert spaced.state_width(4) == 12
    assert scalar.state_width(3) == 7
    assert "spaced" in spaced.label() and "tau=100" in spaced.label()
    with pytest.raises(ValueError, match="kind"):
        Representation(kind="fourier")


def test_config_json_round_trip():
    cfg = tiny_config(representation=Representation(kind="scalar_delay", delay_steps=4, dim=3))
    doc = json.loads(json.dumps(cfg.to_json_dict()))
    back = ExperimentConfig.from_json_dict(doc)
    assert back.representation == cfg.representation
    assert back.train == cfg.train
    assert back.infer == cfg.infer
    assert back.to_json_dict() == cfg.to_json_dict()


# --- run_experiment ----------------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("run")
    cfg = tiny_config(outdir=str(outdir))
    report = run_experiment(cfg)
    return cfg, report, outdir


def test_run_experiment_produces_artifacts(tiny_run):
    _, report, outdir = tiny_run
    names = sorted(os.listdir(outdir))
    assert names == [
        "loss_curve.csv",
        "model.bin",
        "report.json",
        "report.json.meta.json",
        "scatter.csv",
        "test.set",
        "train.set",
    ]
    assert len(report.r2) == 3
    assert all(r <= 1.0 for r in report.r2)
    assert report.scatter.shape == (4 * 3, 3)


def test_report_json_excludes_wall_time(tiny_run):
    _, _, outdir = tiny_run
    doc = json.loads((outdir / "report.json").read_text())
    assert "runtime" not in doc
    assert doc["n_failed"] == 0


def test_run_experiment_deterministic_files(tmp_path):
    import filecmp

    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    run_experiment(tiny_config(outdir=str(out_a)))
    run_experiment(tiny_config(outdir=str(out_b)))
    for name in ("report.json", "scatter.csv", "loss_curve.csv", "model.bin",
                 "train.set", "test.set"):
        assert filecmp.cmp(out_a / name, out_b / name, shallow=False), name


def test_oracle_backed_run_high_r2(tmp_path):
    # the closed-form path carries the O(dt) finite-difference bias of the
    # optimum (largest on rho: R^2 ~ 0.97 at dt=0.01); regression bound 0.95
    cfg = tiny_config(use_oracle=True, n_test=6, t_end=20.0)
    report = run_experiment(cfg)
    assert all(r >= 0.95 for r in report.r2)


def test_oracle_rejects_non_full_state():
    cfg = tiny_config(
        use_oracle=True,
        representation=Representation(kind="scalar_delay", delay_steps=4, dim=3),
    )
    with pytest.raises(StageError, match="full_state"):
        run_experiment(cfg)


def test_model_width_mismatch_is_stage_tagged(tmp_path):
    from idode.net import init_model, save_model

    # checkpoint trained for a different representation width
    model = init_model([10, 8, 7], seed=0, input_split=7)
    path = tmp_path / "wrong.bin"
    save_model(model, path)
    cfg = tiny_config(model_path=str(path))
    with pytest.raises(StageError, match=r"\[infer\].*width"):
        run_experiment(cfg)


def test_stage_error_carries_stage():
    cfg = tiny_config(train_step=0.3)  # does not divide the parameter ranges
    with pytest.raises(StageError) as info:
        run_experiment(cfg)
    assert info.value.stage == "grids"


# --- compare_representations ---------------------------------------------------------


def test_compare_representations_rows():
    cfgs = [
        tiny_config(),
        tiny_config(representation=Representation(kind="full_state_spaced_delay",
                                                  delay_steps=2, dim=2)),
    ]
    rows = compare_representations(cfgs)
    assert len(rows) == 2
    assert rows[0]["representation"] == "full_state"
    assert len(rows[1]["r2"]) == 3


def test_compare_representations_rejects_mixed_configs():
    cfgs = [tiny_config(), tiny_config(n_test=7)]
    with pytest.raises(ValueError, match="differ only"):
        compare_representations(cfgs)


def test_compare_identical_configs_identical_rows():
    rows = compare_representations([tiny_config(), tiny_config()])
    assert rows[0] == rows[1]
