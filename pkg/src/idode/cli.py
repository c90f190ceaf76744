"""Command-line entry point.

Subcommands: generate | embed | train | infer | eval | sweep-dt | oracle-fit.
Exit codes: 0 ok, 2 argument errors, 3 runtime errors, 4 file-format errors.
Every output file gets a <name>.meta.json sidecar recording the resolved
configuration and SHA-256 hashes of the input files; writes are atomic.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

import idode.dataset as ds
import idode.evaluation as ev
import idode.infer as inf
import idode.net as nets
import idode.train as tr
from idode._container import FormatError, atomic_write_bytes
from idode._pykernels import BlowUpError
from idode.embed import (
    DegenerateSeriesError,
    EmbeddingSpec,
    InsufficientLengthError,
    delay_embed,
    min_embedding_dim_cao,
    min_embedding_dim_fnn,
    select_delay_autocorr,
)
from idode.integrate import batch_integrate
from idode.oracle import NonIdentifiableError, affine_least_squares, dt_convergence_sweep
from idode.systems import get_system, system_names

EXIT_OK = 0
EXIT_ARGS = 2
EXIT_RUNTIME = 3
EXIT_FORMAT = 4


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _sidecar(out_path: str, config: dict, inputs: list[str]) -> None:
    hashes = {}
    for p in inputs:
        with open(p, "rb") as fh:
            hashes[os.path.basename(p)] = hashlib.sha256(fh.read()).hexdigest()
    doc = {"config": config, "input_sha256": hashes}
    atomic_write_bytes(
        out_path + ".meta.json",
        (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode("utf-8"),
    )


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _merge_flags(file_cfg: dict, args: argparse.Namespace, keys: list[str]) -> dict:
    """File values first, explicit flags (non-None) override."""
    merged = dict(file_cfg)
    for key in keys:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    return merged


def cmd_generate(args) -> int:
    if args.dt is not None and args.dt <= 0:
        return _fail(EXIT_ARGS, "--dt must be positive")
    if args.t_end <= 0:
        return _fail(EXIT_ARGS, "--t-end must be positive")
    if args.step <= 0:
        return _fail(EXIT_ARGS, "--step must be positive")
    try:
        system = get_system(args.system)
    except KeyError as exc:
        return _fail(EXIT_ARGS, str(exc))
    dt = args.dt if args.dt is not None else ev.DEFAULT_DT[args.system]
    x0 = (
        np.asarray(_floats(args.x0))
        if args.x0
        else np.asarray(ev.DEFAULT_INITIAL_STATE[args.system])
    )
    grid = ds.ParamGrid(axes=tuple((lo, hi, args.step) for lo, hi in system.param_box))
    t0 = time.perf_counter()
    tset = batch_integrate(system, grid, x0, args.t_end, dt, args.method, jobs=args.jobs)
    ds.save_trajectories(tset, args.out)
    elapsed = time.perf_counter() - t0
    size = os.path.getsize(args.out)
    config = {
        "system": args.system,
        "step": args.step,
        "t_end": args.t_end,
        "dt": dt,
        "x0": x0.tolist(),
        "method": args.method,
    }
    _sidecar(args.out, config, [])
    print(
        f"wrote {args.out}: {len(tset)} trajectories "
        f"({len(tset.failures)} failed), {size / 1e6:.1f} MB, {elapsed:.1f} s"
    )
    return EXIT_OK


def cmd_embed(args) -> int:
    tset = ds.load_trajectories(args.infile)
    if len(tset) == 0:
        return _fail(EXIT_RUNTIME, "input set contains no trajectories")
    if args.estimate:
        series = tset.trajectories[0].states[:, args.channel]
        tau = args.tau if args.tau else select_delay_autocorr(series, max_lag=len(series) // 4)
        cao = min_embedding_dim_cao(series, tau, args.d_max)
        fnn = min_embedding_dim_fnn(series, tau, args.d_max)
        print(f"tau: {tau}")
        print(f"cao: {cao.dim}, kennel: {fnn.dim}")
        return EXIT_OK
    if not args.out:
        return _fail(EXIT_ARGS, "--out is required unless --estimate is given")
    if args.tau is None:
        return _fail(EXIT_ARGS, "--tau is required")
    width = tset.trajectories[0].states.shape[1]
    channels = tuple(range(width)) if args.channel_all else (args.channel,)
    spec = EmbeddingSpec(delay_steps=args.tau, dim=args.dim, channels=channels)
    out_set = tset.map(lambda t: delay_embed(t, spec))
    ds.save_trajectories(out_set, args.out)
    _sidecar(args.out, {"embedding": spec.to_json_dict()}, [args.infile])
    print(f"wrote {args.out}: {len(out_set)} trajectories, embedded dim {spec.embedded_dim}")
    return EXIT_OK


def cmd_train(args) -> int:
    merged = _merge_flags(
        _load_config_file(args.config),
        args,
        ["lr", "batch_size", "epochs", "seed", "optimizer", "eval_fraction"],
    )
    hidden = _floats(args.hidden) if args.hidden else merged.pop("hidden", [128, 128, 128])
    hidden = [int(h) for h in hidden]
    activation = args.activation or merged.pop("activation", "relu")
    cfg = tr.TrainConfig(**merged)
    tset = ds.load_trajectories(args.data)
    data = ds.build_supervised(tset, normalize=not args.no_normalize)
    width = data.state_dim
    model = nets.init_model(
        [width + data.param_dim, *hidden, width],
        activation=activation,
        seed=cfg.seed,
        input_split=width,
    )
    model, report = tr.train(model, data, cfg)
    nets.save_model(model, args.out_model)
    _sidecar(
        args.out_model,
        {"train": dataclassdict(cfg), "hidden": hidden, "activation": activation},
        [args.data],
    )
    print(
        f"trained {len(report.steps)} logged points over {cfg.epochs} {cfg.epoch_units}; "
        f"final train loss {report.final_train_loss:.3e}, "
        f"holdout {report.final_holdout_loss:.3e}, {report.wall_time:.1f} s"
    )
    return EXIT_OK


def cmd_infer(args) -> int:
    merged = _merge_flags(
        _load_config_file(args.config),
        args,
        ["lr", "batch_size", "max_iters", "seed", "optimizer", "init"],
    )
    cfg = inf.InferConfig(**merged)
    model = nets.load_model(args.model)
    tset = ds.load_trajectories(args.data)
    system = get_system(args.system) if args.system else None
    box = system.param_box if system else None
    if cfg.clip_to_box and box is None:
        return _fail(EXIT_ARGS, "--system is required for box clipping/midpoint init")
    train_params = None
    if cfg.init == "best_training_param":
        if not args.train_params:
            return _fail(EXIT_ARGS, "--train-params file required for best_training_param init")
        train_set = ds.load_trajectories(args.train_params)
        train_params = np.array([t.params for t in train_set])
    results = inf.infer_batch(model, list(tset), cfg, param_box=box, train_params=train_params)
    lines = []
    for traj, res in zip(tset, results):
        doc = {
            "alpha_hat": [None if not np.isfinite(v) else float(v) for v in res.alpha_hat],
            "true_alpha": np.asarray(traj.params, dtype=float).tolist(),
            "iters": res.iters_used,
            "termination": res.termination,
        }
        if res.error:
            doc["error"] = res.error
        lines.append(json.dumps(doc, sort_keys=True))
    atomic_write_bytes(args.out, ("\n".join(lines) + "\n").encode("utf-8"))
    _sidecar(args.out, {"infer": dataclassdict(cfg)}, [args.model, args.data])
    print(f"wrote {args.out}: {len(results)} inferences")
    return EXIT_OK


def cmd_eval(args) -> int:
    with open(args.config) as fh:
        cfg = ev.ExperimentConfig.from_json_dict(json.load(fh))
    if args.outdir:
        cfg.outdir = args.outdir
    report = ev.run_experiment(cfg)
    for name, r2, mae in zip(report.param_names, report.r2, report.mae):
        print(f"{name}: R^2 = {r2:.5f}, MAE = {mae:.5f}")
    print(
        f"{report.n_test} test points ({report.n_failed} failed), "
        f"{len(report.outliers)} outliers, {report.runtime:.1f} s"
    )
    return EXIT_OK


def cmd_sweep_dt(args) -> int:
    try:
        system = get_system(args.system)
    except KeyError as exc:
        return _fail(EXIT_ARGS, str(exc))
    alpha = np.asarray(_floats(args.alpha)) if args.alpha else system.box_midpoint()
    x0 = (
        np.asarray(_floats(args.x0))
        if args.x0
        else np.asarray(ev.DEFAULT_INITIAL_STATE[args.system])
    )
    dts = _floats(args.dts)
    results = dt_convergence_sweep(system, alpha, x0, args.t_end, dts)
    lines = ["dt_or_eps,error"] + [f"{dt!r},{err!r}" for dt, err in results]
    atomic_write_bytes(args.out, ("\n".join(lines) + "\n").encode("utf-8"))
    _sidecar(
        args.out,
        {"system": args.system, "alpha": alpha.tolist(), "t_end": args.t_end, "dts": dts},
        [],
    )
    print(f"wrote {args.out}: {len(results)} rows")
    return EXIT_OK


def cmd_oracle_fit(args) -> int:
    try:
        system = get_system(args.system)
    except KeyError as exc:
        return _fail(EXIT_ARGS, str(exc))
    tset = ds.load_trajectories(args.infile)
    lines = []
    for traj in tset:
        alpha_hat, ne = affine_least_squares(system, traj)
        lines.append(
            json.dumps(
                {
                    "alpha_hat": alpha_hat.tolist(),
                    "true_alpha": np.asarray(traj.params, dtype=float).tolist(),
                    "condition": ne.condition,
                },
                sort_keys=True,
            )
        )
    atomic_write_bytes(args.out, ("\n".join(lines) + "\n").encode("utf-8"))
    _sidecar(args.out, {"system": args.system}, [args.infile])
    print(f"wrote {args.out}: {len(lines)} fits")
    return EXIT_OK


def dataclassdict(obj) -> dict:
    import dataclasses

    d = dataclasses.asdict(obj)
    return {k: v for k, v in d.items() if not isinstance(v, np.ndarray)}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="idode",
        description="Learn velocity fields of parameterized dynamical systems "
        "and infer parameters of new trajectories.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="integrate a parameter grid into a trajectory set")
    p.add_argument("system", choices=system_names())
    p.add_argument("--step", type=float, required=True, help="grid spacing per parameter axis")
    p.add_argument("--t-end", type=float, default=100.0)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--x0", type=str, default=None, help="comma-separated initial state")
    p.add_argument("--method", choices=("dopri5", "rk4"), default="dopri5")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("embed", help="delay-embed a trajectory set or estimate dimensions")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--channel", type=int, default=0)
    p.add_argument("--channel-all", action="store_true", help="embed every state channel")
    p.add_argument("--tau", type=int, default=None)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--d-max", type=int, default=8)
    p.add_argument("--estimate", action="store_true", help="print Cao/Kennel dimensions and exit")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", help="fit a velocity model to a trajectory set")
    p.add_argument("--data", required=True)
    p.add_argument("--out-model", required=True)
    p.add_argument("--config", default=None, help="JSON file with TrainConfig fields")
    p.add_argument("--hidden", type=str, default=None, help="comma-separated layer widths")
    p.add_argument("--activation", choices=("relu", "softplus"), default=None)
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--optimizer", choices=("adam", "sgd_momentum"), default=None)
    p.add_argument("--eval-fraction", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="infer parameters for every trajectory of a set")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="JSON file with InferConfig fields")
    p.add_argument("--system", default=None, choices=system_names())
    p.add_argument("--train-params", default=None, help="trajectory set providing init candidates")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--optimizer", choices=("adam", "sgd_momentum"), default=None)
    p.add_argument("--init", type=str, default=None)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="run a full experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--outdir", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-dt", help="oracle recovery error vs. grid spacing")
    p.add_argument("system", choices=system_names())
    p.add_argument("--alpha", type=str, default=None)
    p.add_argument("--x0", type=str, default=None)
    p.add_argument("--t-end", type=float, default=100.0)
    p.add_argument("--dts", type=str, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_dt)

    p = sub.add_parser("oracle-fit", help="closed-form parameter fit per trajectory")
    p.add_argument("system", choices=system_names())
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oracle_fit)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FormatError as exc:
        return _fail(EXIT_FORMAT, str(exc))
    except (
        BlowUpError,
        NonIdentifiableError,
        DegenerateSeriesError,
        InsufficientLengthError,
        tr.DivergenceError,
        ev.StageError,
        FileNotFoundError,
        RuntimeError,
        ValueError,
    ) as exc:
        return _fail(EXIT_RUNTIME, str(exc))


if __name__ == "__main__":
    sys.exit(main())
