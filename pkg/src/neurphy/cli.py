"""Command-line pipeline: generate datasets, train, evaluate, roll out, plot.

Exit codes: 0 success, 2 usage/config error, 3 IO error, 4 numerical abort.
The NEURPHY_SEED environment variable overrides every configured seed.
"""

import argparse
import configparser
import dataclasses
import hashlib
import json
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .evaluation import export_manifold, global_r2_table, kl_report, rollout_mse
from .model import ModelConfig, OutOfRangeError
from .physics import (OrbitGridConfig, PendulumGridConfig, PhysicsError,
                      generate_task_grid, load_tasks_jsonl, save_tasks_jsonl,
                      select_contexts, split_meta)
from .svg import line_chart, scatter_chart
from .training import (PAPER_SCALE, TrainConfig, TrainDiverged, checkpoint_load,
                       train, write_metrics_csv)

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

STAGES = ("training", "test", "metatest20", "metatest2")


class UsageError(Exception):
    pass


def _atomic_write(path, data):
    mode = "wb" if isinstance(data, bytes) else "w"
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _parse_axis(text, name):
    try:
        lo, hi, n = text.split(":")
        return (float(lo), float(hi)), int(n)
    except ValueError as exc:
        raise UsageError(f"bad axis spec for {name}: {text!r} (want lo:hi:count)") from exc


def _seed_override(seed):
    env = os.environ.get("NEURPHY_SEED")
    return int(env) if env else seed


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_config(path):
    cp = configparser.ConfigParser()
    if path:
        if not os.path.exists(path):
            raise UsageError(f"config file not found: {path}")
        cp.read(path)
    return cp


def _train_config(cp, args):
    sec = cp["train"] if cp.has_section("train") else {}
    msec = cp["model"] if cp.has_section("model") else {}

    def pick(flag, key, cast, default):
        if flag is not None:
            return flag
        if key in sec:
            return cast(sec[key])
        return default

    model = ModelConfig(
        dim_z=args.dim_z if args.dim_z is not None
        else int(msec.get("dim_z", 3)),
        dim_r=args.dim_r if args.dim_r is not None
        else int(msec.get("dim_r", 3)),
    )
    D = pick(args.D, "D", int, 5)
    beta = None
    if args.beta is not None:
        beta = [float(b) for b in args.beta.split(",")]
    elif "beta" in sec:
        beta = [float(b) for b in sec["beta"].split(",")]
    cfg = TrainConfig(
        D=D,
        beta=beta,
        batch_tasks=pick(args.batch_tasks, "batch_tasks", int, 8),
        epochs=pick(args.epochs, "epochs", int, 300),
        lr=pick(args.lr, "lr", float, 0.001),
        n_c=pick(args.n_c, "n_c", int, 20),
        target_fraction=pick(args.target_fraction, "target_fraction", float, 0.9),
        sigma_obs=pick(args.sigma_obs, "sigma_obs", float, 0.1),
        seed=_seed_override(pick(args.seed, "seed", int, 0)),
        checkpoint_every=pick(args.checkpoint_every, "checkpoint_every", int, 100),
        model=model,
    )
    return cfg


def cmd_generate(args):
    cp = _read_config(args.config)
    gsec = cp["grid"] if cp.has_section("grid") else {}

    def axis(flag, key, default):
        text = flag if flag is not None else gsec.get(key, default)
        return _parse_axis(text, key)

    seed = _seed_override(args.seed if args.seed is not None
                          else int(gsec.get("seed", 0)))
    T = args.T if args.T is not None else int(gsec.get("T", 101))
    dt = args.dt if args.dt is not None else float(gsec.get("dt", 0.1))
    if args.system == "pendulum":
        (l_range, l_count) = axis(args.l, "l", "1:3:5")
        (m_range, m_count) = axis(args.m, "m", "1:4:5")
        cfg = PendulumGridConfig(l_range=l_range, l_count=l_count,
                                 m_range=m_range, m_count=m_count,
                                 dt=dt, T=T, seed=seed)
    else:
        (r0_range, r0_count) = axis(args.r0, "r0", "1.5:2:3")
        (v0r_range, v0r_count) = axis(args.v0r, "v0r", "0:0.2:3")
        (v0t_range, v0t_count) = axis(args.v0t, "v0t", "0.7:0.8:3")
        cfg = OrbitGridConfig(r0_range=r0_range, r0_count=r0_count,
                              v0r_range=v0r_range, v0r_count=v0r_count,
                              v0t_range=v0t_range, v0t_count=v0t_count,
                              GM=args.GM, dt=dt, T=T, seed=seed)
    tasks, skipped = generate_task_grid(cfg)
    from .physics import task_to_json
    _atomic_write(args.out, "".join(task_to_json(t) + "\n" for t in tasks))
    print(f"wrote {len(tasks)} tasks to {args.out} "
          f"({skipped} unbound orbit points skipped)")
    return 0


def cmd_train(args):
    if not os.path.exists(args.data):
        raise UsageError(f"dataset not found: {args.data}")
    cfg = _train_config(_read_config(args.config), args)
    tasks = load_tasks_jsonl(args.data)
    meta_train, _ = split_meta(tasks, 0.9, cfg.seed)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "model.ckpt")
    metrics = os.path.join(args.out, "metrics.csv")
    print(f"desk-scale run: {len(meta_train)} meta-train tasks, "
          f"B={cfg.batch_tasks}, {cfg.epochs} epochs "
          f"(paper scale: {PAPER_SCALE['tasks']} tasks, "
          f"B={PAPER_SCALE['batch_tasks']}, {PAPER_SCALE['epochs']} epochs)")
    try:
        model, history = train(meta_train, cfg, checkpoint_path=ckpt)
    except TrainDiverged as exc:
        write_metrics_csv(exc.history, cfg.D, metrics)
        print(f"training aborted on non-finite value: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    write_metrics_csv(history, cfg.D, metrics)
    manifest = {
        "tool_version": __version__,
        "config": dataclasses.asdict(cfg),
        "seed": cfg.seed,
        "dataset": os.path.abspath(args.data),
        "dataset_sha256": _sha256(args.data),
        "checkpoint": os.path.abspath(ckpt),
        "metrics_csv": os.path.abspath(metrics),
    }
    _atomic_write(os.path.join(args.out, "manifest.json"),
                  json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"final loss {history[-1].total:.6g} "
          f"(initial {history[0].total:.6g}); run dir {args.out}")
    return 0


def _load_run(rundir):
    manifest_path = os.path.join(rundir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise UsageError(f"no manifest.json in {rundir}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    model, cfg = checkpoint_load(manifest["checkpoint"])
    tasks = load_tasks_jsonl(manifest["dataset"])
    return manifest, model, cfg, tasks


def _stage_tasks(tasks, stage, seed):
    meta_train, meta_test = split_meta(tasks, 0.9, seed)
    return meta_test if stage.startswith("metatest") else meta_train


def _aligned(rows):
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows)


def cmd_eval(args):
    manifest, model, cfg, tasks = _load_run(args.run)
    seed = _seed_override(args.eval_seed)
    stage = args.stage
    stage_set = _stage_tasks(tasks, stage, cfg.seed)
    n_c = 2 if stage == "metatest2" else cfg.n_c

    mse = rollout_mse(model, stage_set, stage, cfg.D, n_c=n_c,
                      fraction=cfg.target_fraction, seed=seed)
    kls = kl_report(model, stage_set, stage, cfg, seed=seed)
    r2s = global_r2_table(model, stage_set, n_c=n_c, seed=seed,
                          ctx_mode="metatest_prefix" if stage.startswith("metatest")
                          else "train_random")

    os.makedirs(args.run, exist_ok=True)
    mse_header = ",".join(["stage"] + [f"T+{d}" for d in range(cfg.D + 1)])
    mse_line = ",".join([stage] + [format(v, ".17g") for v in mse.mse])
    _atomic_write(os.path.join(args.run, f"mse_{stage}.csv"),
                  mse_header + "\n" + mse_line + "\n")
    kl_header = ",".join(["stage"] + [f"kl{d}" for d in range(1, cfg.D + 1)])
    kl_line = ",".join([stage] + [format(v, ".17g") for v in kls])
    _atomic_write(os.path.join(args.run, f"kl_{stage}.csv"),
                  kl_header + "\n" + kl_line + "\n")
    r2_lines = ["target,degree,r2"] + [
        f"{r.target},{r.degree},{format(r.r2, '.17g')}" for r in r2s]
    _atomic_write(os.path.join(args.run, f"r2_{stage}.csv"),
                  "\n".join(r2_lines) + "\n")

    print(_aligned([["MSE"] + [f"T+{d}" for d in range(cfg.D + 1)],
                    [stage] + [f"{v:.5g}" for v in mse.mse]]))
    print()
    print(_aligned([["KL"] + [f"kl{d}" for d in range(1, cfg.D + 1)],
                    [stage] + [f"{v:.5g}" for v in kls]]))
    print()
    print(_aligned([["target", "degree", "r2"]]
                   + [[r.target, str(r.degree), f"{r.r2:.5g}"] for r in r2s]))

    if args.manifold_out:
        export_manifold(model, stage_set, args.manifold_out + "_global.csv",
                        args.manifold_out + "_states.csv", n_c=n_c, seed=seed,
                        ctx_mode="metatest_prefix" if stage.startswith("metatest")
                        else "train_random")
        print(f"manifold CSVs written with prefix {args.manifold_out}")
    return 0


def cmd_rollout(args):
    manifest, model, cfg, tasks = _load_run(args.run)
    by_id = {t.task_id: t for t in tasks}
    if args.task not in by_id:
        raise UsageError(f"task {args.task} not in dataset")
    task = by_id[args.task]
    seed = _seed_override(args.eval_seed)
    ctx = select_contexts(task, cfg.n_c, "metatest_prefix", seed + task.task_id)
    try:
        pred = model.predict_observations(task, ctx, args.start, args.horizon)
    except OutOfRangeError as exc:
        raise UsageError(str(exc)) from exc
    lines = ["t,true_x,true_y,pred_x,pred_y"]
    for i in range(args.horizon + 1):
        t = args.start + i
        true = task.observations[t]
        lines.append(",".join([str(t)] + [format(v, ".17g")
                                          for v in (*true, *pred[i])]))
    _atomic_write(args.out, "\n".join(lines) + "\n")
    print(f"wrote {args.horizon + 1} rows to {args.out}")
    return 0


def _read_csv(path):
    with open(path) as f:
        rows = [line.rstrip("\n").split(",") for line in f if line.strip()]
    return rows[0], rows[1:]


def cmd_plot(args):
    if not os.path.exists(args.infile):
        raise UsageError(f"input not found: {args.infile}")
    header, rows = _read_csv(args.infile)
    if header[:5] == ["t", "true_x", "true_y", "pred_x", "pred_y"]:
        t = [float(r[0]) for r in rows]
        series = {"true_x": [float(r[1]) for r in rows],
                  "pred_x": [float(r[3]) for r in rows]}
        svg = line_chart(t, series, title="rollout", x_label="t", y_label="x")
    elif header[0] == "r_c_0" and len(header) > 2:
        dim_r = sum(1 for h in header if h.startswith("r_c_"))
        color_name = header[dim_r]
        x = [float(r[0]) for r in rows]
        y = [float(r[1]) for r in rows]
        c = [float(r[dim_r]) for r in rows]
        svg = scatter_chart(x, y, c, title="global representation manifold",
                            x_label="r_c_0", y_label="r_c_1",
                            color_label=color_name)
    elif header[0] == "epoch":
        epochs = [float(r[0]) for r in rows]
        series = {name: [float(r[i]) for r in rows]
                  for i, name in enumerate(header) if i > 0}
        svg = line_chart(epochs, series, title="training metrics",
                         x_label="epoch", y_label="loss")
    else:
        raise UsageError(f"unknown CSV schema: {header}")
    _atomic_write(args.out, svg)
    print(f"wrote {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="neurphy", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a task-grid dataset (JSONL)")
    g.add_argument("--system", choices=["pendulum", "orbit"], required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--T", type=int)
    g.add_argument("--dt", type=float)
    g.add_argument("--l", help="pendulum length axis lo:hi:count")
    g.add_argument("--m", help="pendulum mass axis lo:hi:count")
    g.add_argument("--r0", help="orbit initial radius axis lo:hi:count")
    g.add_argument("--v0r", help="orbit radial velocity axis lo:hi:count")
    g.add_argument("--v0t", help="orbit tangential velocity axis lo:hi:count")
    g.add_argument("--GM", type=float, default=1.0)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train on a JSONL dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--D", type=int)
    t.add_argument("--beta", help="comma-separated per-overshoot weights")
    t.add_argument("--batch-tasks", type=int, dest="batch_tasks")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--n-c", type=int, dest="n_c")
    t.add_argument("--target-fraction", type=float, dest="target_fraction")
    t.add_argument("--sigma-obs", type=float, dest="sigma_obs")
    t.add_argument("--seed", type=int)
    t.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    t.add_argument("--dim-z", type=int, dest="dim_z")
    t.add_argument("--dim-r", type=int, dest="dim_r")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="R2 / MSE / KL tables for a run")
    e.add_argument("--run", required=True)
    e.add_argument("--stage", choices=STAGES, required=True)
    e.add_argument("--eval-seed", type=int, default=12345, dest="eval_seed")
    e.add_argument("--manifold-out", dest="manifold_out")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("rollout", help="multi-step prediction CSV for one task")
    r.add_argument("--run", required=True)
    r.add_argument("--task", type=int, required=True)
    r.add_argument("--start", type=int, required=True)
    r.add_argument("--horizon", type=int, default=50)
    r.add_argument("--out", required=True)
    r.add_argument("--eval-seed", type=int, default=12345, dest="eval_seed")
    r.set_defaults(func=cmd_rollout)

    pl = sub.add_parser("plot", help="render an eval/rollout CSV as SVG")
    pl.add_argument("--in", dest="infile", required=True)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PhysicsError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
