"""Quantitative evaluation: polynomial R^2 fits of learned representations,
per-overshoot rollout MSE tables, KL reports, and manifold CSV exports."""

from dataclasses import dataclass

import numpy as np

from .physics import select_contexts
from .training import elbo_loss, split_frames


class DegenerateTargetError(Exception):
    pass


@dataclass
class R2Report:
    target: str
    degree: int
    r2: float


@dataclass
class MseTable:
    stage: str
    mse: list  # indexed by overshoot 0..D


def _poly_features(x, degree):
    """Column matrix [1, x_i, (x_i x_j for i<=j)] up to the given degree."""
    n, k = x.shape
    cols = [np.ones(n)]
    cols.extend(x[:, i] for i in range(k))
    if degree >= 2:
        for i in range(k):
            for j in range(i, k):
                cols.append(x[:, i] * x[:, j])
    return np.stack(cols, axis=1)


def fit_poly_r2(features, target, degree, name=""):
    """In-sample R^2 of an OLS polynomial fit (normal equations, tiny ridge)."""
    if degree not in (1, 2):
        raise ValueError("degree must be 1 or 2")
    features = np.asarray(features, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    ss_tot = float(np.sum((target - target.mean()) ** 2))
    if ss_tot == 0.0:
        raise DegenerateTargetError(f"target {name!r} has zero variance")
    X = _poly_features(features, degree)
    if X.shape[0] < X.shape[1] + 1:
        raise ValueError(f"need at least {X.shape[1] + 1} samples, got {X.shape[0]}")
    gram = X.T @ X + 1e-8 * np.eye(X.shape[1])
    beta = np.linalg.solve(gram, X.T @ target)
    ss_res = float(np.sum((target - X @ beta) ** 2))
    return R2Report(target=name, degree=degree, r2=1.0 - ss_res / ss_tot)


def context_for_stage(task, stage, n_c, seed):
    mode = "metatest_prefix" if stage.startswith("metatest") else "train_random"
    return select_contexts(task, n_c, mode, seed + task.task_id)


def stage_frames(task, stage, D, fraction, seed):
    """Which frames are scored per stage: the seeded target/heldout split for
    training/test, every eligible frame for meta-test."""
    targets, heldout = split_frames(task.length, D, fraction, seed + task.task_id)
    if stage == "training":
        return targets
    if stage == "test":
        return heldout
    return np.arange(D + 1, task.length)


def rollout_mse(model, tasks, stage, D, n_c=20, fraction=0.9, seed=0):
    """MSE of predicting x_t from the frame pair d steps back, for d = 0..D.

    d=0 is recognize-and-decode (reconstruction); d>=1 rolls the latent mean
    forward d steps before decoding.
    """
    if not tasks:
        raise ValueError("need at least one task")
    sq_sums = np.zeros(D + 1)
    counts = np.zeros(D + 1)
    for task in tasks:
        frames = stage_frames(task, stage, D, fraction, seed)
        if frames.size == 0:
            continue
        ctx = context_for_stage(task, stage, n_c, seed)
        r_c = model.encode_context(ctx)
        obs = task.observations
        for d in range(D + 1):
            pairs = np.concatenate([obs[frames - d - 1], obs[frames - d]], axis=1)
            z = model.recognize(pairs).mean
            if d >= 1:
                _, z = model.rollout(z, r_c, d, mode="mean")
            pred = model.decode(z).value
            sq_sums[d] += float(np.sum((pred - obs[frames]) ** 2))
            counts[d] += pred.size
    return MseTable(stage=stage, mse=list(sq_sums / counts))


def kl_report(model, tasks, stage, cfg, seed=0):
    """Mean unweighted KL per overshoot distance, via the training loss machinery."""
    if not tasks:
        raise ValueError("need at least one task")
    rng = np.random.default_rng(seed)
    n_c = cfg.n_c if not stage.startswith("metatest") else \
        (2 if stage == "metatest2" else 20)
    kls = []
    for task in tasks:
        frames = stage_frames(task, stage, cfg.D, cfg.target_fraction, seed)
        if frames.size == 0:
            continue
        ctx = context_for_stage(task, stage, n_c, seed)
        _, br = elbo_loss(model, task, ctx, frames, cfg, rng)
        kls.append(br.kl)
    return list(np.mean(np.asarray(kls), axis=0))


def _fmt(x):
    return format(float(x), ".17g")


def export_manifold(model, tasks, global_path, state_path, n_c=20, seed=0,
                    ctx_mode="train_random"):
    """Write one CSV row per task (r_c + true globals) and one per frame
    (recognized z mean + true state)."""
    dim_r = model.cfg.dim_r
    dim_z = model.cfg.dim_z
    global_keys = list(tasks[0].globals.keys())
    g_lines = [",".join([f"r_c_{i}" for i in range(dim_r)] + global_keys)]
    state_dim = tasks[0].states.shape[1]
    s_lines = [",".join(["task_id"] + [f"z_{i}" for i in range(dim_z)]
                        + [f"state_{i}" for i in range(state_dim)])]
    for task in tasks:
        ctx = select_contexts(task, n_c, ctx_mode, seed + task.task_id)
        r_c = model.encode_context(ctx).value
        g_lines.append(",".join([_fmt(v) for v in r_c]
                                + [_fmt(task.globals[k]) for k in global_keys]))
        obs = task.observations
        pairs = np.concatenate([obs[:-1], obs[1:]], axis=1)
        z = model.recognize(pairs).mean.value
        for t in range(1, task.length):
            s_lines.append(",".join([str(task.task_id)]
                                    + [_fmt(v) for v in z[t - 1]]
                                    + [_fmt(v) for v in task.states[t]]))
    with open(global_path, "w") as f:
        f.write("\n".join(g_lines) + "\n")
    with open(state_path, "w") as f:
        f.write("\n".join(s_lines) + "\n")


def global_r2_table(model, tasks, n_c=20, seed=0, ctx_mode="train_random"):
    """R^2 of r_c against every ground-truth global, degrees 1 and 2."""
    features = []
    for task in tasks:
        ctx = select_contexts(task, n_c, ctx_mode, seed + task.task_id)
        features.append(model.encode_context(ctx).value)
    features = np.stack(features)
    reports = []
    for key in tasks[0].globals.keys():
        target = np.array([task.globals[key] for task in tasks])
        if float(np.var(target)) == 0.0:
            continue
        for degree in (1, 2):
            reports.append(fit_poly_r2(features, target, degree, name=key))
    return reports
