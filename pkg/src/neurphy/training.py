"""Overshooting ELBO assembly, the optimization loop, and checkpoint/metrics IO."""

import dataclasses
import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tensor
from .model import ModelConfig, NeurPhyModel
from .nn import Adam, gaussian_obs_nll, kl_diag_gauss, reparameterize
from .physics import DegenerateSplitError, select_contexts

CHECKPOINT_MAGIC = b"NPHY"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class FormatVersionMismatchError(CheckpointError):
    pass


class TrainDiverged(Exception):
    """Non-finite value hit mid-training; .history holds completed epochs."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class TrainConfig:
    D: int = 5
    beta: list = None  # per-overshoot weights, default all 1
    batch_tasks: int = 8
    epochs: int = 300
    lr: float = 0.001
    n_c: int = 20
    target_fraction: float = 0.9
    sigma_obs: float = 0.1
    seed: int = 0
    checkpoint_every: int = 100
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.beta is None:
            self.beta = [1.0] * self.D
        if len(self.beta) != self.D:
            raise ValueError(f"need {self.D} beta weights, got {len(self.beta)}")


# Paper-scale protocol, for reference against the desk-scale defaults above:
# 651 pendulum tasks, batch size 50, 1000 epochs.
PAPER_SCALE = {"tasks": 651, "batch_tasks": 50, "epochs": 1000}


@dataclass
class LossBreakdown:
    recon: float
    kl: list  # length D, unweighted
    total: float


def split_frames(T, D, fraction, seed):
    """Seeded split of eligible frames into (targets, heldout).

    A frame t is eligible only if t >= D+1, so the recognition pair
    (x_{t-d-1}, x_{t-d}) exists for every overshoot d <= D.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    eligible = np.arange(D + 1, T)
    if eligible.size == 0:
        raise DegenerateSplitError(f"no eligible frames for T={T}, D={D}")
    order = np.random.default_rng(seed).permutation(eligible.size)
    n_target = max(1, int(fraction * eligible.size))
    targets = np.sort(eligible[order[:n_target]])
    heldout = np.sort(eligible[order[n_target:]])
    return targets, heldout


def elbo_loss(model, task, ctx, targets, cfg, rng):
    """Reconstruction NLL plus per-overshoot latent KL terms, averaged over targets.

    For each overshoot d, z is recognized d steps back, carried forward by d-1
    sampled transitions, and one more transition gives the prior that the
    current posterior is matched against (single-sample Monte Carlo throughout).

    Returns (total Tensor for backward, LossBreakdown with unweighted KLs).
    """
    targets = np.asarray(targets)
    obs = task.observations
    r_c = model.encode_context(ctx)

    q_now = model.recognize(np.concatenate([obs[targets - 1], obs[targets]], axis=1))
    z_now = reparameterize(q_now, rng.standard_normal(q_now.mean.value.shape))
    recon = ad.tmean(gaussian_obs_nll(obs[targets], model.decode(z_now), cfg.sigma_obs))

    kl_terms = []
    for d in range(1, cfg.D + 1):
        q_back = model.recognize(
            np.concatenate([obs[targets - d - 1], obs[targets - d]], axis=1))
        z = reparameterize(q_back, rng.standard_normal(q_back.mean.value.shape))
        for _ in range(d - 1):
            dist = model.transition(z, r_c)
            z = reparameterize(dist, rng.standard_normal(dist.mean.value.shape))
        prior = model.transition(z, r_c)
        kl_terms.append(ad.tmean(kl_diag_gauss(q_now, prior)))

    total = recon
    for d, kl_d in enumerate(kl_terms):
        total = ad.add(total, ad.scale(kl_d, cfg.beta[d] / cfg.D))

    breakdown = LossBreakdown(recon=float(recon.value),
                              kl=[float(k.value) for k in kl_terms],
                              total=float(total.value))
    return total, breakdown


def train(tasks, cfg, model=None, checkpoint_path=None, on_epoch=None):
    """Run the optimization loop; returns (model, per-epoch LossBreakdown history).

    Contexts and target frames are freshly drawn each epoch. All randomness
    comes from cfg.seed, so identical config gives identical history.
    """
    if not tasks:
        raise ValueError("need at least one task")
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = NeurPhyModel(cfg.model, rng)
    opt = Adam(model.parameters(), lr=cfg.lr)
    history = []
    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(tasks))
            breakdowns = []
            for lo in range(0, len(tasks), cfg.batch_tasks):
                batch = order[lo:lo + cfg.batch_tasks]
                opt.zero_grad()
                for i in batch:
                    task = tasks[i]
                    ctx_seed = int(rng.integers(2 ** 31))
                    frame_seed = int(rng.integers(2 ** 31))
                    ctx = select_contexts(task, cfg.n_c, "train_random", ctx_seed)
                    targets, _ = split_frames(task.length, cfg.D,
                                              cfg.target_fraction, frame_seed)
                    total, br = elbo_loss(model, task, ctx, targets, cfg, rng)
                    ad.backward(ad.scale(total, 1.0 / len(batch)))
                    breakdowns.append(br)
                opt.step()
            history.append(LossBreakdown(
                recon=float(np.mean([b.recon for b in breakdowns])),
                kl=[float(np.mean([b.kl[d] for b in breakdowns]))
                    for d in range(cfg.D)],
                total=float(np.mean([b.total for b in breakdowns])),
            ))
            if on_epoch is not None:
                on_epoch(epoch, history[-1])
            if checkpoint_path and cfg.checkpoint_every > 0 \
                    and (epoch + 1) % cfg.checkpoint_every == 0:
                checkpoint_save(model, cfg, checkpoint_path)
    except NonFiniteError as exc:
        raise TrainDiverged(str(exc), history) from exc
    if checkpoint_path:
        checkpoint_save(model, cfg, checkpoint_path)
    return model, history


def write_metrics_csv(history, D, path):
    lines = ["epoch,recon," + ",".join(f"kl{d}" for d in range(1, D + 1)) + ",total"]
    for epoch, br in enumerate(history):
        kl = br.kl + [0.0] * (D - len(br.kl))
        lines.append(",".join([str(epoch), format(br.recon, ".17g")]
                              + [format(k, ".17g") for k in kl]
                              + [format(br.total, ".17g")]))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def _config_to_json(cfg):
    return json.dumps(dataclasses.asdict(cfg), sort_keys=True)


def _config_from_json(text):
    d = json.loads(text)
    model = ModelConfig(**d.pop("model"))
    return TrainConfig(model=model, **d)


def checkpoint_save(model, cfg, path):
    body = bytearray()
    body += CHECKPOINT_MAGIC
    body += struct.pack("<I", CHECKPOINT_VERSION)
    cfg_bytes = _config_to_json(cfg).encode()
    body += struct.pack("<I", len(cfg_bytes))
    body += cfg_bytes
    params = model.parameters()
    body += struct.pack("<I", len(params))
    for name, p in params:
        name_bytes = name.encode()
        body += struct.pack("<I", len(name_bytes))
        body += name_bytes
        body += struct.pack("<I", p.value.ndim)
        for dim in p.value.shape:
            body += struct.pack("<I", dim)
        body += np.ascontiguousarray(p.value, dtype="<f8").tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    with open(path, "wb") as f:
        f.write(bytes(body))


def checkpoint_load(path):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise CorruptCheckpointError(f"{path}: not a checkpoint file")
    if zlib.crc32(raw[:-4]) != struct.unpack("<I", raw[-4:])[0]:
        raise CorruptCheckpointError(f"{path}: checksum mismatch")
    pos = 4
    (version,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if version != CHECKPOINT_VERSION:
        raise FormatVersionMismatchError(f"{path}: version {version}")
    (cfg_len,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    cfg = _config_from_json(raw[pos:pos + cfg_len].decode())
    pos += cfg_len
    (n_params,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    values = {}
    for _ in range(n_params):
        (name_len,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        name = raw[pos:pos + name_len].decode()
        pos += name_len
        (rank,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", raw, pos)
        pos += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        values[name] = np.frombuffer(raw, dtype="<f8", count=count,
                                     offset=pos).reshape(shape).copy()
        pos += 8 * count
    if pos != len(raw) - 4:
        raise CorruptCheckpointError(f"{path}: trailing or missing bytes")
    model = NeurPhyModel(cfg.model, np.random.default_rng(0))
    for name, p in model.parameters():
        if name not in values:
            raise CorruptCheckpointError(f"{path}: missing parameter {name}")
        p.value = values[name]
    return model, cfg
