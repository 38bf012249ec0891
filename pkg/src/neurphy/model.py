"""The latent state-space architecture.

Four networks: a context encoder whose per-pair codes are mean-aggregated into
a per-task global representation r_c, a two-frame recognition network giving
the approximate posterior q(z_t | x_{t-1:t}), a transition network giving
p(z_t | z_{t-1}, r_c), and an observation decoder.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import MLP, GaussianHead, reparameterize


class EmptyContextError(Exception):
    pass


class OutOfRangeError(Exception):
    pass


@dataclass
class ModelConfig:
    obs_dim: int = 2
    dim_z: int = 3
    dim_r: int = 3
    context_widths: list = field(default_factory=lambda: [128, 128, 64, 16])
    recognition_widths: list = field(default_factory=lambda: [32, 16])
    transition_widths: list = field(default_factory=lambda: [128, 128, 64, 16])
    decoder_widths: list = field(default_factory=lambda: [16, 64, 128, 128])


class NeurPhyModel:
    def __init__(self, cfg, rng):
        self.cfg = cfg
        self.context_encoder = MLP(2 * cfg.obs_dim, cfg.context_widths, cfg.dim_r,
                                   rng, "context")
        self.recognition_mlp = MLP(2 * cfg.obs_dim, cfg.recognition_widths[:-1],
                                   cfg.recognition_widths[-1], rng, "recognition",
                                   out_activation="relu")
        self.recognition_head = GaussianHead(cfg.recognition_widths[-1], cfg.dim_z,
                                             rng, "recognition.head")
        self.transition_mlp = MLP(cfg.dim_z + cfg.dim_r, cfg.transition_widths[:-1],
                                  cfg.transition_widths[-1], rng, "transition",
                                  out_activation="relu")
        self.transition_head = GaussianHead(cfg.transition_widths[-1], cfg.dim_z,
                                            rng, "transition.head")
        self.decoder = MLP(cfg.dim_z, cfg.decoder_widths, cfg.obs_dim, rng, "decoder")

    def parameters(self):
        return (self.context_encoder.parameters()
                + self.recognition_mlp.parameters()
                + self.recognition_head.parameters()
                + self.transition_mlp.parameters()
                + self.transition_head.parameters()
                + self.decoder.parameters())

    def encode_context(self, ctx):
        """Mean-aggregate per-pair encodings into r_c.

        The mean is taken over the sorted unique pairs weighted by their
        multiplicities, so the result is bit-identical under permutation of
        the context set and under duplicating the whole set (batched matmul
        rounding would otherwise differ with the row count).
        """
        pairs = np.asarray(ctx.pairs, dtype=np.float64)
        if pairs.ndim != 2 or pairs.shape[0] < 1:
            raise EmptyContextError("context set must contain at least one pair")
        unique, counts = np.unique(pairs, axis=0, return_counts=True)
        weights = counts[:, None] / pairs.shape[0]
        codes = self.context_encoder(Tensor(unique))
        return ad.tsum(ad.mul(codes, Tensor(weights)), axis=0)

    def recognize(self, x_pairs):
        """q(z_t | x_{t-1:t}) for a batch of stacked consecutive frames."""
        x_pairs = np.asarray(x_pairs, dtype=np.float64)
        if x_pairs.shape[-1] != 2 * self.cfg.obs_dim:
            raise ad.ShapeMismatchError(f"recognize expects width {2 * self.cfg.obs_dim}")
        return self.recognition_head(self.recognition_mlp(Tensor(x_pairs)))

    def transition(self, z, r_c):
        """p(z_t | z_{t-1}, r_c); z is (B, dim_z), r_c a 1-D tensor."""
        n = z.value.shape[0] if z.value.ndim == 2 else 1
        r_rows = ad.tile_rows(r_c, n) if z.value.ndim == 2 else r_c
        h = self.transition_mlp(ad.concat([z, r_rows]))
        return self.transition_head(h)

    def decode(self, z):
        """Observation mean; identity output since coordinates are unbounded."""
        return self.decoder(z)

    def rollout(self, z0, r_c, steps, mode="mean", rng=None):
        """Iterate the transition; mean mode feeds the mean forward, sample
        mode reparameterizes at each step. Returns (dists, z_inputs)."""
        if steps < 1:
            raise ValueError("rollout needs steps >= 1")
        dists, z = [], z0
        for _ in range(steps):
            dist = self.transition(z, r_c)
            dists.append(dist)
            if mode == "mean":
                z = dist.mean
            elif mode == "sample":
                z = reparameterize(dist, rng.standard_normal(dist.mean.value.shape))
            else:
                raise ValueError(f"unknown rollout mode {mode!r}")
        return dists, z

    def predict_observations(self, task, ctx, start_t, horizon):
        """Deterministic readout: recognize at start_t, roll the mean forward,
        decode every latent mean. Returns (horizon+1, obs_dim) predictions
        for frames start_t .. start_t+horizon."""
        if start_t < 1 or start_t + horizon > task.length - 1:
            raise OutOfRangeError(f"window [{start_t}, {start_t + horizon}] "
                                  f"outside task of length {task.length}")
        r_c = self.encode_context(ctx)
        pair = np.concatenate([task.observations[start_t - 1], task.observations[start_t]])
        z = self.recognize(pair[None, :]).mean
        latents = [z]
        if horizon >= 1:
            dists, _ = self.rollout(z, r_c, horizon, mode="mean")
            latents.extend(d.mean for d in dists)
        return np.stack([self.decode(z).value[0] for z in latents])
