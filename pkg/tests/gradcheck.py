"""Central finite-difference gradient checking for the latent dynamics model."""

from __future__ import annotations

import numpy as np

from vapors.config import LossWeights, ModelConfig
from vapors.dynamics.model import ModelParams, TrainBatch, loss, loss_and_grad


def random_batch(cfg: ModelConfig, rng: np.random.Generator, batch: int = 2, seq: int = 4) -> TrainBatch:
    g, k = cfg.grid, cfg.n_primitives
    obs = (rng.random((batch, seq, g, g)) < 0.3).astype(np.float64)
    acts = np.zeros((batch, seq, k))
    acts[:, 1:] = np.eye(k)[rng.integers(0, k, (batch, seq - 1))]
    rewards = rng.normal(0.0, 0.1, (batch, seq))
    noise = rng.standard_normal((batch, seq, cfg.latent_dim))
    return TrainBatch(obs, acts, rewards, noise)


def random_params(cfg: ModelConfig, rng: np.random.Generator, scale: float = 0.5) -> ModelParams:
    params = ModelParams.init(cfg, int(rng.integers(2**31)))
    for name, t in params.tensors.items():
        params.tensors[name] = rng.normal(0.0, scale, t.shape)
    return params


def check_gradients(
    params: ModelParams,
    batch: TrainBatch,
    weights: LossWeights = LossWeights(),
    h: float = 1e-4,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict[str, float]:
    """Per-tensor relative error ``|a - n| / (|a| + |n|)`` of analytic vs numeric gradients.

    With ``max_entries`` only that many randomly chosen entries per tensor
    are perturbed (all of them when the tensor is smaller).
    """
    _, _, analytic = loss_and_grad(batch, params, weights)
    rng = rng or np.random.default_rng(0)
    errors = {}
    for name, tensor in params.tensors.items():
        flat = tensor.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        num = np.empty(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            lp = loss(batch, params, weights)[0]
            flat[i] = old - h
            lm = loss(batch, params, weights)[0]
            flat[i] = old
            num[j] = (lp - lm) / (2 * h)
        ana = analytic[name].reshape(-1)[idx]
        denom = np.linalg.norm(ana) + np.linalg.norm(num)
        errors[name] = 0.0 if denom == 0 else float(np.linalg.norm(ana - num) / denom)
    return errors
