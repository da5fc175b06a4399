"""Recurrent latent plate-dynamics model.

Per high-level step ``t`` the model keeps a deterministic recurrent state
``h_t`` and a diagonal-Gaussian stochastic latent ``z_t``::

    h_t      = GRU(h_{t-1}, [z_{t-1}, a_t])        a_t: primitive that led to obs t
    prior    p(z_t | h_t)        = N(mu_p, e^{ls_p})
    posterior q(z_t | h_t, e_t)  = N(mu_q, e^{ls_q}),  e_t = encoder(obs_t)
    obs_t   ~ decoder(h_t, z_t),  r_t ~ reward_head(h_t, z_t)

Training minimizes reconstruction error, KL(posterior || prior) and reward
error.  Gradients are computed by hand (backpropagation through time with
the reparameterization noise held fixed).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..config import LossWeights, ModelConfig
from . import layers as L


class TrainingError(RuntimeError):
    """Non-finite loss or gradient."""

    def __init__(self, message: str, batch_id: Optional[int] = None):
        super().__init__(message if batch_id is None else f"{message} (batch {batch_id})")
        self.batch_id = batch_id


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    dh, dz, k, hid, e = cfg.deter_dim, cfg.latent_dim, cfg.n_primitives, cfg.hidden_dim, cfg.feature_dim
    p1, p2, c1, c2 = cfg.patch1, cfg.patch2, cfg.conv1_channels, cfg.conv2_channels
    return {
        "enc.conv1.w": (p1 * p1, c1),
        "enc.conv1.b": (c1,),
        "enc.conv2.w": (p2 * p2 * c1, c2),
        "enc.conv2.b": (c2,),
        "rnn.wx": (dz + k, 3 * dh),
        "rnn.wh": (dh, 3 * dh),
        "rnn.b": (3 * dh,),
        "prior.w1": (dh, hid),
        "prior.b1": (hid,),
        "prior.w2": (hid, 2 * dz),
        "prior.b2": (2 * dz,),
        "post.w1": (dh + e, hid),
        "post.b1": (hid,),
        "post.w2": (hid, 2 * dz),
        "post.b2": (2 * dz,),
        "dec.fc.w": (dh + dz, e),
        "dec.fc.b": (e,),
        "dec.deconv1.w": (c2, p2 * p2 * c1),
        "dec.deconv1.b": (c1,),
        "dec.deconv2.w": (c1, p1 * p1),
        "dec.deconv2.b": (1,),
        "reward.w1": (dh + dz, hid),
        "reward.b1": (hid,),
        "reward.w2": (hid, 1),
        "reward.b2": (1,),
    }


# Output layer of the reward head starts at zero so untrained predictions are 0.
_ZERO_INIT = {"reward.w2", "reward.b2"}


@dataclass
class ModelParams:
    cfg: ModelConfig
    tensors: dict[str, np.ndarray]

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int = 0) -> "ModelParams":
        cfg.validate()
        rng = np.random.default_rng(seed)
        dtype = np.dtype(cfg.dtype)
        tensors = {}
        for name, shape in param_shapes(cfg).items():
            if len(shape) == 2 and name not in _ZERO_INIT:
                limit = np.sqrt(6.0 / (shape[0] + shape[1]))
                tensors[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
            else:
                tensors[name] = np.zeros(shape, dtype=dtype)
        return cls(cfg, tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    @property
    def n_params(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def manifest(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(name, tuple(t.shape)) for name, t in self.tensors.items()]

    def copy(self) -> "ModelParams":
        return ModelParams(self.cfg, {k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors.values())


@dataclass
class LatentState:
    """Recurrent state plus the Gaussian over the stochastic latent.

    ``sample`` holds a reparameterized draw when one was taken; otherwise the
    mean stands in for the latent (noise frozen at zero).  Arrays may carry
    leading batch dimensions.
    """

    deterministic: np.ndarray
    stochastic_mean: np.ndarray
    stochastic_logstd: np.ndarray
    sample: Optional[np.ndarray] = None

    @property
    def z(self) -> np.ndarray:
        return self.stochastic_mean if self.sample is None else self.sample


@dataclass
class TrainBatch:
    """``B`` windows of length ``L``.

    ``actions[:, t]`` is the one-hot primitive that produced ``obs[:, t]``
    (zero at ``t = 0``) and ``rewards[:, t]`` the reward it earned;
    ``rewards[:, 0]`` is ignored.  ``noise`` freezes the posterior samples.
    """

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    noise: np.ndarray
    batch_id: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.obs.shape[0], self.obs.shape[1]


# ---------------------------------------------------------------------------
# Building blocks


def _encoder_fwd(p, obs, cfg):
    x = obs[..., None]
    a1, cc1 = L.patch_conv_fwd(x, p["enc.conv1.w"], p["enc.conv1.b"], cfg.patch1)
    h1, ec1 = L.elu_fwd(a1)
    a2, cc2 = L.patch_conv_fwd(h1, p["enc.conv2.w"], p["enc.conv2.b"], cfg.patch2)
    h2, ec2 = L.elu_fwd(a2)
    return h2.reshape(len(obs), -1), (cc1, ec1, cc2, ec2, h2.shape)


def _encoder_bwd(de, cache, grads):
    cc1, ec1, cc2, ec2, shape = cache
    da2 = L.elu_bwd(de.reshape(shape), ec2)
    dh1, grads["enc.conv2.w"], grads["enc.conv2.b"] = L.patch_conv_bwd(da2, cc2)
    da1 = L.elu_bwd(dh1, ec1)
    _, grads["enc.conv1.w"], grads["enc.conv1.b"] = L.patch_conv_bwd(da1, cc1)


def _decoder_fwd(p, feat, cfg):
    n = len(feat)
    cells = cfg.grid // (cfg.patch1 * cfg.patch2)
    a0, lc = L.linear_fwd(feat, p["dec.fc.w"], p["dec.fc.b"])
    h0, ec0 = L.elu_fwd(a0)
    x = h0.reshape(n, cells, cells, cfg.conv2_channels)
    a1, dc1 = L.patch_deconv_fwd(x, p["dec.deconv1.w"], p["dec.deconv1.b"], cfg.patch2, cfg.conv1_channels)
    h1, ec1 = L.elu_fwd(a1)
    out, dc2 = L.patch_deconv_fwd(h1, p["dec.deconv2.w"], p["dec.deconv2.b"], cfg.patch1, 1)
    return out[..., 0], (lc, ec0, dc1, ec1, dc2, x.shape)


def _decoder_bwd(dout, cache, grads):
    lc, ec0, dc1, ec1, dc2, xshape = cache
    dh1, grads["dec.deconv2.w"], grads["dec.deconv2.b"] = L.patch_deconv_bwd(dout[..., None], dc2)
    da1 = L.elu_bwd(dh1, ec1)
    dx, grads["dec.deconv1.w"], grads["dec.deconv1.b"] = L.patch_deconv_bwd(da1, dc1)
    da0 = L.elu_bwd(dx.reshape(len(dx), -1), ec0)
    dfeat, grads["dec.fc.w"], grads["dec.fc.b"] = L.linear_bwd(da0, lc)
    return dfeat


def _head(p, prefix, x, cfg):
    return L.gaussian_head_fwd(
        x, p[prefix + ".w1"], p[prefix + ".b1"], p[prefix + ".w2"], p[prefix + ".b2"],
        cfg.min_logstd, cfg.max_logstd,
    )


def _head_bwd(prefix, dmean, dlogstd, cache, grads):
    dx, dw1, db1, dw2, db2 = L.gaussian_head_bwd(dmean, dlogstd, cache)
    _accumulate(grads, prefix + ".w1", dw1)
    _accumulate(grads, prefix + ".b1", db1)
    _accumulate(grads, prefix + ".w2", dw2)
    _accumulate(grads, prefix + ".b2", db2)
    return dx


def _gru(p, h, x):
    return L.gru_fwd(h, x, p["rnn.wx"], p["rnn.wh"], p["rnn.b"])


def _gru_bwd(dh_new, cache, grads):
    dh, dx, dwx, dwh, db = L.gru_bwd(dh_new, cache)
    _accumulate(grads, "rnn.wx", dwx)
    _accumulate(grads, "rnn.wh", dwh)
    _accumulate(grads, "rnn.b", db)
    return dh, dx


def _accumulate(grads, name, value):
    if name in grads:
        grads[name] = grads[name] + value
    else:
        grads[name] = value


def _reward_fwd(p, feat):
    out, cache = L.mlp_fwd(feat, p["reward.w1"], p["reward.b1"], p["reward.w2"], p["reward.b2"])
    return out[:, 0], cache


# ---------------------------------------------------------------------------
# Loss and gradient


@dataclass
class _Cache:
    dims: tuple
    enc: tuple
    steps: list
    prior: tuple
    dec: tuple
    rew: tuple
    recon_diff: np.ndarray
    reward_diff: np.ndarray
    kl_grads: tuple
    chains: list = field(default_factory=list)
    prior_rew: tuple | None = None
    prior_reward_diff: np.ndarray | None = None


def _forward(params: ModelParams, batch: TrainBatch, weights: LossWeights):
    cfg = params.cfg
    p = params.tensors
    dt = np.dtype(cfg.dtype)
    obs = np.asarray(batch.obs, dtype=dt)
    act = np.asarray(batch.actions, dtype=dt)
    rew = np.asarray(batch.rewards, dtype=dt)
    noise = np.asarray(batch.noise, dtype=dt)
    b, seq = obs.shape[:2]
    g, dh, dz, k = cfg.grid, cfg.deter_dim, cfg.latent_dim, cfg.n_primitives
    if obs.shape[2:] != (g, g) or act.shape != (b, seq, k) or rew.shape != (b, seq) or noise.shape != (b, seq, dz):
        raise ValueError("batch arrays do not match the model configuration")
    n = b * seq

    e_flat, enc_cache = _encoder_fwd(p, obs.reshape(n, g, g), cfg)
    e = e_flat.reshape(b, seq, -1)

    hs = np.empty((b, seq, dh), dt)
    zs = np.empty((b, seq, dz), dt)
    mu_q = np.empty((b, seq, dz), dt)
    ls_q = np.empty((b, seq, dz), dt)
    steps = []
    h = np.zeros((b, dh), dt)
    z = np.zeros((b, dz), dt)
    for t in range(seq):
        h, gc = _gru(p, h, np.concatenate([z, act[:, t]], axis=1))
        m, ls, pc = _head(p, "post", np.concatenate([h, e[:, t]], axis=1), cfg)
        std = np.exp(ls)
        z = m + std * noise[:, t]
        hs[:, t], zs[:, t], mu_q[:, t], ls_q[:, t] = h, z, m, ls
        steps.append((gc, pc, std))

    h_flat = hs.reshape(n, dh)
    mu_p, ls_p, prior_cache = _head(p, "prior", h_flat, cfg)
    feat = np.concatenate([h_flat, zs.reshape(n, dz)], axis=1)
    recon, dec_cache = _decoder_fwd(p, feat, cfg)
    rhat, rew_cache = _reward_fwd(p, feat)

    recon_diff = recon - obs.reshape(n, g, g)
    recon_loss = float(np.sum(recon_diff * recon_diff, dtype=np.float64)) / n

    kl1, kl_grads = L.gaussian_kl(mu_q.reshape(n, dz), ls_q.reshape(n, dz), mu_p, ls_p)
    kl_terms = [float(np.sum(kl1, dtype=np.float64)) / n]

    # Reward regression at t >= 1 on the filtered latents and, with a
    # non-zero prior share, on the one-step prior latents (h_t, prior mean).
    share = weights.reward_prior_share
    n_rew = b * (seq - 1)
    reward_diff = rhat.reshape(b, seq) - rew
    reward_diff[:, 0] = 0.0
    reward_loss = (1.0 - share) * float(np.sum(reward_diff * reward_diff, dtype=np.float64)) / n_rew if n_rew else 0.0
    prior_rew_cache = prior_reward_diff = None
    if share > 0.0:
        rhat_p, prior_rew_cache = _reward_fwd(p, np.concatenate([h_flat, mu_p], axis=1))
        prior_reward_diff = rhat_p.reshape(b, seq) - rew
        prior_reward_diff[:, 0] = 0.0
        if n_rew:
            reward_loss += share * float(np.sum(prior_reward_diff * prior_reward_diff, dtype=np.float64)) / n_rew

    # Latent overshooting: open-loop prior chains started at h_s, scored
    # against the posterior d steps later (no stop-gradient, so the gradient
    # below is the exact derivative of this loss).
    chains = []
    cur_h = hs
    cur_m = mu_p.reshape(b, seq, dz)
    for d in range(1, cfg.overshooting):
        m_starts = seq - d
        if m_starts <= 0:
            break
        hh = cur_h[:, :m_starts].reshape(b * m_starts, dh)
        zz = cur_m[:, :m_starts].reshape(b * m_starts, dz)
        aa = act[:, d : d + m_starts].reshape(b * m_starts, k)
        h_new, gc = _gru(p, hh, np.concatenate([zz, aa], axis=1))
        mo, lo, pc = _head(p, "prior", h_new, cfg)
        tq = mu_q[:, d : d + m_starts].reshape(b * m_starts, dz)
        tl = ls_q[:, d : d + m_starts].reshape(b * m_starts, dz)
        klo, kgo = L.gaussian_kl(tq, tl, mo, lo)
        kl_terms.append(float(np.sum(klo, dtype=np.float64)) / (b * m_starts))
        chains.append((d, m_starts, gc, pc, kgo))
        cur_h = h_new.reshape(b, m_starts, dh)
        cur_m = mo.reshape(b, m_starts, dz)

    kl_loss = sum(kl_terms) / cfg.overshooting
    total = weights.recon * recon_loss + weights.kl * kl_loss + weights.reward * reward_loss
    cache = _Cache(
        dims=(b, seq, n),
        enc=enc_cache,
        steps=steps,
        prior=prior_cache,
        dec=dec_cache,
        rew=rew_cache,
        recon_diff=recon_diff,
        reward_diff=reward_diff,
        kl_grads=kl_grads,
        chains=chains,
        prior_rew=prior_rew_cache,
        prior_reward_diff=prior_reward_diff,
    )
    return total, (recon_loss, kl_loss, reward_loss), cache


def _backward(params: ModelParams, batch: TrainBatch, weights: LossWeights, cache: _Cache):
    cfg = params.cfg
    p = params.tensors
    dt = np.dtype(cfg.dtype)
    b, seq, n = cache.dims
    dh, dz = cfg.deter_dim, cfg.latent_dim
    noise = np.asarray(batch.noise, dtype=dt)
    grads: dict[str, np.ndarray] = {}
    kl_scale = weights.kl / cfg.overshooting

    # Decoder and reward head act on every (h_t, z_t) at once.
    drecon = (2.0 * weights.recon / n) * cache.recon_diff
    dfeat = _decoder_bwd(drecon.astype(dt), cache.dec, grads)
    n_rew = b * (seq - 1)
    share = weights.reward_prior_share
    rscale = 2.0 * weights.reward / n_rew if n_rew else 0.0
    drhat = ((1.0 - share) * rscale * cache.reward_diff).reshape(n, 1).astype(dt)
    dfr, grads["reward.w1"], grads["reward.b1"], grads["reward.w2"], grads["reward.b2"] = L.mlp_bwd(drhat, cache.rew)
    dfeat = dfeat + dfr

    d_mu_q1, d_ls_q1, d_mu_p1, d_ls_p1 = cache.kl_grads
    s1 = kl_scale / n
    d_mu_p = (s1 * d_mu_p1).reshape(b, seq, dz)
    d_ls_p = (s1 * d_ls_p1).reshape(b, seq, dz)
    d_hs = dfeat[:, :dh].reshape(b, seq, dh).copy()
    if cache.prior_rew is not None:
        drp = (share * rscale * cache.prior_reward_diff).reshape(n, 1).astype(dt)
        dfp, *rgrads = L.mlp_bwd(drp, cache.prior_rew)
        for name, g_ in zip(("reward.w1", "reward.b1", "reward.w2", "reward.b2"), rgrads):
            _accumulate(grads, name, g_)
        d_hs += dfp[:, :dh].reshape(b, seq, dh)
        d_mu_p += dfp[:, dh:].reshape(b, seq, dz)
    d_zs = dfeat[:, dh:].reshape(b, seq, dz)

    d_mu_q = (s1 * d_mu_q1).reshape(b, seq, dz)
    d_ls_q = (s1 * d_ls_q1).reshape(b, seq, dz)

    # Overshooting chains, last link first.
    dh_next = None
    dm_next = None
    for d, m_starts, gc, pc, kgo in reversed(cache.chains):
        s = kl_scale / (b * m_starts)
        d_mu_q[:, d : d + m_starts] += (s * kgo[0]).reshape(b, m_starts, dz)
        d_ls_q[:, d : d + m_starts] += (s * kgo[1]).reshape(b, m_starts, dz)
        dmo = (s * kgo[2]).reshape(b, m_starts, dz)
        dlo = (s * kgo[3]).reshape(b, m_starts, dz)
        dhn = np.zeros((b, m_starts, dh), dt)
        if dm_next is not None:
            dmo[:, : dm_next.shape[1]] += dm_next
            dhn[:, : dh_next.shape[1]] += dh_next
        dx_head = _head_bwd("prior", dmo.reshape(-1, dz), dlo.reshape(-1, dz), pc, grads)
        dhn = dhn.reshape(-1, dh) + dx_head
        dhh, dx = _gru_bwd(dhn, gc, grads)
        dh_next = dhh.reshape(b, m_starts, dh)
        dm_next = dx[:, :dz].reshape(b, m_starts, dz)
    if dm_next is not None:
        d_mu_p[:, : dm_next.shape[1]] += dm_next
        d_hs[:, : dh_next.shape[1]] += dh_next

    dx_prior = _head_bwd("prior", d_mu_p.reshape(n, dz), d_ls_p.reshape(n, dz), cache.prior, grads)
    d_hs += dx_prior.reshape(b, seq, dh)

    de = np.zeros((b, seq, cfg.feature_dim), dt)
    dh_carry = np.zeros((b, dh), dt)
    dz_carry = np.zeros((b, dz), dt)
    for t in range(seq - 1, -1, -1):
        gc, pc, std = cache.steps[t]
        dh_t = dh_carry + d_hs[:, t]
        dz_t = dz_carry + d_zs[:, t]
        dm = d_mu_q[:, t] + dz_t
        dls = d_ls_q[:, t] + dz_t * std * noise[:, t]
        dx_post = _head_bwd("post", dm, dls, pc, grads)
        dh_t = dh_t + dx_post[:, :dh]
        de[:, t] = dx_post[:, dh:]
        dh_carry, dx = _gru_bwd(dh_t, gc, grads)
        dz_carry = dx[:, :dz]

    _encoder_bwd(de.reshape(n, -1), cache.enc, grads)
    return {name: grads[name].astype(dt, copy=False).reshape(p[name].shape) for name in p}


def loss(batch: TrainBatch, params: ModelParams, weights: LossWeights = LossWeights()):
    """Total weighted loss and its ``(recon, kl, reward)`` components."""
    total, comps, _ = _forward(params, batch, weights)
    return total, comps


def loss_and_grad(batch: TrainBatch, params: ModelParams, weights: LossWeights = LossWeights()):
    total, comps, cache = _forward(params, batch, weights)
    if not np.isfinite(total):
        raise TrainingError(f"non-finite loss {total!r}", batch.batch_id)
    grads = _backward(params, batch, weights, cache)
    return total, comps, grads


def grad(batch: TrainBatch, params: ModelParams, weights: LossWeights = LossWeights()) -> dict[str, np.ndarray]:
    return loss_and_grad(batch, params, weights)[2]


# ---------------------------------------------------------------------------
# Inference


def _as_batched(x, ndim):
    x = np.asarray(x)
    return (x[None], True) if x.ndim == ndim else (x, False)


def posterior_encode(
    obs_seq: np.ndarray,
    act_seq: np.ndarray,
    params: ModelParams,
    seed: Optional[int] = None,
) -> list[LatentState]:
    """Filtered posterior latents, one per observation.

    ``obs_seq`` is ``(T, G, G)`` or batched ``(B, T, G, G)``; ``act_seq``
    holds the ``T - 1`` primitives between observations.  With ``seed`` the
    stochastic latents are sampled; otherwise their means are propagated.
    """
    cfg = params.cfg
    p = params.tensors
    dt = np.dtype(cfg.dtype)
    obs, squeeze = _as_batched(np.asarray(obs_seq, dtype=dt), 3)
    b, seq = obs.shape[:2]
    act = np.asarray(act_seq, dtype=dt)
    if act.size == 0:
        act = np.zeros((b, 0, cfg.n_primitives), dt)
    elif squeeze:
        act = act[None]
    if act.shape[:2] != (b, seq - 1) or act.shape[-1] != cfg.n_primitives:
        raise ValueError(
            f"need {seq - 1} primitives of size {cfg.n_primitives} for {seq} observations, got {act.shape}"
        )
    act = np.concatenate([np.zeros((b, 1, cfg.n_primitives), dt), act], axis=1)
    e = _encoder_fwd(p, obs.reshape(b * seq, cfg.grid, cfg.grid), cfg)[0].reshape(b, seq, -1)
    rng = None if seed is None else np.random.default_rng(seed)

    out = []
    h = np.zeros((b, cfg.deter_dim), dt)
    z = np.zeros((b, cfg.latent_dim), dt)
    for t in range(seq):
        h, _ = _gru(p, h, np.concatenate([z, act[:, t]], axis=1))
        m, ls, _ = _head(p, "post", np.concatenate([h, e[:, t]], axis=1), cfg)
        sample = None
        if rng is not None:
            sample = m + np.exp(ls) * rng.standard_normal(m.shape).astype(dt)
        state = LatentState(h, m, ls, sample)
        z = state.z
        out.append(_squeeze_state(state) if squeeze else state)
    return out


def _squeeze_state(s: LatentState) -> LatentState:
    return LatentState(
        s.deterministic[0], s.stochastic_mean[0], s.stochastic_logstd[0],
        None if s.sample is None else s.sample[0],
    )


def prior_transition(prev: LatentState, primitive: np.ndarray, params: ModelParams) -> LatentState:
    """Imagine the next latent under ``primitive`` without any observation."""
    cfg = params.cfg
    p = params.tensors
    dt = np.dtype(cfg.dtype)
    h = np.asarray(prev.deterministic, dtype=dt)
    single = h.ndim == 1
    h = np.atleast_2d(h)
    z = np.atleast_2d(np.asarray(prev.z, dtype=dt))
    a = np.asarray(primitive, dtype=dt)
    a = np.broadcast_to(np.atleast_2d(a), (len(h), cfg.n_primitives))
    h_new, _ = _gru(p, h, np.concatenate([z, a], axis=1))
    m, ls, _ = _head(p, "prior", h_new, cfg)
    state = LatentState(h_new, m, ls)
    return _squeeze_state(state) if single else state


def _features(latent: LatentState, dt) -> tuple[np.ndarray, bool]:
    h = np.asarray(latent.deterministic, dtype=dt)
    z = np.asarray(latent.z, dtype=dt)
    single = h.ndim == 1
    return np.concatenate([np.atleast_2d(h), np.atleast_2d(z)], axis=1), single


def decode_obs(latent: LatentState, params: ModelParams) -> np.ndarray:
    feat, single = _features(latent, np.dtype(params.cfg.dtype))
    out = _decoder_fwd(params.tensors, feat, params.cfg)[0]
    return out[0] if single else out


def decode_reward(latent: LatentState, params: ModelParams):
    feat, single = _features(latent, np.dtype(params.cfg.dtype))
    out = _reward_fwd(params.tensors, feat)[0]
    return float(out[0]) if single else out


class LatentDynamics:
    """Trained model bound to its parameters, as consumed by the planner."""

    def __init__(self, params: ModelParams):
        self.params = params

    @property
    def n_primitives(self) -> int:
        return self.params.cfg.n_primitives

    def imagine_rewards(
        self,
        history_obs: Sequence[np.ndarray],
        history_prims: Sequence[np.ndarray],
        sequences: Sequence[Sequence[int]],
    ) -> np.ndarray:
        """Decoded reward means along each primitive sequence, shape ``(S, H)``."""
        k = self.n_primitives
        obs = np.stack([np.asarray(o) for o in history_obs])
        acts = np.stack([np.asarray(a) for a in history_prims]) if len(history_prims) else np.zeros((0, k))
        start = posterior_encode(obs, acts, self.params)[-1]
        seqs = np.asarray(sequences, dtype=np.int64)
        n_seq, horizon = seqs.shape
        eye = np.eye(k)
        state = LatentState(
            np.repeat(start.deterministic[None], n_seq, axis=0),
            np.repeat(start.stochastic_mean[None], n_seq, axis=0),
            np.repeat(start.stochastic_logstd[None], n_seq, axis=0),
        )
        out = np.zeros((n_seq, horizon))
        for i in range(horizon):
            state = prior_transition(state, eye[seqs[:, i]], self.params)
            out[:, i] = decode_reward(state, self.params)
        return out
