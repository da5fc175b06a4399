"""Forward/backward pairs for the layers of the latent dynamics model.

Each ``*_fwd`` returns its output together with a cache tuple; the matching
``*_bwd`` takes the upstream gradient and the cache and returns the input
gradient plus parameter gradients.  Arrays are channels-last.
"""

from __future__ import annotations

import numpy as np


def linear_fwd(x, w, b):
    return x @ w + b, (x, w)


def linear_bwd(dy, cache):
    x, w = cache
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dy @ w.T, x2.T @ dy2, dy2.sum(axis=0)


def elu_fwd(x):
    y = np.where(x > 0, x, np.expm1(np.minimum(x, 0)))
    return y, (x, y)


def elu_bwd(dy, cache):
    x, y = cache
    return dy * np.where(x > 0, 1.0, y + 1.0).astype(dy.dtype)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------------------
# Non-overlapping strided convolutions (kernel == stride == p)


def to_patches(x, p):
    """``(N, S, S, C)`` -> ``(N, S/p, S/p, p*p*C)``."""
    n, s, _, c = x.shape
    t = s // p
    return x.reshape(n, t, p, t, p, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, t, t, p * p * c)


def from_patches(x, p, c):
    """Inverse of :func:`to_patches`."""
    n, t, _, _ = x.shape
    return x.reshape(n, t, t, p, p, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, t * p, t * p, c)


def patch_conv_fwd(x, w, b, p):
    patches = to_patches(x, p)
    return patches @ w + b, (patches, w, p, x.shape[-1])


def patch_conv_bwd(dy, cache):
    patches, w, p, c_in = cache
    dw = patches.reshape(-1, patches.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    dx = from_patches(dy @ w.T, p, c_in)
    return dx, dw, db


def patch_deconv_fwd(x, w, b, p, c_out):
    """Each input cell expands to a ``p x p x c_out`` block; ``b`` is per channel."""
    q = x @ w
    y = from_patches(q, p, c_out) + b
    return y, (x, w, p, c_out)


def patch_deconv_bwd(dy, cache):
    x, w, p, c_out = cache
    dq = to_patches(dy, p)
    dw = x.reshape(-1, x.shape[-1]).T @ dq.reshape(-1, dq.shape[-1])
    db = dy.reshape(-1, c_out).sum(axis=0)
    dx = dq @ w.T
    return dx, dw, db


# ---------------------------------------------------------------------------
# Gated recurrent cell


def gru_fwd(h, x, wx, wh, b):
    d = h.shape[-1]
    gx = x @ wx + b
    gh = h @ wh
    r = sigmoid(gx[:, :d] + gh[:, :d])
    u = sigmoid(gx[:, d : 2 * d] + gh[:, d : 2 * d])
    c = np.tanh(gx[:, 2 * d :] + r * gh[:, 2 * d :])
    h_new = (1.0 - u) * h + u * c
    return h_new, (h, x, wx, wh, gh, r, u, c)


def gru_bwd(dh_new, cache):
    h, x, wx, wh, gh, r, u, c = cache
    d = h.shape[-1]
    du = dh_new * (c - h)
    dc = dh_new * u
    dh = dh_new * (1.0 - u)
    dc_pre = dc * (1.0 - c * c)
    dr = dc_pre * gh[:, 2 * d :]
    dr_pre = dr * r * (1.0 - r)
    du_pre = du * u * (1.0 - u)
    dgx = np.concatenate([dr_pre, du_pre, dc_pre], axis=1)
    dgh = np.concatenate([dr_pre, du_pre, dc_pre * r], axis=1)
    dwx = x.T @ dgx
    db = dgx.sum(axis=0)
    dx = dgx @ wx.T
    dwh = h.T @ dgh
    dh = dh + dgh @ wh.T
    return dh, dx, dwx, dwh, db


# ---------------------------------------------------------------------------
# Two-layer MLP heads


def mlp_fwd(x, w1, b1, w2, b2):
    a, c1 = linear_fwd(x, w1, b1)
    hdn, c2 = elu_fwd(a)
    out, c3 = linear_fwd(hdn, w2, b2)
    return out, (c1, c2, c3)


def mlp_bwd(dout, cache):
    c1, c2, c3 = cache
    dh, dw2, db2 = linear_bwd(dout, c3)
    da = elu_bwd(dh, c2)
    dx, dw1, db1 = linear_bwd(da, c1)
    return dx, dw1, db1, dw2, db2


def gaussian_head_fwd(x, w1, b1, w2, b2, lo, hi):
    """MLP emitting ``(mean, logstd)`` with ``logstd`` clipped to ``[lo, hi]``."""
    out, cache = mlp_fwd(x, w1, b1, w2, b2)
    k = out.shape[-1] // 2
    mean = out[:, :k]
    raw = out[:, k:]
    logstd = np.clip(raw, lo, hi)
    inside = (raw > lo) & (raw < hi)
    return mean, logstd, (cache, inside)


def gaussian_head_bwd(dmean, dlogstd, cache):
    mlp_cache, inside = cache
    dout = np.concatenate([dmean, dlogstd * inside], axis=1)
    return mlp_bwd(dout, mlp_cache)


# ---------------------------------------------------------------------------


def gaussian_kl(mu_q, ls_q, mu_p, ls_p):
    """Per-dimension ``KL(N(mu_q, e^ls_q) || N(mu_p, e^ls_p))`` and its gradients."""
    var_q = np.exp(2.0 * ls_q)
    inv_var_p = np.exp(-2.0 * ls_p)
    diff = mu_q - mu_p
    kl = ls_p - ls_q + 0.5 * (var_q + diff * diff) * inv_var_p - 0.5
    d_mu_q = diff * inv_var_p
    d_ls_q = var_q * inv_var_p - 1.0
    d_ls_p = 1.0 - (var_q + diff * diff) * inv_var_p
    return kl, (d_mu_q, d_ls_q, -d_mu_q, d_ls_p)
