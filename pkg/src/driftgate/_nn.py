"""Shared neural-network math: activations, layer norm, softmax, Adam.

Everything is float64 numpy with hand-written backward passes; the tanh-based
GELU keeps every path smooth so finite-difference gradient checks are exact to
discretization error.
"""

from __future__ import annotations

import numpy as np

_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715
LN_EPS = 1e-5


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x**3)))


def gelu_grad(x):
    u = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(u)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def layernorm_forward(x, gamma, beta):
    """Normalize over the last axis. Returns (y, cache)."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    y = xhat * gamma + beta
    return y, (xhat, inv, gamma)


def layernorm_backward(dy, cache):
    """Returns (dx, dgamma, dbeta)."""
    xhat, inv, gamma = cache
    d = xhat.shape[-1]
    dgamma = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    dbeta = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * gamma
    dx = inv / d * (
        d * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def cross_entropy(logits, targets):
    """Mean CE over leading axes. Returns (loss, dlogits)."""
    flat = logits.reshape(-1, logits.shape[-1])
    t = targets.reshape(-1)
    n = flat.shape[0]
    p = softmax(flat, axis=-1)
    nll = -np.log(np.maximum(p[np.arange(n), t], 1e-300))
    loss = nll.mean()
    dflat = p.copy()
    dflat[np.arange(n), t] -= 1.0
    dflat /= n
    return loss, dflat.reshape(logits.shape)


class Adam:
    """Adam over a dict of named parameter arrays, updated in place."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            mhat = self.m[k] / bc1
            vhat = self.v[k] / bc2
            params[k] -= lr * mhat / (np.sqrt(vhat) + self.eps)


def finite_difference_grads(loss_fn, params, keys=None, h=1e-5):
    """Central-difference gradients of loss_fn(params) w.r.t. each entry."""
    keys = list(params) if keys is None else keys
    grads = {}
    for k in keys:
        arr = params[k]
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_fn(params)
            flat[i] = orig - h
            lm = loss_fn(params)
            flat[i] = orig
            gflat[i] = (lp - lm) / (2.0 * h)
        grads[k] = g
    return grads
