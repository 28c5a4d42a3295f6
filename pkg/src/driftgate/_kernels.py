"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is chosen once at import from the ``DRIFTGATE_NUMBA`` environment
variable ("0"/"false"/"off" forces the numpy path) and can be switched at
runtime with :func:`set_backend`, which the kernel benchmark uses to time both
paths on identical inputs. All kernels are float64 and deterministic; the two
paths agree to floating-point roundoff (they may differ in summation order).
"""

from __future__ import annotations

import math
import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


def _env_wants_numba() -> bool:
    flag = os.environ.get("DRIFTGATE_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "off", "no")


_BACKEND = "numba" if (HAS_NUMBA and _env_wants_numba()) else "numpy"

SHAPE_CODES = {"square": 0, "sawtooth": 1, "smooth": 2}


def set_backend(name: str) -> None:
    """Select the kernel backend: "numba" or "numpy"."""
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    _BACKEND = name


def current_backend() -> str:
    return _BACKEND


def _use_numba() -> bool:
    return _BACKEND == "numba"


# ---------------------------------------------------------------------------
# 1-D correlation (conv layer forward/backward)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _conv1d_fwd_nb(xp, w, stride):
    nb, nc, lp = xp.shape
    no, _, kw = w.shape
    lout = (lp - kw) // stride + 1
    y = np.zeros((nb, no, lout))
    for b in range(nb):
        for o in range(no):
            for j in range(lout):
                s = j * stride
                acc = 0.0
                for c in range(nc):
                    for k in range(kw):
                        acc += xp[b, c, s + k] * w[o, c, k]
                y[b, o, j] = acc
    return y


def _conv1d_fwd_np(xp, w, stride):
    kw = w.shape[2]
    win = sliding_window_view(xp, kw, axis=2)[:, :, ::stride, :]
    return np.einsum("bcjk,ock->boj", win, w, optimize=True)


@njit(cache=True)
def _conv1d_bwd_nb(xp, w, dy, stride):
    nb, nc, lp = xp.shape
    no, _, kw = w.shape
    lout = dy.shape[2]
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    db = np.zeros(no)
    for b in range(nb):
        for o in range(no):
            for j in range(lout):
                g = dy[b, o, j]
                db[o] += g
                s = j * stride
                for c in range(nc):
                    for k in range(kw):
                        dxp[b, c, s + k] += g * w[o, c, k]
                        dw[o, c, k] += g * xp[b, c, s + k]
    return dxp, dw, db


def _conv1d_bwd_np(xp, w, dy, stride):
    kw = w.shape[2]
    lout = dy.shape[2]
    win = sliding_window_view(xp, kw, axis=2)[:, :, ::stride, :]
    dw = np.einsum("boj,bcjk->ock", dy, win, optimize=True)
    db = dy.sum(axis=(0, 2))
    dxp = np.zeros_like(xp)
    idx = np.arange(lout) * stride
    for k in range(kw):
        # scatter-add the contribution of kernel tap k
        dxp[:, :, idx + k] += np.einsum("boj,oc->bcj", dy, w[:, :, k], optimize=True)
    return dxp, dw, db


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Correlate x[B,C,L] with w[O,C,K]; returns y[B,O,Lout]."""
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad))) if pad else x
    xp = np.ascontiguousarray(xp)
    w = np.ascontiguousarray(w)
    if _use_numba():
        y = _conv1d_fwd_nb(xp, w, stride)
    else:
        y = _conv1d_fwd_np(xp, w, stride)
    return y + b[None, :, None]


def conv1d_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray, stride: int, pad: int):
    """Gradients of conv1d_forward: returns (dx, dw, db)."""
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad))) if pad else x
    xp = np.ascontiguousarray(xp)
    w = np.ascontiguousarray(w)
    dy = np.ascontiguousarray(dy)
    if _use_numba():
        dxp, dw, db = _conv1d_bwd_nb(xp, w, dy, stride)
    else:
        dxp, dw, db = _conv1d_bwd_np(xp, w, dy, stride)
    dx = dxp[:, :, pad : xp.shape[2] - pad] if pad else dxp
    return dx, dw, db


# ---------------------------------------------------------------------------
# Nearest-codebook-vector lookup
# ---------------------------------------------------------------------------


@njit(cache=True)
def _nearest_code_nb(z, cb):
    m, d = z.shape
    k = cb.shape[0]
    tokens = np.zeros(m, dtype=np.int64)
    dists = np.zeros(m)
    for j in range(m):
        best = 0
        acc = 0.0
        for t in range(d):
            diff = z[j, t] - cb[0, t]
            acc += diff * diff
        bestd = acc
        for c in range(1, k):
            acc = 0.0
            for t in range(d):
                diff = z[j, t] - cb[c, t]
                acc += diff * diff
            if acc < bestd:  # strict: ties keep the lowest index
                bestd = acc
                best = c
        tokens[j] = best
        dists[j] = bestd
    return tokens, dists


def _nearest_code_np(z, cb):
    d2 = ((z[:, None, :] - cb[None, :, :]) ** 2).sum(axis=2)
    tokens = np.argmin(d2, axis=1)  # argmin returns the first (lowest) index on ties
    return tokens.astype(np.int64), d2[np.arange(z.shape[0]), tokens]


def nearest_code(z: np.ndarray, codebook: np.ndarray):
    """Nearest codebook row per latent: returns (tokens[M], sq_dists[M])."""
    z = np.ascontiguousarray(z, dtype=np.float64)
    codebook = np.ascontiguousarray(codebook, dtype=np.float64)
    if _use_numba():
        return _nearest_code_nb(z, codebook)
    return _nearest_code_np(z, codebook)


# ---------------------------------------------------------------------------
# Duty-cycled pulse train synthesis
# ---------------------------------------------------------------------------


@njit(cache=True)
def _pulse_train_nb(n, period, duty, phase, shape_code):
    p = np.zeros(n)
    on_len = duty * period
    for i in range(n):
        pos = (i + phase) % period
        if pos < on_len:
            if shape_code == 0:
                p[i] = 1.0
            elif shape_code == 1:
                p[i] = pos / on_len
            else:
                u = pos / on_len
                p[i] = 0.5 * (1.0 - math.cos(2.0 * math.pi * u))
    return p


def _pulse_train_np(n, period, duty, phase, shape_code):
    pos = (np.arange(n) + phase) % period
    on_len = duty * period
    on = pos < on_len
    if shape_code == 0:
        return np.where(on, 1.0, 0.0)
    u = pos / on_len
    if shape_code == 1:
        return np.where(on, u, 0.0)
    return np.where(on, 0.5 * (1.0 - np.cos(2.0 * np.pi * u)), 0.0)


def pulse_train(n: int, period: int, duty: float, phase: int, shape: str) -> np.ndarray:
    """One cycle of a duty-cycled pulse train in [0, 1], length n."""
    code = SHAPE_CODES[shape]
    if _use_numba():
        return _pulse_train_nb(n, period, duty, phase, code)
    return _pulse_train_np(n, period, duty, phase, code)
