"""Convolutional encoder, vector quantizer and decoder for two-channel cycles.

The encoder downsamples a normalized cycle into continuous latents, each
latent is snapped to its nearest codebook vector (lowest index wins ties),
and the decoder reconstructs the cycle from the quantized latents. Training
uses the straight-through estimator with reconstruction, codebook and
commitment terms. Two per-cycle shift signals fall out of the pipeline:
the mean squared reconstruction residual and the mean squared quantization
distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from ._nn import Adam, gelu, gelu_grad
from .errors import (
    DimensionMismatchError,
    EmptyInputError,
    LengthMismatchError,
    ParameterError,
    TrainingDivergedError,
)
from .signal import CycleBatch, WeldCycle


@dataclass(frozen=True)
class CodecConfig:
    """Shapes and training knobs for the quantizing autoencoder."""

    codebook_size: int = 64
    code_dim: int = 16
    hidden: int = 32
    downsample: int = 8
    latent_activation: str = "tanh"  # "tanh" bounds latents, improving code coverage
    latent_gain: float = 1.0  # pre-activation scale; higher saturates extremes harder
    commitment_beta: float = 0.25
    epochs: int = 24
    batch_size: int = 64
    learning_rate: float = 2e-3

    def validate(self) -> None:
        if self.codebook_size < 2:
            raise ParameterError("codebook_size must be >= 2")
        ds = self.downsample
        if ds < 2 or (ds & (ds - 1)) != 0:
            raise ParameterError("downsample must be a power of two >= 2")
        if self.latent_activation not in ("tanh", "linear"):
            raise ParameterError(f"unknown latent_activation {self.latent_activation!r}")

    @property
    def n_layers(self) -> int:
        return int(round(math.log2(self.downsample)))


@dataclass
class Codebook:
    """K learned code vectors of dimension D plus usage diagnostics."""

    vectors: np.ndarray
    usage_counts: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 2:
            raise ParameterError("codebook needs a K x D matrix with K >= 2")
        if not np.isfinite(self.vectors).all():
            raise ParameterError("codebook vectors must be finite")


@dataclass
class VqvaeModel:
    """Trained encoder/codebook/decoder parameters."""

    params: dict
    config: CodecConfig
    usage_counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def codebook(self) -> Codebook:
        return Codebook(self.params["codebook"], self.usage_counts)

    def copy(self) -> "VqvaeModel":
        return VqvaeModel(
            {k: v.copy() for k, v in self.params.items()},
            self.config,
            self.usage_counts.copy(),
        )


def init_vqvae(config: CodecConfig, rng: np.random.Generator) -> VqvaeModel:
    config.validate()
    h, d, nl = config.hidden, config.code_dim, config.n_layers
    enc_channels = [2] + [h] * (nl - 1) + [d]
    dec_channels = [d] + [h] * (nl - 1) + [2]
    params = {}
    for i in range(nl):
        cin, cout = enc_channels[i], enc_channels[i + 1]
        params[f"enc_w{i}"] = rng.normal(0.0, np.sqrt(2.0 / (cin * 4)), (cout, cin, 4))
        params[f"enc_b{i}"] = np.zeros(cout)
    for i in range(nl):
        cin, cout = dec_channels[i], dec_channels[i + 1]
        params[f"dec_w{i}"] = rng.normal(0.0, np.sqrt(2.0 / (cin * 3)), (cout, cin, 3))
        params[f"dec_b{i}"] = np.zeros(cout)
    params["codebook"] = rng.uniform(-1.0, 1.0, (config.codebook_size, d))
    return VqvaeModel(params, config, np.zeros(config.codebook_size, dtype=np.int64))


def n_latents(n_samples: int, downsample: int) -> int:
    return -(-n_samples // downsample)


def _pad_to_multiple(x: np.ndarray, multiple: int) -> np.ndarray:
    n = x.shape[2]
    target = n_latents(n, multiple) * multiple
    if target == n:
        return x
    return np.pad(x, ((0, 0), (0, 0), (0, target - n)), mode="edge")


def _encoder_forward(params, cfg, x):
    """x[B,2,N] -> latents [B,M,D]; returns (latents, cache)."""
    xp = _pad_to_multiple(x, cfg.downsample)
    acts = [xp]
    pre = []
    cur = xp
    for i in range(cfg.n_layers):
        y = _kernels.conv1d_forward(cur, params[f"enc_w{i}"], params[f"enc_b{i}"], stride=2, pad=1)
        pre.append(y)
        cur = gelu(y) if i < cfg.n_layers - 1 else y
        acts.append(cur)
    if cfg.latent_activation == "tanh":
        z = np.tanh(cfg.latent_gain * cur)
    else:
        z = cur
    cache = (acts, pre, z, x.shape[2])
    return z.transpose(0, 2, 1), cache


def _encoder_backward(params, cfg, cache, dlatents):
    """dlatents [B,M,D] -> grads for encoder params and input."""
    acts, pre, z, _ = cache
    dz = dlatents.transpose(0, 2, 1)
    if cfg.latent_activation == "tanh":
        dcur = dz * cfg.latent_gain * (1.0 - z**2)
    else:
        dcur = dz
    grads = {}
    for i in reversed(range(cfg.n_layers)):
        if i < cfg.n_layers - 1:
            dcur = dcur * gelu_grad(pre[i])
        dx, dw, db = _kernels.conv1d_backward(acts[i], params[f"enc_w{i}"], dcur, stride=2, pad=1)
        grads[f"enc_w{i}"] = dw
        grads[f"enc_b{i}"] = db
        dcur = dx
    return grads, dcur


def _decoder_forward(params, cfg, zq):
    """zq[B,M,D] -> reconstruction [B,2,M*downsample]; returns (y, cache)."""
    cur = zq.transpose(0, 2, 1)
    ups = []
    pre = []
    for i in range(cfg.n_layers):
        up = np.repeat(cur, 2, axis=2)
        ups.append(up)
        y = _kernels.conv1d_forward(up, params[f"dec_w{i}"], params[f"dec_b{i}"], stride=1, pad=1)
        pre.append(y)
        cur = gelu(y) if i < cfg.n_layers - 1 else y
    return cur, (ups, pre)


def _decoder_backward(params, cfg, cache, dout):
    ups, pre = cache
    grads = {}
    dcur = dout
    for i in reversed(range(cfg.n_layers)):
        if i < cfg.n_layers - 1:
            dcur = dcur * gelu_grad(pre[i])
        dup, dw, db = _kernels.conv1d_backward(ups[i], params[f"dec_w{i}"], dcur, stride=1, pad=1)
        grads[f"dec_w{i}"] = dw
        grads[f"dec_b{i}"] = db
        b, c, l2 = dup.shape
        dcur = dup.reshape(b, c, l2 // 2, 2).sum(axis=3)
    return grads, dcur.transpose(0, 2, 1)


def _as_array(cycle) -> np.ndarray:
    if isinstance(cycle, WeldCycle):
        return cycle.channels()[None, :, :]
    arr = np.asarray(cycle, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3 or arr.shape[1] != 2:
        raise DimensionMismatchError(f"expected [2, N] cycle data, got shape {arr.shape}")
    return arr


def encode(cycle, model: VqvaeModel) -> np.ndarray:
    """Encode one normalized cycle into continuous latents [M, D].

    M = ceil(N / downsample); deterministic. The cycle must already be
    normalized with the bundle's channel stats.
    """
    x = _as_array(cycle)
    if x.shape[2] < model.config.downsample:
        raise LengthMismatchError(
            f"cycle length {x.shape[2]} shorter than one downsampling window "
            f"({model.config.downsample})"
        )
    latents, _ = _encoder_forward(model.params, model.config, x)
    return latents[0]


def quantize(latents: np.ndarray, codebook: Codebook | np.ndarray):
    """Snap latents to their nearest code vectors.

    Returns (tokens, quantized, s_quant) where tokens[j] is the index of the
    nearest code (ties to the lowest index), quantized[j] is that code vector,
    and s_quant is the mean squared distance over positions.
    """
    vectors = codebook.vectors if isinstance(codebook, Codebook) else np.asarray(codebook)
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or latents.shape[0] < 1:
        raise DimensionMismatchError("latents must be a nonempty M x D matrix")
    if latents.shape[1] != vectors.shape[1]:
        raise DimensionMismatchError(
            f"latent dim {latents.shape[1]} != code dim {vectors.shape[1]}"
        )
    tokens, sq = _kernels.nearest_code(latents, vectors)
    return tokens, vectors[tokens], float(sq.mean())


def decode(quantized: np.ndarray, model: VqvaeModel, n_samples: Optional[int] = None) -> np.ndarray:
    """Decode quantized latents [M, D] back to a [2, N] cycle.

    n_samples crops the output to the original length; defaults to
    M * downsample.
    """
    zq = np.asarray(quantized, dtype=np.float64)
    if zq.ndim != 2 or zq.shape[1] != model.config.code_dim:
        raise DimensionMismatchError(f"expected [M, {model.config.code_dim}] latents")
    full = zq.shape[0] * model.config.downsample
    n = full if n_samples is None else n_samples
    if not 0 < n <= full:
        raise DimensionMismatchError(
            f"n_samples {n} incompatible with {zq.shape[0]} latents (max {full})"
        )
    out, _ = _decoder_forward(model.params, model.config, zq[None])
    return out[0, :, :n]


def reconstruction_error(x, x_hat) -> float:
    """Mean over positions of the squared channel-space distance to the reconstruction."""
    xa = _as_array(x)[0]
    xb = np.asarray(x_hat, dtype=np.float64)
    if xb.shape != xa.shape:
        raise LengthMismatchError(f"shape mismatch: {xa.shape} vs {xb.shape}")
    return float(((xa - xb) ** 2).sum(axis=0).mean())


def batch_array(batch: CycleBatch) -> np.ndarray:
    """Stack a batch of equal-length cycles into [B, 2, N]."""
    if len(batch) == 0:
        raise EmptyInputError("empty batch")
    lengths = {len(c) for c in batch}
    if len(lengths) != 1:
        raise LengthMismatchError(f"cycles have mixed lengths {sorted(lengths)}")
    return np.stack([c.channels() for c in batch])


def _quantize_batch(latents, codebook):
    """latents [B,M,D] -> (tokens [B,M], zq [B,M,D], per-position sqdist [B,M])."""
    b, m, d = latents.shape
    tokens, sq = _kernels.nearest_code(latents.reshape(b * m, d), codebook)
    tokens = tokens.reshape(b, m)
    return tokens, codebook[tokens], sq.reshape(b, m)


def tokenize_batch(batch: CycleBatch, model: VqvaeModel):
    """Encode + quantize every cycle: returns (tokens [B,M], quant sqdists [B,M])."""
    x = batch_array(batch)
    latents, _ = _encoder_forward(model.params, model.config, x)
    tokens, _, sq = _quantize_batch(latents, model.params["codebook"])
    return tokens, sq


def recon_loss(params, cfg: CodecConfig, x: np.ndarray, identity_quantization: bool = True) -> float:
    """Reconstruction MSE with quantization replaced by identity (gradient-check path)."""
    if not identity_quantization:
        raise ParameterError("only the identity-quantization path is supported here")
    latents, _ = _encoder_forward(params, cfg, x)
    out, _ = _decoder_forward(params, cfg, latents)
    out = out[:, :, : x.shape[2]]
    return float(((out - x) ** 2).mean())


def recon_loss_and_grads(params, cfg: CodecConfig, x: np.ndarray):
    """Backprop counterpart of recon_loss; returns (loss, grads dict)."""
    latents, enc_cache = _encoder_forward(params, cfg, x)
    out, dec_cache = _decoder_forward(params, cfg, latents)
    n = x.shape[2]
    cropped = out[:, :, :n]
    resid = cropped - x
    loss = float((resid**2).mean())
    dout = np.zeros_like(out)
    dout[:, :, :n] = 2.0 * resid / resid.size
    dec_grads, dlat = _decoder_backward(params, cfg, dec_cache, dout)
    enc_grads, _ = _encoder_backward(params, cfg, enc_cache, dlat)
    return loss, {**enc_grads, **dec_grads}


def _training_step(params, cfg, x):
    """Full VQ-VAE loss and gradients for one batch (straight-through estimator)."""
    latents, enc_cache = _encoder_forward(params, cfg, x)
    tokens, zq, _ = _quantize_batch(latents, params["codebook"])
    out, dec_cache = _decoder_forward(params, cfg, zq)
    n = x.shape[2]
    resid = out[:, :, :n] - x
    n_rec = resid.size
    n_lat = latents.size
    diff = latents - zq
    loss_rec = float((resid**2).sum() / n_rec)
    loss_cb = float((diff**2).sum() / n_lat)
    loss = loss_rec + loss_cb + cfg.commitment_beta * loss_cb

    dout = np.zeros_like(out)
    dout[:, :, :n] = 2.0 * resid / n_rec
    dec_grads, dzq = _decoder_backward(params, cfg, dec_cache, dout)
    # straight-through: decoder-input gradient flows to the encoder unchanged
    dlat = dzq + 2.0 * cfg.commitment_beta * diff / n_lat
    enc_grads, _ = _encoder_backward(params, cfg, enc_cache, dlat)
    cb_grad = np.zeros_like(params["codebook"])
    np.add.at(cb_grad, tokens.ravel(), -2.0 * diff.reshape(-1, diff.shape[2]) / n_lat)
    grads = {**enc_grads, **dec_grads, "codebook": cb_grad}
    return loss, loss_rec, grads


def _val_recon(params, cfg, x):
    latents, _ = _encoder_forward(params, cfg, x)
    _, zq, _ = _quantize_batch(latents, params["codebook"])
    out, _ = _decoder_forward(params, cfg, zq)
    return float(((out[:, :, : x.shape[2]] - x) ** 2).mean())


def train_vqvae(train: CycleBatch, val: CycleBatch, config: CodecConfig, seed: int):
    """Train the autoencoder; returns (model, loss trace).

    The codebook is initialized from encoder outputs on training data (random
    latent positions), which keeps code utilization high. The trace holds one
    record per epoch with the mean training loss and the validation
    reconstruction error. Deterministic for a fixed seed.

    Raises:
        TrainingDivergedError: the loss became non-finite (carries the epoch).
    """
    if len(train) == 0 or len(val) == 0:
        raise EmptyInputError("train and val batches must be nonempty")
    config.validate()
    rng = np.random.default_rng(seed)
    model = init_vqvae(config, rng)
    params = model.params
    x_train = batch_array(train)
    x_val = batch_array(val)
    latents0, _ = _encoder_forward(params, config, x_train)
    flat = latents0.reshape(-1, config.code_dim)
    pick = rng.choice(flat.shape[0], size=config.codebook_size, replace=flat.shape[0] < config.codebook_size)
    params["codebook"] = flat[pick] + 1e-3 * rng.standard_normal((config.codebook_size, config.code_dim))
    opt = Adam(params, lr=config.learning_rate)
    trace = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(x_train))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, _, grads = _training_step(params, config, x_train[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, "vqvae")
            opt.step(params, grads)
            losses.append(loss)
        trace.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "val_recon": _val_recon(params, config, x_val),
            }
        )
    latents, _ = _encoder_forward(params, config, x_train)
    tokens, _, _ = _quantize_batch(latents, params["codebook"])
    model.usage_counts = np.bincount(tokens.ravel(), minlength=config.codebook_size).astype(
        np.int64
    )
    return model, trace
