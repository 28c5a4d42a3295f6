"""Uniform per-cycle shift scorers: higher always means more out-of-distribution.

Native signals from the pipeline (sequence NLL, reconstruction error,
quantization error) and post-hoc baselines (max-softmax confidence, ODIN,
Mahalanobis distance on pooled features). Confidence-based baselines are
flipped via 1 - confidence so every method thresholds the same way.

ODIN's input perturbation is applied at the first differentiable surface of
the classifier — the token embeddings — since the token lookup itself is
discrete.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import armodel, codec
from .bundle import ModelBundle
from .errors import (
    DimensionMismatchError,
    EmptyInputError,
    ParameterError,
    SingularCovarianceError,
    UnfittedScorerError,
)
from .signal import CycleBatch, apply_normalizer

AR_NLL = "ar_nll"
RECON = "recon"
QUANT = "quant"
MSP = "msp"
ODIN = "odin"
MAHALANOBIS = "mahalanobis"

ALL_METHODS = (AR_NLL, RECON, QUANT, MSP, ODIN, MAHALANOBIS)


@dataclass
class GaussianStats:
    """Per-class feature means with a shared, ridge-regularized covariance."""

    means: np.ndarray  # [C, D]
    covariance: np.ndarray  # [D, D]
    precision: np.ndarray  # [D, D]
    classes: np.ndarray  # [C]


@dataclass
class ScoreMethod:
    """A scoring method plus its method-specific parameters."""

    kind: str
    temperature: float = 1000.0
    epsilon: float = 0.0014
    stats: Optional[GaussianStats] = None

    def __post_init__(self):
        if self.kind not in ALL_METHODS:
            raise ParameterError(f"unknown score method {self.kind!r}")
        if self.temperature <= 0:
            raise ParameterError("temperature must be > 0")
        if self.epsilon < 0:
            raise ParameterError("epsilon must be >= 0")


def fit_mahalanobis(features, labels, ridge_scale: float = 1e-4) -> GaussianStats:
    """Fit per-class Gaussians with shared covariance.

    Covariance = pooled within-class scatter / (n - C), plus a scale-aware
    ridge of ridge_scale * trace/D on the diagonal. Pass ridge_scale=0 to
    disable the ridge (degenerate features then raise).

    Raises:
        ParameterError: a class has fewer than 2 samples.
        SingularCovarianceError: covariance not SPD after the ridge.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise DimensionMismatchError("features must be [n, D] aligned with labels")
    classes = np.unique(labels)
    means = []
    scatter = np.zeros((features.shape[1], features.shape[1]))
    for c in classes:
        xs = features[labels == c]
        if len(xs) < 2:
            raise ParameterError(f"class {c} has {len(xs)} samples; need >= 2")
        mu = xs.mean(axis=0)
        means.append(mu)
        centered = xs - mu
        scatter += centered.T @ centered
    cov = scatter / (features.shape[0] - len(classes))
    ridge = ridge_scale * np.trace(cov) / features.shape[1]
    cov_reg = cov + ridge * np.eye(features.shape[1])
    try:
        np.linalg.cholesky(cov_reg)
    except np.linalg.LinAlgError:
        raise SingularCovarianceError(
            "covariance not positive definite after ridge; increase ridge_scale"
        ) from None
    return GaussianStats(
        means=np.stack(means),
        covariance=cov_reg,
        precision=np.linalg.inv(cov_reg),
        classes=classes,
    )


def mahalanobis_scores(stats: GaussianStats, features) -> np.ndarray:
    """Min-over-classes Mahalanobis distance of each feature vector."""
    features = np.asarray(features, dtype=np.float64)
    dists = []
    for mu in stats.means:
        diff = features - mu
        quad = np.einsum("nd,dk,nk->n", diff, stats.precision, diff, optimize=True)
        dists.append(np.sqrt(np.maximum(quad, 0.0)))
    return np.min(np.stack(dists), axis=0)


def _length_groups(batch: CycleBatch):
    groups: dict[int, list[int]] = {}
    for i, c in enumerate(batch):
        groups.setdefault(len(c), []).append(i)
    return groups


def _tokens_for(batch_n: CycleBatch, bundle: ModelBundle):
    return codec.tokenize_batch(batch_n, bundle.vqvae)


def pooled_features(bundle: ModelBundle, batch: CycleBatch) -> np.ndarray:
    """Pre-logit pooled classifier features for a raw (unnormalized) batch."""
    out = np.zeros((len(batch), bundle.ar.config.model_dim))
    batch_n = apply_normalizer(batch, bundle.stats)
    for _, idx in _length_groups(batch_n).items():
        tokens, _ = _tokens_for(batch_n.subset(idx), bundle)
        out[idx] = armodel.pooled_features_batch(tokens, bundle.ar)
    return out


def predict_labels(bundle: ModelBundle, batch: CycleBatch) -> np.ndarray:
    """Predicted quality labels for a raw batch."""
    preds = np.zeros(len(batch), dtype=np.int64)
    batch_n = apply_normalizer(batch, bundle.stats)
    for _, idx in _length_groups(batch_n).items():
        tokens, _ = _tokens_for(batch_n.subset(idx), bundle)
        probs = armodel.classify_batch(tokens, bundle.ar)
        preds[idx] = probs.argmax(axis=1)
    return preds


def _odin_scores(bundle: ModelBundle, tokens: np.ndarray, temperature: float, epsilon: float):
    ar = bundle.ar
    tokens_in = armodel._cls_inputs(tokens, ar.config)
    emb = armodel.embed_tokens(ar.params, ar.config, tokens_in)
    logits, cache = armodel.cls_logits_from_embeddings(ar, emb)
    scaled = logits / temperature
    p = _softmax(scaled)
    yhat = p.argmax(axis=1)
    # d(log p_yhat)/dlogits, per sample; rows are independent
    dlogits = -p / temperature
    dlogits[np.arange(len(yhat)), yhat] += 1.0 / temperature
    demb = armodel.cls_embedding_gradient(ar, cache, dlogits)
    perturbed = emb + epsilon * np.sign(demb)
    logits2, _ = armodel.cls_logits_from_embeddings(ar, perturbed)
    return 1.0 - _softmax(logits2 / temperature).max(axis=1)


def _softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def score_batch(method: ScoreMethod, bundle: ModelBundle, batch: CycleBatch) -> np.ndarray:
    """Score every cycle of a raw batch; higher = more out-of-distribution.

    AR_NLL, RECON and QUANT are nonnegative; MSP and ODIN lie in
    [0, 1 - 1/num_classes]; MAHALANOBIS is a nonnegative distance and needs
    fitted stats on the method.
    """
    if len(batch) == 0:
        raise EmptyInputError("cannot score an empty batch")
    if method.kind == MAHALANOBIS and method.stats is None:
        raise UnfittedScorerError("mahalanobis scoring requires fitted GaussianStats")
    scores = np.zeros(len(batch))
    batch_n = apply_normalizer(batch, bundle.stats)
    for length, idx in _length_groups(batch_n).items():
        sub = batch_n.subset(idx)
        x = codec.batch_array(sub)
        latents, _ = codec._encoder_forward(bundle.vqvae.params, bundle.vqvae.config, x)
        tokens, zq, sq = codec._quantize_batch(latents, bundle.vqvae.params["codebook"])
        if method.kind == AR_NLL:
            scores[idx] = armodel.sequence_nll_batch(tokens, bundle.ar)
        elif method.kind == QUANT:
            scores[idx] = sq.mean(axis=1)
        elif method.kind == RECON:
            out, _ = codec._decoder_forward(bundle.vqvae.params, bundle.vqvae.config, zq)
            resid = out[:, :, :length] - x
            scores[idx] = (resid**2).sum(axis=1).mean(axis=1)
        elif method.kind == MSP:
            probs = armodel.classify_batch(tokens, bundle.ar)
            scores[idx] = 1.0 - probs.max(axis=1)
        elif method.kind == ODIN:
            scores[idx] = _odin_scores(bundle, tokens, method.temperature, method.epsilon)
        elif method.kind == MAHALANOBIS:
            feats = armodel.pooled_features_batch(tokens, bundle.ar)
            scores[idx] = mahalanobis_scores(method.stats, feats)
    return scores


def export_scores_csv(path, cycle_ids, method_name: str, scores) -> None:
    """Append-free CSV export: one (cycle_id, method, score) row per cycle."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cycle_id", "method", "score"])
        for cid, s in zip(cycle_ids, scores):
            writer.writerow([cid, method_name, f"{s:.12g}"])
