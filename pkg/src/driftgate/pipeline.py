"""End-to-end training: normalizer -> autoencoder -> transformer -> bundle."""

from __future__ import annotations

import numpy as np

from .armodel import ARConfig, train_joint
from .bundle import ModelBundle
from .codec import CodecConfig, tokenize_batch, train_vqvae
from .errors import ParameterError
from .signal import CycleBatch, apply_normalizer, fit_normalizer


def train_bundle(
    train: CycleBatch,
    val: CycleBatch,
    vq_config: CodecConfig,
    ar_config: ARConfig,
    seed: int,
):
    """Train the full pipeline on labeled cycles.

    The normalizer is fit on the training split only; the autoencoder is
    trained first and frozen, then the transformer is trained on its tokens.
    Sub-seeds for the two stages are derived deterministically from `seed`.

    Returns:
        (ModelBundle, vq trace, transformer history)
    """
    if ar_config.vocab_size != vq_config.codebook_size:
        raise ParameterError(
            f"transformer vocab {ar_config.vocab_size} must match codebook "
            f"size {vq_config.codebook_size}"
        )
    seed_vq, seed_ar = np.random.SeedSequence(seed).generate_state(2).tolist()
    stats = fit_normalizer(train)
    train_n = apply_normalizer(train, stats)
    val_n = apply_normalizer(val, stats)
    vq, vq_trace = train_vqvae(train_n, val_n, vq_config, seed_vq)
    train_tokens, _ = tokenize_batch(train_n, vq)
    val_tokens, _ = tokenize_batch(val_n, vq)
    ar, history = train_joint(
        (train_tokens, train.labels()),
        (val_tokens, val.labels()),
        ar_config,
        seed_ar,
    )
    return ModelBundle(stats=stats, vqvae=vq, ar=ar), vq_trace, history
