"""Causal transformer over token sequences with a quality-classification head.

The transformer models the next-token distribution of quantized cycles; the
length-normalized negative log-likelihood of a sequence is the primary shift
signal. A mean-pooled linear head on the same trunk predicts the binary
quality label. Joint training runs a fixed schedule of next-token epochs with
interleaved classification epochs followed by a classification fine-tune.

Sequences are fed with a begin-of-sequence token (index = vocab size), so the
first real token is conditioned on it; internally the embedding table has
vocab + 1 rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._nn import (
    Adam,
    cross_entropy,
    gelu,
    gelu_grad,
    layernorm_backward,
    layernorm_forward,
    softmax,
)
from .errors import (
    EmptyInputError,
    OutOfVocabularyError,
    ParameterError,
    PrefixTooLongError,
    TrainingDivergedError,
)

_MASK_VALUE = -1e30


def _flat_outer(x, dy):
    """Sum over batch and position of outer products: [B,L,i],[B,L,o] -> [i,o]."""
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


@dataclass(frozen=True)
class ARConfig:
    """Architecture and training-schedule parameters."""

    vocab_size: int = 64
    context_length: int = 32
    layers: int = 2
    heads: int = 2
    model_dim: int = 64
    mlp_ratio: int = 4
    class_count: int = 2
    lr_ar: float = 1e-3
    lr_cls: float = 1e-3
    batch_size: int = 32
    ar_epochs: int = 30
    cls_interval: int = 10
    cls_block_epochs: int = 2
    finetune_epochs: int = 5
    label_smoothing: float = 0.05  # keeps softmax confidence off the extremes

    def validate(self) -> None:
        if self.vocab_size < 2:
            raise ParameterError("vocab_size must be >= 2")
        if self.model_dim % self.heads != 0:
            raise ParameterError("model_dim must be divisible by heads")
        if self.class_count != 2:
            raise ParameterError("only binary quality labels are supported")

    @property
    def bos(self) -> int:
        return self.vocab_size

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads


@dataclass
class ClassPrediction:
    """Binary class probabilities and the argmax label."""

    probabilities: np.ndarray
    predicted_label: int


@dataclass
class EpochRecord:
    index: int
    phase: str  # "ar", "cls_mid" or "cls_ft"
    train_loss: float
    val_loss: float


@dataclass
class ARModel:
    params: dict
    config: ARConfig

    def copy(self) -> "ARModel":
        return ARModel({k: v.copy() for k, v in self.params.items()}, self.config)


def init_armodel(config: ARConfig, rng: np.random.Generator) -> ARModel:
    config.validate()
    d = config.model_dim
    hid = config.mlp_ratio * d
    params = {
        "tok_emb": rng.normal(0.0, 0.1, (config.vocab_size + 1, d)),
        "pos_emb": rng.normal(0.0, 0.1, (config.context_length, d)),
        "lnf_g": np.ones(d),
        "lnf_b": np.zeros(d),
        # zero-initialized output heads: untrained next-token distribution is uniform
        "w_ar": np.zeros((d, config.vocab_size)),
        "b_ar": np.zeros(config.vocab_size),
        "w_cls": np.zeros((d, config.class_count)),
        "b_cls": np.zeros(config.class_count),
    }
    for l in range(config.layers):
        scale = 1.0 / np.sqrt(d)
        for name in ("wq", "wk", "wv", "wo"):
            params[f"{name}{l}"] = rng.normal(0.0, scale, (d, d))
            params[f"b{name[1]}{l}"] = np.zeros(d)
        params[f"ln1_g{l}"] = np.ones(d)
        params[f"ln1_b{l}"] = np.zeros(d)
        params[f"ln2_g{l}"] = np.ones(d)
        params[f"ln2_b{l}"] = np.zeros(d)
        params[f"mlp_w1_{l}"] = rng.normal(0.0, scale, (d, hid))
        params[f"mlp_b1_{l}"] = np.zeros(hid)
        params[f"mlp_w2_{l}"] = rng.normal(0.0, 1.0 / np.sqrt(hid), (hid, d))
        params[f"mlp_b2_{l}"] = np.zeros(d)
    return ARModel(params, config)


def _check_tokens(tokens: np.ndarray, config: ARConfig) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= config.vocab_size):
        raise OutOfVocabularyError(
            f"tokens must be in [0, {config.vocab_size}), got range "
            f"[{tokens.min()}, {tokens.max()}]"
        )
    return tokens


def _causal_mask(length: int) -> np.ndarray:
    mask = np.zeros((length, length))
    mask[np.triu_indices(length, k=1)] = _MASK_VALUE
    return mask


def _trunk_forward(params, cfg: ARConfig, emb: np.ndarray):
    """Transformer trunk from input embeddings [B,L,d] to final hidden states."""
    nb, length, d = emb.shape
    mask = _causal_mask(length)
    scale = 1.0 / np.sqrt(cfg.head_dim)
    x = emb
    layer_caches = []
    for l in range(cfg.layers):
        h1, ln1c = layernorm_forward(x, params[f"ln1_g{l}"], params[f"ln1_b{l}"])
        q = h1 @ params[f"wq{l}"] + params[f"bq{l}"]
        k = h1 @ params[f"wk{l}"] + params[f"bk{l}"]
        v = h1 @ params[f"wv{l}"] + params[f"bv{l}"]
        qh = q.reshape(nb, length, cfg.heads, cfg.head_dim).transpose(0, 2, 1, 3)
        kh = k.reshape(nb, length, cfg.heads, cfg.head_dim).transpose(0, 2, 1, 3)
        vh = v.reshape(nb, length, cfg.heads, cfg.head_dim).transpose(0, 2, 1, 3)
        att = qh @ kh.transpose(0, 1, 3, 2) * scale + mask
        p = softmax(att, axis=-1)
        ctx = (p @ vh).transpose(0, 2, 1, 3).reshape(nb, length, d)
        attn_out = ctx @ params[f"wo{l}"] + params[f"bo{l}"]
        x1 = x + attn_out
        h2, ln2c = layernorm_forward(x1, params[f"ln2_g{l}"], params[f"ln2_b{l}"])
        m1 = h2 @ params[f"mlp_w1_{l}"] + params[f"mlp_b1_{l}"]
        a = gelu(m1)
        m2 = a @ params[f"mlp_w2_{l}"] + params[f"mlp_b2_{l}"]
        x2 = x1 + m2
        layer_caches.append((x, h1, ln1c, qh, kh, vh, p, ctx, x1, h2, ln2c, m1, a))
        x = x2
    hidden, lnfc = layernorm_forward(x, params["lnf_g"], params["lnf_b"])
    return hidden, (layer_caches, lnfc, scale)


def _trunk_backward(params, cfg: ARConfig, cache, dhidden):
    """Returns (grads dict, dembeddings)."""
    layer_caches, lnfc, scale = cache
    grads = {}
    dx, grads["lnf_g"], grads["lnf_b"] = layernorm_backward(dhidden, lnfc)
    for l in reversed(range(cfg.layers)):
        x, h1, ln1c, qh, kh, vh, p, ctx, x1, h2, ln2c, m1, a = layer_caches[l]
        nb, length, d = x.shape
        # MLP branch
        dm2 = dx
        grads[f"mlp_w2_{l}"] = _flat_outer(a, dm2)
        grads[f"mlp_b2_{l}"] = dm2.sum(axis=(0, 1))
        da = dm2 @ params[f"mlp_w2_{l}"].T
        dm1 = da * gelu_grad(m1)
        grads[f"mlp_w1_{l}"] = _flat_outer(h2, dm1)
        grads[f"mlp_b1_{l}"] = dm1.sum(axis=(0, 1))
        dh2 = dm1 @ params[f"mlp_w1_{l}"].T
        dx1_ln, grads[f"ln2_g{l}"], grads[f"ln2_b{l}"] = layernorm_backward(dh2, ln2c)
        dx1 = dx + dx1_ln
        # attention branch
        dattn_out = dx1
        grads[f"wo{l}"] = _flat_outer(ctx, dattn_out)
        grads[f"bo{l}"] = dattn_out.sum(axis=(0, 1))
        dctx = (dattn_out @ params[f"wo{l}"].T).reshape(
            nb, length, cfg.heads, cfg.head_dim
        ).transpose(0, 2, 1, 3)
        dp = dctx @ vh.transpose(0, 1, 3, 2)
        dvh = p.transpose(0, 1, 3, 2) @ dctx
        datt = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
        dqh = datt @ kh * scale
        dkh = datt.transpose(0, 1, 3, 2) @ qh * scale
        dq = dqh.transpose(0, 2, 1, 3).reshape(nb, length, d)
        dk = dkh.transpose(0, 2, 1, 3).reshape(nb, length, d)
        dv = dvh.transpose(0, 2, 1, 3).reshape(nb, length, d)
        grads[f"wq{l}"] = _flat_outer(h1, dq)
        grads[f"bq{l}"] = dq.sum(axis=(0, 1))
        grads[f"wk{l}"] = _flat_outer(h1, dk)
        grads[f"bk{l}"] = dk.sum(axis=(0, 1))
        grads[f"wv{l}"] = _flat_outer(h1, dv)
        grads[f"bv{l}"] = dv.sum(axis=(0, 1))
        dh1 = dq @ params[f"wq{l}"].T + dk @ params[f"wk{l}"].T + dv @ params[f"wv{l}"].T
        dx_ln, grads[f"ln1_g{l}"], grads[f"ln1_b{l}"] = layernorm_backward(dh1, ln1c)
        dx = dx1 + dx_ln
    return grads, dx


def embed_tokens(params, cfg: ARConfig, tokens_in: np.ndarray) -> np.ndarray:
    """Token + positional embeddings for an input sequence (BOS already prepended)."""
    length = tokens_in.shape[1]
    if length > cfg.context_length:
        raise PrefixTooLongError(
            f"sequence length {length} exceeds context {cfg.context_length}"
        )
    return params["tok_emb"][tokens_in] + params["pos_emb"][:length][None, :, :]


def _embedding_grads(params, tokens_in, demb):
    dtok = np.zeros_like(params["tok_emb"])
    np.add.at(dtok, tokens_in.ravel(), demb.reshape(-1, demb.shape[-1]))
    dpos = np.zeros_like(params["pos_emb"])
    dpos[: demb.shape[1]] = demb.sum(axis=0)
    return dtok, dpos


def _ar_inputs(tokens: np.ndarray, cfg: ARConfig) -> np.ndarray:
    bos_col = np.full((tokens.shape[0], 1), cfg.bos, dtype=np.int64)
    return np.concatenate([bos_col, tokens[:, :-1]], axis=1)


def _cls_inputs(tokens: np.ndarray, cfg: ARConfig) -> np.ndarray:
    bos_col = np.full((tokens.shape[0], 1), cfg.bos, dtype=np.int64)
    return np.concatenate([bos_col, tokens], axis=1)


def next_token_distribution(prefix: Sequence[int], model: ARModel) -> np.ndarray:
    """Distribution over the next token given a (possibly empty) prefix."""
    cfg = model.config
    prefix = _check_tokens(np.asarray(prefix, dtype=np.int64).reshape(1, -1), cfg)
    tokens_in = np.concatenate(
        [np.full((1, 1), cfg.bos, dtype=np.int64), prefix], axis=1
    )
    if tokens_in.shape[1] > cfg.context_length:
        raise PrefixTooLongError(
            f"prefix of length {prefix.shape[1]} exceeds context {cfg.context_length}"
        )
    emb = embed_tokens(model.params, cfg, tokens_in)
    hidden, _ = _trunk_forward(model.params, cfg, emb)
    logits = hidden[0, -1] @ model.params["w_ar"] + model.params["b_ar"]
    return softmax(logits)


def sequence_nll_batch(tokens: np.ndarray, model: ARModel) -> np.ndarray:
    """Length-normalized negative log-likelihood per sequence, natural log."""
    cfg = model.config
    tokens = _check_tokens(np.atleast_2d(tokens), cfg)
    if tokens.shape[1] < 1:
        raise EmptyInputError("sequences must have at least one token")
    emb = embed_tokens(model.params, cfg, _ar_inputs(tokens, cfg))
    hidden, _ = _trunk_forward(model.params, cfg, emb)
    logits = hidden @ model.params["w_ar"] + model.params["b_ar"]
    logp = logits - logits.max(axis=-1, keepdims=True)
    logp = logp - np.log(np.exp(logp).sum(axis=-1, keepdims=True))
    b, t = tokens.shape
    picked = logp[np.arange(b)[:, None], np.arange(t)[None, :], tokens]
    return -picked.mean(axis=1)


def sequence_nll(tokens: Sequence[int], model: ARModel) -> float:
    """NLL of one token sequence, averaged over its length."""
    return float(sequence_nll_batch(np.asarray(tokens).reshape(1, -1), model)[0])


def _cls_forward(params, cfg: ARConfig, tokens: np.ndarray):
    emb = embed_tokens(params, cfg, _cls_inputs(tokens, cfg))
    hidden, cache = _trunk_forward(params, cfg, emb)
    pooled = hidden.mean(axis=1)
    logits = pooled @ params["w_cls"] + params["b_cls"]
    return logits, pooled, hidden, cache


def classify_batch(tokens: np.ndarray, model: ARModel) -> np.ndarray:
    """Class probabilities [B, 2] for a batch of sequences."""
    tokens = _check_tokens(np.atleast_2d(tokens), model.config)
    logits, _, _, _ = _cls_forward(model.params, model.config, tokens)
    return softmax(logits, axis=-1)


def classify(tokens: Sequence[int], model: ARModel) -> ClassPrediction:
    """Quality prediction for one token sequence."""
    probs = classify_batch(np.asarray(tokens).reshape(1, -1), model)[0]
    return ClassPrediction(probabilities=probs, predicted_label=int(np.argmax(probs)))


def pooled_features_batch(tokens: np.ndarray, model: ARModel) -> np.ndarray:
    """The classifier's pre-logit pooled representation [B, model_dim]."""
    tokens = _check_tokens(np.atleast_2d(tokens), model.config)
    _, pooled, _, _ = _cls_forward(model.params, model.config, tokens)
    return pooled


def cls_logits_from_embeddings(model: ARModel, emb: np.ndarray):
    """Classifier logits from explicit input embeddings; returns (logits, cache)."""
    hidden, cache = _trunk_forward(model.params, model.config, emb)
    pooled = hidden.mean(axis=1)
    logits = pooled @ model.params["w_cls"] + model.params["b_cls"]
    return logits, (cache, hidden.shape[1])


def cls_embedding_gradient(model: ARModel, cache, dlogits: np.ndarray) -> np.ndarray:
    """Gradient of a scalar loss w.r.t. the input embeddings."""
    trunk_cache, length = cache
    dpooled = dlogits @ model.params["w_cls"].T
    dhidden = np.repeat(dpooled[:, None, :], length, axis=1) / length
    _, demb = _trunk_backward(model.params, model.config, trunk_cache, dhidden)
    return demb


def ar_loss(params, cfg: ARConfig, tokens: np.ndarray) -> float:
    emb = embed_tokens(params, cfg, _ar_inputs(tokens, cfg))
    hidden, _ = _trunk_forward(params, cfg, emb)
    logits = hidden @ params["w_ar"] + params["b_ar"]
    loss, _ = cross_entropy(logits, tokens)
    return float(loss)


def ar_loss_and_grads(params, cfg: ARConfig, tokens: np.ndarray):
    tokens_in = _ar_inputs(tokens, cfg)
    emb = embed_tokens(params, cfg, tokens_in)
    hidden, cache = _trunk_forward(params, cfg, emb)
    logits = hidden @ params["w_ar"] + params["b_ar"]
    loss, dlogits = cross_entropy(logits, tokens)
    grads = {
        "w_ar": _flat_outer(hidden, dlogits),
        "b_ar": dlogits.sum(axis=(0, 1)),
        "w_cls": np.zeros_like(params["w_cls"]),
        "b_cls": np.zeros_like(params["b_cls"]),
    }
    dhidden = dlogits @ params["w_ar"].T
    trunk_grads, demb = _trunk_backward(params, cfg, cache, dhidden)
    grads.update(trunk_grads)
    grads["tok_emb"], grads["pos_emb"] = _embedding_grads(params, tokens_in, demb)
    return float(loss), grads


def _smooth_targets(labels: np.ndarray, cfg: ARConfig) -> np.ndarray:
    s = cfg.label_smoothing
    q = np.full((labels.shape[0], cfg.class_count), s / cfg.class_count)
    q[np.arange(labels.shape[0]), labels] += 1.0 - s
    return q


def cls_loss(params, cfg: ARConfig, tokens: np.ndarray, labels: np.ndarray) -> float:
    logits, _, _, _ = _cls_forward(params, cfg, tokens)
    logp = logits - logits.max(axis=-1, keepdims=True)
    logp = logp - np.log(np.exp(logp).sum(axis=-1, keepdims=True))
    q = _smooth_targets(labels, cfg)
    return float(-(q * logp).sum(axis=1).mean())


def cls_loss_and_grads(params, cfg: ARConfig, tokens: np.ndarray, labels: np.ndarray):
    tokens_in = _cls_inputs(tokens, cfg)
    emb = embed_tokens(params, cfg, tokens_in)
    hidden, cache = _trunk_forward(params, cfg, emb)
    pooled = hidden.mean(axis=1)
    logits = pooled @ params["w_cls"] + params["b_cls"]
    logp = logits - logits.max(axis=-1, keepdims=True)
    logp = logp - np.log(np.exp(logp).sum(axis=-1, keepdims=True))
    q = _smooth_targets(labels, cfg)
    loss = float(-(q * logp).sum(axis=1).mean())
    p = np.exp(logp)
    dlogits = (p - q) / labels.shape[0]
    grads = {
        "w_cls": pooled.T @ dlogits,
        "b_cls": dlogits.sum(axis=0),
        "w_ar": np.zeros_like(params["w_ar"]),
        "b_ar": np.zeros_like(params["b_ar"]),
    }
    dpooled = dlogits @ params["w_cls"].T
    length = hidden.shape[1]
    dhidden = np.repeat(dpooled[:, None, :], length, axis=1) / length
    trunk_grads, demb = _trunk_backward(params, cfg, cache, dhidden)
    grads.update(trunk_grads)
    grads["tok_emb"], grads["pos_emb"] = _embedding_grads(params, tokens_in, demb)
    return loss, grads


def _run_epoch(model, opt, tokens, labels, rng, phase, cfg):
    order = rng.permutation(tokens.shape[0])
    losses = []
    for start in range(0, len(order), cfg.batch_size):
        idx = order[start : start + cfg.batch_size]
        if phase == "ar":
            loss, grads = ar_loss_and_grads(model.params, cfg, tokens[idx])
            lr = cfg.lr_ar
        else:
            loss, grads = cls_loss_and_grads(model.params, cfg, tokens[idx], labels[idx])
            lr = cfg.lr_cls
        if not np.isfinite(loss):
            raise TrainingDivergedError(opt.t, phase)
        opt.step(model.params, grads, lr=lr)
        losses.append(loss)
    return float(np.mean(losses))


def train_joint(train, val, config: ARConfig, seed: int):
    """Train next-token prediction and classification on the fixed schedule.

    The schedule runs `ar_epochs` next-token epochs with `cls_block_epochs`
    classification epochs inserted after every `cls_interval`-th epoch, then
    `finetune_epochs` classification epochs. Defaults give 30 + 3*2 + 5 = 41
    epoch records.

    Args:
        train: (tokens [B,T], labels [B]) training pair.
        val: (tokens, labels) validation pair.
        config: Architecture/schedule parameters.
        seed: RNG seed; runs are bit-reproducible per seed.

    Returns:
        (ARModel, list[EpochRecord])
    """
    config.validate()
    train_tokens, train_labels = train
    val_tokens, val_labels = val
    train_tokens = _check_tokens(np.atleast_2d(train_tokens), config)
    val_tokens = _check_tokens(np.atleast_2d(val_tokens), config)
    train_labels = np.asarray(train_labels, dtype=np.int64)
    val_labels = np.asarray(val_labels, dtype=np.int64)
    if train_tokens.shape[1] + 1 > config.context_length:
        raise ParameterError(
            f"sequences of length {train_tokens.shape[1]} need context "
            f">= {train_tokens.shape[1] + 1}"
        )
    rng = np.random.default_rng(seed)
    model = init_armodel(config, rng)
    opt = Adam(model.params, lr=config.lr_ar)

    history: list[EpochRecord] = []

    def record(phase):
        loss = _run_epoch(model, opt, train_tokens, train_labels, rng, phase, config)
        if phase == "ar":
            val_loss = ar_loss(model.params, config, val_tokens)
        else:
            val_loss = cls_loss(model.params, config, val_tokens, val_labels)
        history.append(EpochRecord(len(history), phase, loss, float(val_loss)))

    for epoch in range(1, config.ar_epochs + 1):
        record("ar")
        if config.cls_interval > 0 and epoch % config.cls_interval == 0:
            for _ in range(config.cls_block_epochs):
                record("cls_mid")
    for _ in range(config.finetune_epochs):
        record("cls_ft")
    return model, history
