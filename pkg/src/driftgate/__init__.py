"""Shift detection for quasi-periodic sensor cycles with gated replay adaptation.

Pipeline: two-channel cycles are quantized by a convolutional encoder against
a learned codebook, a causal transformer models the token sequences and
predicts quality labels, and the transformer's length-normalized sequence NLL
(plus reconstruction/quantization errors and post-hoc baselines) scores how
far incoming data has drifted. A validation-fitted Youden threshold turns
scores into flags that gate experience-replay fine-tuning in deployment.
"""

from .armodel import (
    ARConfig,
    ARModel,
    ClassPrediction,
    classify,
    next_token_distribution,
    sequence_nll,
    train_joint,
)
from .bundle import ModelBundle, load_bundle, save_bundle
from .codec import (
    Codebook,
    CodecConfig,
    VqvaeModel,
    decode,
    encode,
    quantize,
    reconstruction_error,
    train_vqvae,
)
from .continual import (
    DeployConfig,
    DeploymentReport,
    Experience,
    ReplayBuffer,
    build_stream,
    label_savings,
    replay_update,
    run_deployment,
    trigger_decision,
)
from .metrics import OodScoreInputs, accuracy, auroc, f1, ood_score
from .pipeline import train_bundle
from .scoring import (
    GaussianStats,
    ScoreMethod,
    fit_mahalanobis,
    score_batch,
)
from .signal import (
    ChannelStats,
    CycleBatch,
    ProcessParams,
    WeldCycle,
    apply_normalizer,
    fit_normalizer,
    generate_cycles,
    load_cycles,
    save_cycles,
)
from .thresholding import (
    RocCurve,
    ThresholdDecision,
    flag_ood,
    partition_by_correctness,
    roc_curve,
    youden_threshold,
)

__version__ = "0.1.0"
