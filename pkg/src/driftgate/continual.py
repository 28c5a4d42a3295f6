"""Deployment simulation: sequential experiences, replay adaptation, label accounting.

Three strategies are compared on the same experience stream: a static model
(no_cl), unconditional replay fine-tuning after every experience
(replay_always), and replay fine-tuning gated by the shift detector
(ood_replay). Evaluation is prequential: each experience is scored and
evaluated before any update it triggers. Labels are counted as consumed only
when an update actually happens; true labels used for reporting metrics are
measurement only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import armodel, codec, scoring
from ._nn import Adam
from .bundle import ModelBundle
from .errors import EmptyInputError, ParameterError, UndefinedMetricError
from .metrics import accuracy, f1
from .signal import CycleBatch, ProcessParams, WeldCycle, apply_normalizer, generate_cycles
from .thresholding import flag_ood

NO_CL = "no_cl"
REPLAY_ALWAYS = "replay_always"
OOD_REPLAY = "ood_replay"
STRATEGIES = (NO_CL, REPLAY_ALWAYS, OOD_REPLAY)


@dataclass
class Experience:
    """One batch of production cycles arriving at a point in the stream."""

    index: int
    batch: CycleBatch
    regime_tag: str


@dataclass
class DeployConfig:
    """Adaptation knobs for the deployment loop."""

    trigger_fraction: float = 0.1  # q: min fraction of flagged cycles to adapt
    update_epochs: int = 3
    mix_ratio: float = 0.5  # fraction of replay samples in each update set
    buffer_capacity: int = 2000
    update_batch_size: int = 32
    update_lr: float = 1e-3
    update_ar: bool = True  # also refresh the next-token model during updates

    def validate(self) -> None:
        if not 0.0 < self.trigger_fraction <= 1.0:
            raise ParameterError("trigger_fraction must be in (0, 1]")
        if not 0.0 <= self.mix_ratio < 1.0:
            raise ParameterError("mix_ratio must be in [0, 1)")
        if self.buffer_capacity < 1 or self.update_epochs < 1:
            raise ParameterError("buffer_capacity and update_epochs must be >= 1")


class ReplayBuffer:
    """Reservoir-sampled store of labeled cycles with a hard capacity."""

    def __init__(self, capacity: int, seed: int):
        if capacity < 1:
            raise ParameterError("capacity must be >= 1")
        self.capacity = capacity
        self._rng = np.random.default_rng(seed)
        self._items: list[WeldCycle] = []
        self._seen = 0

    def __len__(self) -> int:
        return len(self._items)

    def add(self, cycles: Sequence[WeldCycle]) -> None:
        for cycle in cycles:
            self._seen += 1
            if len(self._items) < self.capacity:
                self._items.append(cycle)
            else:
                j = int(self._rng.integers(0, self._seen))
                if j < self.capacity:
                    self._items[j] = cycle

    def sample(self, count: int) -> list[WeldCycle]:
        if count >= len(self._items):
            return list(self._items)
        idx = self._rng.choice(len(self._items), size=count, replace=False)
        return [self._items[i] for i in idx]


@dataclass
class ExperienceRecord:
    index: int
    regime_tag: str
    f1: float
    accuracy: float
    mean_score: float
    flagged_fraction: float
    triggered: bool
    labels_consumed_cumulative: int


@dataclass
class DeploymentReport:
    """Per-experience results for one strategy plus totals."""

    strategy: str
    method: str
    theta: float
    records: list[ExperienceRecord] = field(default_factory=list)

    @property
    def trigger_count(self) -> int:
        return sum(r.triggered for r in self.records)

    @property
    def labels_total(self) -> int:
        return self.records[-1].labels_consumed_cumulative if self.records else 0

    def f1_series(self) -> np.ndarray:
        return np.array([r.f1 for r in self.records])


def build_stream(
    schedule: Sequence[tuple[ProcessParams, int]],
    cycles_per_experience: int,
    seed: int,
) -> list[Experience]:
    """Expand a (params, experience-count) schedule into a deterministic stream."""
    if not schedule:
        raise EmptyInputError("schedule must be nonempty")
    total = sum(n for _, n in schedule)
    seeds = np.random.SeedSequence(seed).generate_state(total)
    stream = []
    i = 0
    for params, n_exp in schedule:
        params.validate()
        for _ in range(n_exp):
            batch = generate_cycles(params, cycles_per_experience, int(seeds[i]))
            stream.append(Experience(index=i, batch=batch, regime_tag=params.regime_tag))
            i += 1
    return stream


def trigger_decision(scores, theta: float, q: float) -> bool:
    """True iff at least a fraction q of scores reach the threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise EmptyInputError("empty scores")
    return bool(flag_ood(scores, theta).mean() >= q)


def replay_update(
    bundle: ModelBundle,
    new_data: CycleBatch,
    buffer: ReplayBuffer,
    config: DeployConfig,
    seed: int,
) -> ModelBundle:
    """Fine-tune the transformer and classifier on new data mixed with replay.

    The autoencoder and codebook stay frozen; each update epoch runs one
    next-token pass (when update_ar) and one classification pass over the
    mixed set. The buffer ingests the new labeled cycles afterwards. Returns
    a new bundle; the input bundle is untouched.
    """
    config.validate()
    if len(new_data) == 0:
        raise EmptyInputError("replay update needs nonempty new data")
    n_old = int(round(len(new_data) * config.mix_ratio / (1.0 - config.mix_ratio)))
    old = buffer.sample(n_old) if n_old else []
    mixed = CycleBatch(list(new_data.cycles) + old)
    labels = mixed.labels()

    updated = bundle.copy()
    batch_n = apply_normalizer(mixed, updated.stats)
    tokens, _ = codec.tokenize_batch(batch_n, updated.vqvae)
    ar = updated.ar
    opt = Adam(ar.params, lr=config.update_lr)
    rng = np.random.default_rng(seed)
    for _ in range(config.update_epochs):
        order = rng.permutation(len(mixed))
        for start in range(0, len(order), config.update_batch_size):
            idx = order[start : start + config.update_batch_size]
            if config.update_ar:
                _, grads = armodel.ar_loss_and_grads(ar.params, ar.config, tokens[idx])
                opt.step(ar.params, grads)
            _, grads = armodel.cls_loss_and_grads(
                ar.params, ar.config, tokens[idx], labels[idx]
            )
            opt.step(ar.params, grads)
    buffer.add(new_data.cycles)
    return updated


def run_deployment(
    strategy: str,
    stream: Sequence[Experience],
    bundle: ModelBundle,
    method: scoring.ScoreMethod,
    theta: float,
    config: DeployConfig,
    seed: int,
    buffer_seed_data: Optional[CycleBatch] = None,
) -> DeploymentReport:
    """Run one strategy over the stream; returns the per-experience report.

    The input bundle is copied, so several strategies can run from the same
    starting point. buffer_seed_data preloads the replay buffer with already
    labeled (paid-for) cycles, typically the training split.
    """
    if strategy not in STRATEGIES:
        raise ParameterError(f"unknown strategy {strategy!r}")
    config.validate()
    work = bundle.copy()
    ss = np.random.SeedSequence(seed)
    buffer_seed, *update_seeds = ss.generate_state(len(stream) + 1).tolist()
    buffer = ReplayBuffer(config.buffer_capacity, seed=buffer_seed)
    if buffer_seed_data is not None:
        buffer.add(buffer_seed_data.cycles)

    report = DeploymentReport(strategy=strategy, method=method.kind, theta=theta)
    labels_consumed = 0
    for pos, exp in enumerate(stream):
        scores = scoring.score_batch(method, work, exp.batch)
        preds = scoring.predict_labels(work, exp.batch)
        labels = exp.batch.labels()
        flagged = float(flag_ood(scores, theta).mean())
        if strategy == NO_CL:
            triggered = False
        elif strategy == REPLAY_ALWAYS:
            triggered = True
        else:
            triggered = trigger_decision(scores, theta, config.trigger_fraction)
        if triggered:
            labels_consumed += len(exp.batch)
            work = replay_update(work, exp.batch, buffer, config, update_seeds[pos])
        report.records.append(
            ExperienceRecord(
                index=exp.index,
                regime_tag=exp.regime_tag,
                f1=f1(preds, labels),
                accuracy=accuracy(preds, labels),
                mean_score=float(scores.mean()),
                flagged_fraction=flagged,
                triggered=triggered,
                labels_consumed_cumulative=labels_consumed,
            )
        )
    return report


def label_savings(report_ood: DeploymentReport, report_replay: DeploymentReport) -> float:
    """Fraction of labeling cost avoided relative to unconditional replay."""
    if len(report_ood.records) != len(report_replay.records):
        raise ParameterError("reports cover streams of different lengths")
    if report_replay.labels_total == 0:
        raise UndefinedMetricError("replay baseline consumed zero labels")
    return 1.0 - report_ood.labels_total / report_replay.labels_total
