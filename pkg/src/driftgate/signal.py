"""Synthetic two-channel cycle generation and CSV ingestion.

A cycle is one quasi-periodic segment of synchronized current/voltage samples.
The generator produces duty-cycled pulse trains with per-cycle amplitude
jitter, Gaussian sample noise and linear drift; a tolerance rule on the
realized amplitude factor assigns the binary quality label, so labels are
learnable from the waveform and sensitive to regime shifts.

CSV layout is long format with columns (cycle_id, t, current, voltage, label),
one row per sample, UTF-8, '.' decimal separator, header mandatory.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .errors import (
    EmptyInputError,
    ParameterError,
    RowError,
    SchemaError,
)

EPS_NORM = 1e-8

CSV_COLUMNS = ("cycle_id", "t", "current", "voltage", "label")

# fraction of the pulse period used as phase offset between the two channels
_VOLTAGE_PHASE_FRACTION = 4
# pedestal/swing mix for the voltage channel so both channels scale with amplitude
_VOLTAGE_PEDESTAL = 0.3


@dataclass(frozen=True)
class ProcessParams:
    """Generating parameter set for one process regime.

    Attributes:
        amp_current: Base current amplitude (arbitrary scale).
        amp_voltage: Base voltage amplitude (arbitrary scale).
        pulse_period: Pulse period in samples, >= 4.
        pulse_duty: On-fraction of the period, in (0, 1).
        shape: Waveform family, one of "square", "sawtooth", "smooth".
        noise_std_current: Gaussian sample-noise std for the current channel.
        noise_std_voltage: Gaussian sample-noise std for the voltage channel.
        drift_slope: Per-sample linear drift added to both channels.
        amplitude_jitter: Std of the per-cycle relative amplitude factor.
        quality_delta: Quality rule tolerance: label = 1 iff the realized
            amplitude factor is within +-quality_delta of 1.
        cycle_length: Samples per cycle, >= 8.
    """

    amp_current: float = 1.0
    amp_voltage: float = 0.8
    pulse_period: int = 16
    pulse_duty: float = 0.5
    shape: str = "square"
    noise_std_current: float = 0.05
    noise_std_voltage: float = 0.05
    drift_slope: float = 0.0
    amplitude_jitter: float = 0.15
    quality_delta: float = 0.1
    cycle_length: int = 64

    def validate(self) -> None:
        if self.pulse_period < 4:
            raise ParameterError(f"pulse_period must be >= 4, got {self.pulse_period}")
        if not 0.0 < self.pulse_duty < 1.0:
            raise ParameterError(f"pulse_duty must be in (0, 1), got {self.pulse_duty}")
        if self.shape not in _kernels.SHAPE_CODES:
            raise ParameterError(f"unknown shape {self.shape!r}")
        if self.noise_std_current < 0 or self.noise_std_voltage < 0:
            raise ParameterError("noise_std must be >= 0")
        if self.amplitude_jitter < 0:
            raise ParameterError("amplitude_jitter must be >= 0")
        if self.quality_delta <= 0:
            raise ParameterError("quality_delta must be > 0")
        if self.cycle_length < 8:
            raise ParameterError(f"cycle_length must be >= 8, got {self.cycle_length}")

    @property
    def regime_tag(self) -> str:
        """Stable identifier of this parameter set (content hash)."""
        payload = json.dumps(self.__dict__, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:10]

    def with_changes(self, **kwargs) -> "ProcessParams":
        return replace(self, **kwargs)


@dataclass
class WeldCycle:
    """One segmented cycle: aligned current/voltage samples plus optional label."""

    current: np.ndarray
    voltage: np.ndarray
    label: Optional[int] = None
    cycle_id: str = ""
    regime_tag: str = ""

    def __post_init__(self):
        self.current = np.asarray(self.current, dtype=np.float64)
        self.voltage = np.asarray(self.voltage, dtype=np.float64)
        if self.current.shape != self.voltage.shape or self.current.ndim != 1:
            raise ParameterError("current and voltage must be 1-D arrays of equal length")
        if len(self.current) < 8:
            raise ParameterError(f"cycle length must be >= 8, got {len(self.current)}")
        if not (np.isfinite(self.current).all() and np.isfinite(self.voltage).all()):
            raise ParameterError("cycle samples must be finite")
        if self.label is not None and self.label not in (0, 1):
            raise ParameterError(f"label must be 0 or 1, got {self.label}")

    def __len__(self) -> int:
        return len(self.current)

    def channels(self) -> np.ndarray:
        """Stacked [2, N] view: row 0 current, row 1 voltage."""
        return np.stack([self.current, self.voltage])


@dataclass
class ChannelStats:
    """Per-channel normalization statistics (order: current, voltage)."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != (2,) or self.std.shape != (2,):
            raise ParameterError("channel stats must have one entry per channel")
        if (self.std <= 0).any():
            raise ParameterError("std components must be > 0")


@dataclass
class CycleBatch:
    """Ordered collection of cycles, optionally carrying normalization stats."""

    cycles: list[WeldCycle] = field(default_factory=list)
    channel_stats: Optional[ChannelStats] = None

    def __len__(self) -> int:
        return len(self.cycles)

    def __iter__(self):
        return iter(self.cycles)

    def labels(self) -> np.ndarray:
        """Labels as an int array; raises if any cycle is unlabeled."""
        if any(c.label is None for c in self.cycles):
            raise ParameterError("batch contains unlabeled cycles")
        return np.array([c.label for c in self.cycles], dtype=np.int64)

    def cycle_ids(self) -> list[str]:
        return [c.cycle_id for c in self.cycles]

    def subset(self, indices: Sequence[int]) -> "CycleBatch":
        return CycleBatch([self.cycles[i] for i in indices], self.channel_stats)


def nominal_mean_current(params: ProcessParams) -> float:
    """Expected current-channel mean for a noise-free, jitter-free cycle."""
    p = _kernels.pulse_train(
        params.cycle_length, params.pulse_period, params.pulse_duty, 0, params.shape
    )
    drift = params.drift_slope * (params.cycle_length - 1) / 2.0
    return float(params.amp_current * p.mean() + drift)


def generate_cycles(params: ProcessParams, count: int, seed: int) -> CycleBatch:
    """Generate `count` cycles from one parameter regime.

    Deterministic for fixed (params, count, seed). The per-cycle draw order is
    fixed (amplitude factor, current noise, voltage noise) so batches produced
    from the same seed under different parameters share their random draws.

    Args:
        params: Regime parameters; validated before any drawing.
        count: Number of cycles, >= 1.
        seed: RNG seed.

    Returns:
        CycleBatch with labels assigned by the quality rule.
    """
    params.validate()
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    n = params.cycle_length
    tag = params.regime_tag
    t = np.arange(n, dtype=np.float64)
    phase_v = params.pulse_period // _VOLTAGE_PHASE_FRACTION
    pulse_c = _kernels.pulse_train(n, params.pulse_period, params.pulse_duty, 0, params.shape)
    pulse_v = _kernels.pulse_train(n, params.pulse_period, params.pulse_duty, phase_v, params.shape)
    swing_v = _VOLTAGE_PEDESTAL + (1.0 - _VOLTAGE_PEDESTAL) * pulse_v

    cycles = []
    for i in range(count):
        factor = 1.0 + params.amplitude_jitter * rng.standard_normal()
        eps_c = rng.standard_normal(n)
        eps_v = rng.standard_normal(n)
        label = 1 if abs(factor - 1.0) <= params.quality_delta else 0
        drift = params.drift_slope * t
        current = params.amp_current * factor * pulse_c + drift + params.noise_std_current * eps_c
        voltage = params.amp_voltage * factor * swing_v + drift + params.noise_std_voltage * eps_v
        cycles.append(
            WeldCycle(
                current=current,
                voltage=voltage,
                label=label,
                cycle_id=f"{tag}-s{seed}-c{i:05d}",
                regime_tag=tag,
            )
        )
    return CycleBatch(cycles)


def save_cycles(path, batch: CycleBatch) -> None:
    """Write a batch in the long CSV layout, floats at 9 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for cycle in batch:
            label = "" if cycle.label is None else str(cycle.label)
            for t, (c, v) in enumerate(zip(cycle.current, cycle.voltage)):
                writer.writerow([cycle.cycle_id, t, f"{c:.9g}", f"{v:.9g}", label])


def load_cycles(path, schema: Optional[dict[str, str]] = None) -> CycleBatch:
    """Load cycles from a long-format CSV file.

    Rows are grouped by cycle_id in order of first appearance; sample order
    within a cycle follows file order. The label column may be absent or
    empty (unlabeled cycles).

    Args:
        path: CSV file path.
        schema: Optional map from the canonical column names
            ("cycle_id", "t", "current", "voltage", "label") to the names
            used in the file.

    Raises:
        SchemaError: A required column is missing.
        RowError: A sample is non-numeric or non-finite (names the data row).
        EmptyInputError: The file holds a header but no data rows.
    """
    schema = schema or {}
    cols = {name: schema.get(name, name) for name in CSV_COLUMNS}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise EmptyInputError(f"{path}: empty file")
        for required in ("cycle_id", "t", "current", "voltage"):
            if cols[required] not in reader.fieldnames:
                raise SchemaError(f"{path}: missing required column {cols[required]!r}")
        has_label = cols["label"] in reader.fieldnames

        order: list[str] = []
        samples: dict[str, list[tuple[float, float]]] = {}
        labels: dict[str, Optional[int]] = {}
        for row_index, row in enumerate(reader):
            cid = row[cols["cycle_id"]]
            try:
                cur = float(row[cols["current"]])
                vol = float(row[cols["voltage"]])
            except (TypeError, ValueError) as exc:
                raise RowError(row_index, f"non-numeric sample ({exc})") from None
            if not (math.isfinite(cur) and math.isfinite(vol)):
                raise RowError(row_index, "non-finite sample")
            label: Optional[int] = None
            if has_label:
                raw = (row[cols["label"]] or "").strip()
                if raw:
                    if raw not in ("0", "1"):
                        raise RowError(row_index, f"label must be 0 or 1, got {raw!r}")
                    label = int(raw)
            if cid not in samples:
                order.append(cid)
                samples[cid] = []
                labels[cid] = label
            elif labels[cid] != label:
                raise RowError(row_index, f"inconsistent label within cycle {cid!r}")
            samples[cid].append((cur, vol))

    if not order:
        raise EmptyInputError(f"{path}: no data rows")
    cycles = []
    for cid in order:
        arr = np.array(samples[cid], dtype=np.float64)
        cycles.append(
            WeldCycle(current=arr[:, 0], voltage=arr[:, 1], label=labels[cid], cycle_id=cid)
        )
    return CycleBatch(cycles)


def fit_normalizer(batch: CycleBatch) -> ChannelStats:
    """Per-channel mean/std over all samples; std floored at EPS_NORM."""
    if len(batch) == 0:
        raise EmptyInputError("cannot fit normalizer on an empty batch")
    stacked = np.concatenate([c.channels() for c in batch], axis=1)
    mean = stacked.mean(axis=1)
    std = stacked.std(axis=1)
    std = np.maximum(std, EPS_NORM)
    return ChannelStats(mean=mean, std=std)


def apply_normalizer(batch: CycleBatch, stats: ChannelStats) -> CycleBatch:
    """Z-score every cycle with the given stats; returns a new batch."""
    if len(batch) == 0:
        raise EmptyInputError("cannot normalize an empty batch")
    out = []
    for c in batch:
        out.append(
            WeldCycle(
                current=(c.current - stats.mean[0]) / stats.std[0],
                voltage=(c.voltage - stats.mean[1]) / stats.std[1],
                label=c.label,
                cycle_id=c.cycle_id,
                regime_tag=c.regime_tag,
            )
        )
    return CycleBatch(out, channel_stats=stats)
