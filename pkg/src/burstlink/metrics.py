"""Link-quality metrics and per-trial aggregation.

Every metric is a pure function of logged per-frame events, so a trial
re-aggregated from its persisted event log reproduces the live result
exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def evm(rx_symbols: np.ndarray, ref_symbols: np.ndarray) -> float:
    """Error vector magnitude in percent: 100 * RMS(rx - ref) / RMS(ref)."""
    rx = np.asarray(rx_symbols)
    ref = np.asarray(ref_symbols)
    if rx.size == 0 or ref.size == 0:
        raise ValueError("EVM requires nonempty symbol arrays")
    if rx.shape != ref.shape:
        raise ValueError(f"shape mismatch: {rx.shape} vs {ref.shape}")
    return 100.0 * math.sqrt(
        float(np.mean(np.abs(rx - ref) ** 2)) / float(np.mean(np.abs(ref) ** 2))
    )


def sinr_estimate(equalized: np.ndarray, decisions: np.ndarray) -> float:
    """Decision-aided SINR in dB; +inf when the error power is zero."""
    eq = np.asarray(equalized)
    dec = np.asarray(decisions)
    if eq.size == 0:
        raise ValueError("SINR requires nonempty symbol arrays")
    signal = float(np.mean(np.abs(dec) ** 2))
    error = float(np.mean(np.abs(eq - dec) ** 2))
    if error == 0.0:
        return math.inf
    return 10.0 * math.log10(signal / error)


def goodput(crc_pass_count: int, data_bytes_per_frame: int, duration_s: float) -> float:
    """User bits per second over CRC-validated frames (CRC bytes excluded)."""
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    return crc_pass_count * data_bytes_per_frame * 8.0 / duration_s


def throughput(
    frames_detected: int,
    data_symbols: int,
    bits_per_symbol: int,
    duration_s: float,
) -> float:
    """Data-field bits per second over all detected frames, CRC included."""
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    return frames_detected * data_symbols * bits_per_symbol / duration_s


@dataclass(frozen=True)
class FrameEvent:
    """Measurements logged for one received frame."""

    frame_index: int
    detected: bool
    crc_ok: bool
    failure: str
    err_energy_tx: float = 0.0
    ref_energy_tx: float = 0.0
    err_energy_dec: float = 0.0
    sig_energy_dec: float = 0.0
    n_symbols: int = 0
    residual_freq_hz: float = 0.0
    residual_phase_deg: float = 0.0


@dataclass(frozen=True)
class TrialResult:
    """Aggregated outcome of one trial (a burst of frames through a channel)."""

    frames_sent: int
    frames_detected: int
    crc_pass: int
    goodput_bps: float
    throughput_bps: float
    evm_percent: float
    evm_decision_percent: float
    sinr_db: float
    mean_residual_phase_deg: float
    duration_s: float
    failure_counts: dict[str, int] = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        if not (self.crc_pass <= self.frames_detected <= self.frames_sent):
            raise ValueError("counter invariant violated: crc <= detected <= sent")
        if self.goodput_bps > self.throughput_bps + 1e-9:
            raise ValueError("goodput cannot exceed throughput")


def aggregate_events(
    events: list[FrameEvent],
    data_bytes_per_frame: int,
    data_symbols: int,
    bits_per_symbol: int,
    frame_airtime_s: float,
    config: dict | None = None,
    seed: int = 0,
) -> TrialResult:
    """Fold per-frame events into a TrialResult.

    Aggregation is associative: EVM and SINR come from summed error and
    reference energies, counters from sums, phases from the mean over frames
    that produced a measurement.
    """
    frames_sent = len(events)
    detected = sum(1 for e in events if e.detected)
    passed = sum(1 for e in events if e.crc_ok)
    duration = frames_sent * frame_airtime_s

    failure_counts: dict[str, int] = {}
    for e in events:
        if e.failure:
            failure_counts[e.failure] = failure_counts.get(e.failure, 0) + 1

    err_tx = sum(e.err_energy_tx for e in events)
    ref_tx = sum(e.ref_energy_tx for e in events)
    err_dec = sum(e.err_energy_dec for e in events)
    sig_dec = sum(e.sig_energy_dec for e in events)

    evm_tx = 100.0 * math.sqrt(err_tx / ref_tx) if ref_tx > 0 else math.nan
    evm_dec = 100.0 * math.sqrt(err_dec / sig_dec) if sig_dec > 0 else math.nan
    if sig_dec > 0:
        sinr = math.inf if err_dec == 0 else 10.0 * math.log10(sig_dec / err_dec)
    else:
        sinr = math.nan

    phases = [e.residual_phase_deg for e in events if e.detected]
    mean_phase = float(np.mean(phases)) if phases else math.nan

    return TrialResult(
        frames_sent=frames_sent,
        frames_detected=detected,
        crc_pass=passed,
        goodput_bps=goodput(passed, data_bytes_per_frame, duration) if duration > 0 else 0.0,
        throughput_bps=throughput(detected, data_symbols, bits_per_symbol, duration)
        if duration > 0
        else 0.0,
        evm_percent=evm_tx,
        evm_decision_percent=evm_dec,
        sinr_db=sinr,
        mean_residual_phase_deg=mean_phase,
        duration_s=duration,
        failure_counts=failure_counts,
        config=dict(config or {}),
        seed=seed,
    )
