"""Symbol- and sample-level signal primitives.

Constellations with Gray labeling, Golay complementary sequences for frame
detection, square-root raised-cosine pulse shaping, matched filtering, and a
square-law AGC loop. Everything here is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SUPPORTED_ORDERS = (4, 8, 16, 64)

BITS_PER_SYMBOL = {4: 2, 8: 3, 16: 4, 64: 6}


@dataclass(frozen=True)
class Constellation:
    """Unit-average-power QAM constellation with an explicit bit labeling.

    ``points[bit_labels[g]]`` is the symbol transmitted for the bit group
    whose unsigned integer value is ``g`` (MSB first within the group).
    """

    order: int
    points: np.ndarray
    bits_per_symbol: int
    bit_labels: tuple[int, ...]

    def symbol_for_group(self, group: int) -> complex:
        return self.points[self.bit_labels[group]]


@dataclass(frozen=True)
class GolayPair:
    """Complementary pair of +/-1 sequences of length ``length``."""

    a: np.ndarray
    b: np.ndarray
    length: int


@dataclass(frozen=True)
class PulseShapeConfig:
    """Square-root raised-cosine shaping parameters.

    ``interpolation`` is the integer upsampling factor (samples per symbol).
    """

    # Span 24 keeps the TX/RX filter cascade's symbol-instant ISI near 6e-4
    # RMS; short spans leave an ISI floor that dominates loopback EVM.
    roll_off: float = 0.25
    span_symbols: int = 24
    interpolation: int = 4

    def __post_init__(self) -> None:
        if not 0.0 < self.roll_off <= 1.0:
            raise ValueError(f"roll_off must be in (0, 1], got {self.roll_off}")
        if self.span_symbols < 1:
            raise ValueError("span_symbols must be >= 1")
        if self.interpolation < 2:
            raise ValueError("interpolation factor must be >= 2")

    @property
    def tap_count(self) -> int:
        return self.span_symbols * self.interpolation + 1


@dataclass(frozen=True)
class ComplexBuffer:
    """Complex baseband samples with their sampling period in seconds."""

    samples: np.ndarray
    sample_period: float

    def __post_init__(self) -> None:
        if self.sample_period <= 0:
            raise ValueError("sample_period must be positive")

    def __len__(self) -> int:
        return len(self.samples)


def _gray_to_index(code: int) -> int:
    """Decode a Gray code word to its sequential level index."""
    value = 0
    while code:
        value ^= code
        code >>= 1
    return value


def _axis_levels(bits: int) -> np.ndarray:
    n = 1 << bits
    return np.arange(-(n - 1), n, 2, dtype=float)


def _grid_constellation(i_bits: int, q_bits: int) -> tuple[np.ndarray, tuple[int, ...]]:
    """Rectangular grid with per-axis Gray labeling.

    The first ``i_bits`` of a group select the in-phase level, the remaining
    ``q_bits`` the quadrature level. Points are stored row-major over the
    grid; ``labels[g]`` maps group value g to its point index.
    """
    i_levels = _axis_levels(i_bits)
    q_levels = _axis_levels(q_bits)
    n_i, n_q = len(i_levels), len(q_levels)

    points = np.empty(n_i * n_q, dtype=complex)
    for ii in range(n_i):
        for qq in range(n_q):
            points[ii * n_q + qq] = i_levels[ii] + 1j * q_levels[qq]
    points /= np.sqrt(np.mean(np.abs(points) ** 2))

    labels = [0] * (n_i * n_q)
    for group in range(n_i * n_q):
        i_code = group >> q_bits
        q_code = group & ((1 << q_bits) - 1)
        idx = _gray_to_index(i_code) * n_q + _gray_to_index(q_code)
        labels[group] = idx
    return points, tuple(labels)


def build_constellation(order: int) -> Constellation:
    """Build the normalized constellation for a supported QAM order.

    Square orders (4, 16, 64) use per-axis Gray labeling; 8QAM is a 4x2
    rectangular grid (two Gray bits on I, one on Q) scaled to unit average
    power, so nearest neighbors always differ in exactly one bit.
    """
    if order not in SUPPORTED_ORDERS:
        raise ValueError(
            f"unsupported modulation order {order}; expected one of {SUPPORTED_ORDERS}"
        )
    bps = BITS_PER_SYMBOL[order]
    q_bits = bps // 2
    i_bits = bps - q_bits
    points, labels = _grid_constellation(i_bits, q_bits)
    return Constellation(order=order, points=points, bits_per_symbol=bps, bit_labels=labels)


def map_bits(bits: np.ndarray, constellation: Constellation) -> np.ndarray:
    """Map a 0/1 bit sequence to constellation symbols, MSB first per group."""
    bits = np.asarray(bits, dtype=np.uint8)
    bps = constellation.bits_per_symbol
    if bits.size % bps:
        raise ValueError(
            f"bit count {bits.size} not divisible by {bps} bits per symbol"
        )
    if bits.size == 0:
        return np.empty(0, dtype=complex)
    groups = bits.reshape(-1, bps)
    weights = 1 << np.arange(bps - 1, -1, -1)
    values = groups @ weights
    labels = np.asarray(constellation.bit_labels)
    return constellation.points[labels[values]]


def demap_symbols(symbols: np.ndarray, constellation: Constellation) -> np.ndarray:
    """Hard-decide symbols to bits by nearest constellation point.

    Ties go to the lowest point index, which makes the decision deterministic.
    """
    symbols = np.asarray(symbols, dtype=complex)
    if symbols.size == 0:
        return np.empty(0, dtype=np.uint8)
    d2 = np.abs(symbols[:, None] - constellation.points[None, :]) ** 2
    nearest = np.argmin(d2, axis=1)

    labels = np.asarray(constellation.bit_labels)
    inverse = np.empty_like(labels)
    inverse[labels] = np.arange(len(labels))
    values = inverse[nearest]

    bps = constellation.bits_per_symbol
    shifts = np.arange(bps - 1, -1, -1)
    bits = (values[:, None] >> shifts[None, :]) & 1
    return bits.astype(np.uint8).ravel()


def hard_decisions(symbols: np.ndarray, constellation: Constellation) -> np.ndarray:
    """Nearest constellation point for each symbol (same rule as demap)."""
    symbols = np.asarray(symbols, dtype=complex)
    if symbols.size == 0:
        return np.empty(0, dtype=complex)
    d2 = np.abs(symbols[:, None] - constellation.points[None, :]) ** 2
    return constellation.points[np.argmin(d2, axis=1)]


def generate_golay_pair(length: int) -> GolayPair:
    """Generate a +/-1 Golay complementary pair by recursive doubling.

    The aperiodic autocorrelations of the two sequences sum to 2*length at
    lag zero and exactly zero at every other lag.
    """
    if length < 2 or length > 4096 or (length & (length - 1)) != 0:
        raise ValueError(f"Golay length must be a power of two in [2, 4096], got {length}")
    a = np.array([1], dtype=np.int64)
    b = np.array([1], dtype=np.int64)
    while len(a) < length:
        a, b = np.concatenate([a, b]), np.concatenate([a, -b])
    return GolayPair(a=a, b=b, length=length)


def complementary_autocorrelation(pair: GolayPair) -> np.ndarray:
    """Sum of the aperiodic autocorrelations of the pair, lags 0..length-1."""
    n = pair.length
    out = np.empty(n, dtype=np.int64)
    for lag in range(n):
        out[lag] = int(np.dot(pair.a[lag:], pair.a[: n - lag])) + int(
            np.dot(pair.b[lag:], pair.b[: n - lag])
        )
    return out


def design_srrc(cfg: PulseShapeConfig) -> np.ndarray:
    """Unit-energy square-root raised-cosine taps from the closed form.

    The removable singularities at t = 0 and |t| = T/(4*beta) are evaluated
    with their analytic limits so the taps are bit-reproducible.
    """
    beta = cfg.roll_off
    n = cfg.tap_count
    # Symbol-normalized time axis, symmetric around zero.
    t = (np.arange(n) - (n - 1) / 2) / cfg.interpolation

    taps = np.empty(n, dtype=float)
    at_zero = t == 0.0
    at_sing = np.isclose(np.abs(t), 1.0 / (4.0 * beta), rtol=0.0, atol=1e-12)
    regular = ~(at_zero | at_sing)

    taps[at_zero] = 1.0 - beta + 4.0 * beta / np.pi
    taps[at_sing] = (beta / np.sqrt(2.0)) * (
        (1.0 + 2.0 / np.pi) * np.sin(np.pi / (4.0 * beta))
        + (1.0 - 2.0 / np.pi) * np.cos(np.pi / (4.0 * beta))
    )
    tr = t[regular]
    num = np.sin(np.pi * tr * (1.0 - beta)) + 4.0 * beta * tr * np.cos(
        np.pi * tr * (1.0 + beta)
    )
    den = np.pi * tr * (1.0 - (4.0 * beta * tr) ** 2)
    taps[regular] = num / den

    return taps / np.sqrt(np.sum(taps**2))


def shape_and_upsample(
    symbols: np.ndarray,
    cfg: PulseShapeConfig,
    symbol_period: float = 1e-6,
) -> ComplexBuffer:
    """Zero-stuff by the interpolation factor and convolve with SRRC taps.

    Output length is ``interpolation * n_symbols + tap_count - 1``; empty
    input yields an empty buffer.
    """
    symbols = np.asarray(symbols, dtype=complex)
    sample_period = symbol_period / cfg.interpolation
    if symbols.size == 0:
        return ComplexBuffer(np.empty(0, dtype=complex), sample_period)
    stuffed = np.zeros(symbols.size * cfg.interpolation, dtype=complex)
    stuffed[:: cfg.interpolation] = symbols
    taps = design_srrc(cfg)
    return ComplexBuffer(np.convolve(stuffed, taps), sample_period)


def matched_filter_downsample(
    buf: ComplexBuffer,
    cfg: PulseShapeConfig,
    phase_offset: int = 0,
) -> np.ndarray:
    """Matched-filter with the SRRC taps and decimate at a sampling phase.

    The combined group delay of the shaping/matched pair (tap_count - 1
    samples) is trimmed, so for a buffer produced by ``shape_and_upsample``
    the symbols sit at phase 0.
    """
    if not 0 <= phase_offset < cfg.interpolation:
        raise ValueError(
            f"phase_offset must be in [0, {cfg.interpolation}), got {phase_offset}"
        )
    if len(buf) == 0:
        return np.empty(0, dtype=complex)
    taps = design_srrc(cfg)
    filtered = np.convolve(buf.samples, taps)
    trimmed = filtered[cfg.tap_count - 1 :]
    return trimmed[phase_offset :: cfg.interpolation]


def agc(
    buf: ComplexBuffer,
    target_power: float = 1.0,
    loop_gain: float = 0.05,
    freeze_after: int | None = None,
) -> ComplexBuffer:
    """Square-law AGC: per-sample gain driven by the accumulated power error.

    The gain is updated multiplicatively, ``g *= 1 + mu * (target - |y|^2) /
    target``, and clamped to [1e-6, 1e6] so an all-zero input stays all-zero.
    With ``freeze_after`` set, the gain is held constant from that sample on,
    which is the burst-mode behavior the receiver uses: acquire on the
    training and preamble, then keep the payload scaling constant.
    """
    if target_power <= 0:
        raise ValueError("target_power must be positive")
    if not 0.0 < loop_gain < 1.0:
        raise ValueError("loop_gain must be in (0, 1)")
    x = buf.samples
    out = np.empty_like(x)
    gain = 1.0
    limit = len(x) if freeze_after is None else min(freeze_after, len(x))
    for n in range(limit):
        y = gain * x[n]
        out[n] = y
        err = (target_power - (y.real * y.real + y.imag * y.imag)) / target_power
        gain = min(max(gain * (1.0 + loop_gain * err), 1e-6), 1e6)
    if limit < len(x):
        out[limit:] = gain * x[limit:]
    return ComplexBuffer(out, buf.sample_period)
