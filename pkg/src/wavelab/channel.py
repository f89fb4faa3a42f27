"""Sparse time-varying multipath MISO channel in discrete-time baseband.

The channel is a sum of L discrete paths, each with a complex gain, a
propagation delay, a Doppler shift and an angle of departure seen from a
uniform linear transmit array.  Delays are applied as integer sample shifts
plus a windowed-sinc interpolation filter for the fractional residue.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Fractional residues below this (in samples) collapse to a pure integer shift.
FRACTIONAL_TOL = 1e-9

# Default half-length of the windowed-sinc fractional delay filter.
DEFAULT_HALF_LENGTH = 32


def round_half_up(x: float) -> int:
    """Round to nearest integer, ties away from zero toward +inf."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ArrayConfig:
    """Uniform linear transmit array, element spacing in carrier wavelengths."""

    num_tx_antennas: int
    element_spacing: float = 0.5

    def __post_init__(self):
        if self.num_tx_antennas < 1:
            raise ValueError("num_tx_antennas must be >= 1")
        if self.element_spacing <= 0:
            raise ValueError("element_spacing must be > 0")


@dataclass(frozen=True)
class PathParams:
    """One propagation path: complex gain, delay (s), Doppler (Hz), AoD."""

    gain: complex
    delay_s: float
    doppler_hz: float
    aod: float

    def __post_init__(self):
        if abs(self.gain) == 0:
            raise ValueError("path gain must be nonzero")
        if self.delay_s < 0:
            raise ValueError("path delay must be >= 0")
        if not -1.0 <= self.aod < 1.0:
            raise ValueError("aod must lie in [-1, 1)")


@dataclass(frozen=True)
class Frame:
    """Block of complex baseband samples, one row per transmit antenna."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        # copy so freezing the frame never flips flags on a caller's array
        samples = np.array(self.samples, dtype=np.complex128, ndmin=2)
        if samples.ndim != 2 or samples.shape[1] < 1:
            raise ValueError("samples must be a non-empty (rows x N) matrix")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be > 0")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

    @property
    def num_antennas(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    def row(self, i: int = 0) -> np.ndarray:
        return self.samples[i]

    def power(self) -> float:
        """Mean per-sample power summed over antennas."""
        return float(np.sum(np.abs(self.samples) ** 2) / self.num_samples)


@dataclass(frozen=True)
class MultipathChannel:
    """L discrete paths plus array geometry and sample rate."""

    array: ArrayConfig
    paths: tuple
    sample_rate: float

    def __post_init__(self):
        if len(self.paths) < 1:
            raise ValueError("channel needs at least one path")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be > 0")
        object.__setattr__(self, "paths", tuple(self.paths))

    @property
    def num_paths(self) -> int:
        return len(self.paths)

    def delay_spread(self) -> float:
        delays = [p.delay_s for p in self.paths]
        return max(delays) - min(delays)

    def doppler_spread(self) -> float:
        dopplers = [p.doppler_hz for p in self.paths]
        return max(dopplers) - min(dopplers)

    def delays_in_samples(self) -> np.ndarray:
        return np.array([p.delay_s * self.sample_rate for p in self.paths])

    def integer_delays(self) -> np.ndarray:
        """Nearest-sample delay n_l = round(tau_l * B) per path."""
        return np.array([round_half_up(d) for d in self.delays_in_samples()])

    def fractional_residues(self) -> np.ndarray:
        """Residue tau_l * B - n_l in [-0.5, 0.5) per path."""
        return self.delays_in_samples() - self.integer_delays()

    def max_integer_delay(self) -> int:
        return int(self.integer_delays().max())


def steering_vector(aod: float, array: ArrayConfig) -> np.ndarray:
    """Array response for a normalized spatial frequency in [-1, 1).

    Element m is exp(j*pi*m*(2*spacing)*aod); element 0 is always 1.
    """
    if not -1.0 <= aod < 1.0:
        raise ValueError(f"aod {aod} outside [-1, 1)")
    m = np.arange(array.num_tx_antennas)
    return np.exp(1j * np.pi * m * (2.0 * array.element_spacing) * aod)


def build_channel(array: ArrayConfig, paths, sample_rate: float) -> MultipathChannel:
    """Assemble a channel from explicit per-path parameters."""
    if len(paths) == 0:
        raise ValueError("path list must be non-empty")
    return MultipathChannel(array=array, paths=tuple(paths), sample_rate=sample_rate)


def sample_separated_aods(rng, num_paths: int, array: ArrayConfig,
                          max_tries: int = 1000) -> np.ndarray:
    """Draw AoDs uniform on [-1, 1) with pairwise separation >= one beamwidth.

    The separation floor is 2/M_t.  Raises after max_tries failed draws.
    """
    min_sep = 2.0 / array.num_tx_antennas
    for _ in range(max_tries):
        aods = rng.uniform(-1.0, 1.0, size=num_paths)
        diffs = np.abs(aods[:, None] - aods[None, :])
        np.fill_diagonal(diffs, np.inf)
        if diffs.min() >= min_sep:
            return aods
    raise ValueError(
        f"could not draw {num_paths} AoDs separated by {min_sep:.4g} after "
        f"{max_tries} tries; reduce the path count or use a larger array"
    )


def sample_random_channel(array: ArrayConfig, num_paths: int, delay_range,
                          doppler_range, rng_seed,
                          sample_rate: float = 1.0) -> MultipathChannel:
    """Random scenario: uniform delays/Dopplers, separated AoDs, unit-energy gains.

    Gains are i.i.d. circular Gaussian normalized so sum |gain|^2 = 1.
    Deterministic for a fixed seed.
    """
    if num_paths < 1:
        raise ValueError("num_paths must be >= 1")
    lo_d, hi_d = delay_range
    lo_f, hi_f = doppler_range
    if hi_d < lo_d or hi_f < lo_f:
        raise ValueError("ranges must be (low, high) with low <= high")
    rng = np.random.default_rng(rng_seed)
    aods = sample_separated_aods(rng, num_paths, array)
    delays = rng.uniform(lo_d, hi_d, size=num_paths) if hi_d > lo_d else np.full(num_paths, lo_d)
    dopplers = rng.uniform(lo_f, hi_f, size=num_paths) if hi_f > lo_f else np.full(num_paths, lo_f)
    gains = (rng.standard_normal(num_paths) + 1j * rng.standard_normal(num_paths)) / np.sqrt(2.0)
    gains = gains / np.linalg.norm(gains)
    paths = [PathParams(gain=g, delay_s=d, doppler_hz=f, aod=a)
             for g, d, f, a in zip(gains, delays, dopplers, aods)]
    return build_channel(array, paths, sample_rate=sample_rate)


def fractional_delay_taps(fractional_delay: float, half_length: int = DEFAULT_HALF_LENGTH) -> np.ndarray:
    """Windowed-sinc FIR approximating a delay of d in [0, 1) samples.

    Taps cover k in [-half_length, half_length], Hann-windowed over the
    support and normalized to unit sum.  Tap j of the returned array
    corresponds to lag k = j - half_length.
    """
    if not 0.0 <= fractional_delay < 1.0:
        raise ValueError("fractional_delay must lie in [0, 1)")
    if half_length < 1:
        raise ValueError("half_length must be >= 1")
    k = np.arange(-half_length, half_length + 1)
    t = k - fractional_delay
    window = 0.5 * (1.0 + np.cos(np.pi * t / (half_length + 1)))
    taps = np.sinc(t) * window
    return taps / taps.sum()


def _delayed_segment(signal: np.ndarray, delay_samples: float, half_length: int,
                     fractional_tol: float):
    """Return (start_index, segment) realizing a delay of the given samples.

    Integer delays are exact shifts; fractional residues go through the
    windowed-sinc filter, whose transient extends half_length samples on
    each side of the nominal arrival.
    """
    nearest = round_half_up(delay_samples)
    residue = delay_samples - nearest
    if abs(residue) <= fractional_tol:
        return nearest, signal
    base = int(math.floor(delay_samples))
    frac = delay_samples - base
    taps = fractional_delay_taps(frac, half_length)
    return base - half_length, np.convolve(signal, taps)


def apply_channel(channel: MultipathChannel, tx: Frame,
                  half_length: int = DEFAULT_HALF_LENGTH,
                  fractional_tol: float = FRACTIONAL_TOL) -> Frame:
    """Propagate an M_t-row frame through the channel, returning one row.

    y[n] = sum_l gain_l * exp(j*2*pi*doppler_l*n/B) * a(aod_l)^H x[n - delay_l]
    with the Doppler ramp indexed by the receiver clock.  The output is
    longer than the input by the largest integer delay plus any
    interpolation transient; acausal leakage of the interpolator for
    near-zero delays is truncated.
    """
    if tx.num_antennas != channel.array.num_tx_antennas:
        raise ValueError(
            f"tx frame has {tx.num_antennas} rows, channel expects "
            f"{channel.array.num_tx_antennas}")
    if tx.sample_rate != channel.sample_rate:
        raise ValueError("tx frame and channel sample rates differ")

    rate = channel.sample_rate
    pieces = []
    total = tx.num_samples
    for path in channel.paths:
        a = steering_vector(path.aod, channel.array)
        scalar = a.conj() @ tx.samples
        start, segment = _delayed_segment(
            scalar, path.delay_s * rate, half_length, fractional_tol)
        if start < 0:
            segment = segment[-start:]
            start = 0
        pieces.append((path, start, segment))
        total = max(total, start + len(segment))

    y = np.zeros(total, dtype=np.complex128)
    for path, start, segment in pieces:
        n = np.arange(start, start + len(segment))
        ramp = np.exp(2j * np.pi * path.doppler_hz * n / rate)
        y[start:start + len(segment)] += path.gain * ramp * segment
    return Frame(samples=y[np.newaxis, :], sample_rate=rate)


def apply_scalar_paths(signal: np.ndarray, paths, sample_rate: float,
                       half_length: int = DEFAULT_HALF_LENGTH,
                       fractional_tol: float = FRACTIONAL_TOL) -> np.ndarray:
    """Scalar counterpart of apply_channel for (gain, delay_samples, doppler_hz) taps."""
    signal = np.asarray(signal, dtype=np.complex128)
    pieces = []
    total = len(signal)
    for gain, delay_samples, doppler_hz in paths:
        start, segment = _delayed_segment(signal, float(delay_samples),
                                          half_length, fractional_tol)
        if start < 0:
            segment = segment[-start:]
            start = 0
        pieces.append((gain, doppler_hz, start, segment))
        total = max(total, start + len(segment))
    y = np.zeros(total, dtype=np.complex128)
    for gain, doppler_hz, start, segment in pieces:
        n = np.arange(start, start + len(segment))
        y[start:start + len(segment)] += gain * np.exp(
            2j * np.pi * doppler_hz * n / sample_rate) * segment
    return y


@dataclass(frozen=True)
class ScalarChannel:
    """Post-beamforming scalar channel: (gain, delay_samples, doppler_hz) taps."""

    taps: tuple
    sample_rate: float
    half_length: int = DEFAULT_HALF_LENGTH

    def __call__(self, signal: np.ndarray) -> np.ndarray:
        return apply_scalar_paths(signal, self.taps, self.sample_rate,
                                  half_length=self.half_length)


def add_awgn(frame: Frame, snr_db: float, rng_seed) -> Frame:
    """Add circular complex Gaussian noise at the given SNR.

    The noise variance is set so mean-signal-power / variance equals
    10^(snr_db/10), with the mean power measured over the frame itself.
    snr_db = +inf is the no-noise sentinel.  Deterministic under the seed.
    """
    if frame.num_samples < 1:
        raise ValueError("frame must be non-empty")
    if math.isinf(snr_db) and snr_db > 0:
        return frame
    power = float(np.mean(np.abs(frame.samples) ** 2))
    variance = power / (10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(rng_seed)
    shape = frame.samples.shape
    noise = np.sqrt(variance / 2.0) * (rng.standard_normal(shape)
                                       + 1j * rng.standard_normal(shape))
    return Frame(samples=frame.samples + noise, sample_rate=frame.sample_rate)


def channel_to_json(channel: MultipathChannel) -> dict:
    """Serialize a channel scenario to the interchange dictionary layout."""
    return {
        "array": {
            "mt": channel.array.num_tx_antennas,
            "spacing": channel.array.element_spacing,
        },
        "sample_rate_hz": channel.sample_rate,
        "paths": [
            {
                "gain_re": float(np.real(p.gain)),
                "gain_im": float(np.imag(p.gain)),
                "delay_s": p.delay_s,
                "doppler_hz": p.doppler_hz,
                "aod": p.aod,
            }
            for p in channel.paths
        ],
    }


def channel_from_json(doc: dict) -> MultipathChannel:
    """Inverse of channel_to_json."""
    array = ArrayConfig(num_tx_antennas=int(doc["array"]["mt"]),
                        element_spacing=float(doc["array"].get("spacing", 0.5)))
    paths = [
        PathParams(gain=complex(p["gain_re"], p["gain_im"]),
                   delay_s=float(p["delay_s"]),
                   doppler_hz=float(p["doppler_hz"]),
                   aod=float(p["aod"]))
        for p in doc["paths"]
    ]
    return build_channel(array, paths, sample_rate=float(doc["sample_rate_hz"]))
