"""PAPR, overhead-based spectral efficiency, BER and the complexity model.

The complexity model evaluates the per-information-symbol multiplication
counts of each waveform variant with unit constants.  An OpCounter can be
threaded through the actual modem code paths to report measured multiply
counts beside the model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class OpCounter:
    """Accumulates complex-multiply counts along instrumented code paths."""

    def __init__(self):
        self.total = 0.0

    def add(self, n: float):
        self.total += float(n)


def fft_multiplies(n: int) -> float:
    """Complex multiplies of a radix-2 FFT of length n."""
    if n <= 1:
        return 0.0
    return 0.5 * n * math.log2(n)


def qfunc(x: float) -> float:
    """Gaussian tail probability Q(x)."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def papr_db(samples: np.ndarray, oversample: int = 1) -> float:
    """Peak-to-average power ratio in dB.

    Accepts one row or a (rows x N) matrix; with several rows (antennas)
    the maximum per-row PAPR is returned.  Guard or CP samples are the
    caller's responsibility to exclude.  oversample > 1 interpolates each
    row by zero-padding its spectrum before peak picking.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=np.complex128))
    if x.shape[1] == 0:
        raise ValueError("empty signal")
    mean_power = np.mean(np.abs(x) ** 2, axis=1)
    if np.any(mean_power == 0):
        raise ValueError("zero-power signal")
    if oversample > 1:
        x = _interpolate_rows(x, oversample)
    peak_power = np.max(np.abs(x) ** 2, axis=1)
    return float(np.max(10.0 * np.log10(peak_power / mean_power)))


def _interpolate_rows(x: np.ndarray, factor: int) -> np.ndarray:
    """Fourier interpolation to at least factor x the input rate.

    The padded length is rounded up to a power of two, which changes only
    the (dense) sampling grid of the trigonometric interpolant, not its
    envelope, and keeps the inverse FFT fast for any input length.
    """
    rows, n = x.shape
    spectrum = np.fft.fft(x, axis=1)
    out_len = 1 << (factor * n - 1).bit_length()
    padded = np.zeros((rows, out_len), dtype=np.complex128)
    half = n // 2
    padded[:, :half] = spectrum[:, :half]
    padded[:, out_len - (n - half):] = spectrum[:, half:]
    return (out_len / n) * np.fft.ifft(padded, axis=1)


DEFAULT_CCDF_THRESHOLDS = np.arange(0.0, 14.0 + 0.25 / 2, 0.25)


@dataclass(frozen=True)
class PaprCcdf:
    """Empirical exceed probability of PAPR per dB threshold."""

    thresholds_db: np.ndarray
    exceed_probability: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.thresholds_db, dtype=float)
        p = np.asarray(self.exceed_probability, dtype=float)
        if t.shape != p.shape:
            raise ValueError("thresholds and probabilities must align")
        if np.any(np.diff(t) <= 0):
            raise ValueError("thresholds must be ascending")
        if np.any(np.diff(p) > 1e-15):
            raise ValueError("exceed probability must be non-increasing")
        object.__setattr__(self, "thresholds_db", t)
        object.__setattr__(self, "exceed_probability", p)

    def probability_at(self, threshold_db: float) -> float:
        idx = int(np.searchsorted(self.thresholds_db, threshold_db))
        return float(self.exceed_probability[min(idx, len(self.thresholds_db) - 1)])

    def papr_at_level(self, level: float) -> float:
        """Smallest threshold whose exceed probability drops to or below level."""
        below = np.nonzero(self.exceed_probability <= level)[0]
        if len(below) == 0:
            return float(self.thresholds_db[-1])
        return float(self.thresholds_db[below[0]])


def papr_ccdf(waveform_generator, num_trials: int, rng_seed,
              thresholds_db=None, oversample: int = 1,
              workers: int = 1) -> PaprCcdf:
    """Monte Carlo CCDF of PAPR for a seeded waveform generator.

    The generator is called once per trial with a child Generator and must
    return the samples to measure (guard/CP already excluded).  Trials may
    run on several threads; per-trial seeds keep the result independent of
    the worker count.
    """
    if num_trials < 1:
        raise ValueError("num_trials must be >= 1")
    thresholds = (DEFAULT_CCDF_THRESHOLDS if thresholds_db is None
                  else np.asarray(thresholds_db, dtype=float))
    root = (rng_seed if isinstance(rng_seed, np.random.SeedSequence)
            else np.random.SeedSequence(rng_seed))
    seeds = root.spawn(num_trials)
    values = np.empty(num_trials)

    def run_trial(i):
        values[i] = papr_db(waveform_generator(np.random.default_rng(seeds[i])),
                            oversample=oversample)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_trial, range(num_trials)))
    else:
        for i in range(num_trials):
            run_trial(i)
    exceed = np.array([(values > t).mean() for t in thresholds])
    return PaprCcdf(thresholds_db=thresholds, exceed_probability=exceed)


def se_overhead(waveform: str, **params) -> float:
    """Fraction of airtime carrying information for a waveform's framing.

    ofdm: K / (K + cp) per symbol; otfs: M*K / (M*K + cp) per frame;
    ddam: N / (N + 2 * n_max) per block.
    """
    if waveform == "ofdm":
        k, cp = params["num_subcarriers"], params["cp_len"]
        if k < 1 or cp < 0:
            raise ValueError("need num_subcarriers >= 1 and cp_len >= 0")
        return k / (k + cp)
    if waveform == "otfs":
        mk = params["num_doppler_bins"] * params["num_delay_bins"]
        cp = params["cp_len"]
        if mk < 1 or cp < 0:
            raise ValueError("need a non-empty grid and cp_len >= 0")
        return mk / (mk + cp)
    if waveform == "ddam":
        n, n_max = params["block_len"], params["n_max"]
        if n < 1 or n_max < 0:
            raise ValueError("need block_len >= 1 and n_max >= 0")
        return n / (n + 2 * n_max)
    raise ValueError(f"unknown waveform {waveform!r}")


def ber(tx_bits: np.ndarray, rx_bits: np.ndarray) -> float:
    """Bit error ratio between two equal-length streams."""
    tx = np.asarray(tx_bits).ravel()
    rx = np.asarray(rx_bits).ravel()
    if tx.shape != rx.shape:
        raise ValueError("bit streams must have equal length")
    if len(tx) == 0:
        raise ValueError("bit streams must be non-empty")
    return float(np.mean(tx != rx))


@dataclass(frozen=True)
class ComplexityParams:
    """Sizes entering the complexity model."""

    mt: int
    k: int
    m: int
    l: int
    n_s: int

    def __post_init__(self):
        for name in ("mt", "k", "m", "l", "n_s"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


COMPLEXITY_VARIANTS = (
    "ofdm", "otfs_isfft", "otfs_zak", "ddam_mrt", "ddam_zf", "ddam_mmse",
)


def complexity_model(variant: str, p: ComplexityParams):
    """Model multiplies per information symbol, (tx, rx), unit constants."""
    mt, k, m, l, n_s = p.mt, p.k, p.m, p.l, p.n_s
    if variant == "ofdm":
        return mt * math.log2(k) + mt, math.log2(k) + 1
    if variant == "otfs_isfft":
        return (mt * math.log2(k * m) + math.log2(k) + mt,
                math.log2(k) + math.log2(k * m) + 1)
    if variant == "otfs_zak":
        return mt * math.log2(m) + mt, math.log2(m) + 1
    if variant == "ddam_mrt":
        return mt * l, 1.0
    if variant == "ddam_zf":
        return mt * l ** 2 / n_s + mt * l, 1.0
    if variant == "ddam_mmse":
        return mt ** 3 * l ** 3 / n_s + mt * l, 1.0
    raise ValueError(f"unknown complexity variant {variant!r}")


def measured_complexity(variant: str, p: ComplexityParams, rng_seed=0):
    """Multiplies per information symbol measured on the real modem paths.

    Runs the transmitter and receiver chains on random data with an
    OpCounter attached and normalizes by the number of information
    symbols.  Beamformer construction is amortized over p.n_s.
    """
    from . import ddam as _ddam
    from . import link as _link
    from . import ofdm as _ofdm
    from . import otfs as _otfs
    from .channel import ArrayConfig, sample_random_channel

    rng = np.random.default_rng(rng_seed)
    mt, k, m, l, n_s = p.mt, p.k, p.m, p.l, p.n_s

    if variant == "ofdm":
        cfg = _ofdm.OfdmConfig(num_subcarriers=k, cp_len=0, sample_rate=1e6)
        x = (rng.standard_normal(k) + 1j * rng.standard_normal(k)) / np.sqrt(2)
        tx_ops = OpCounter()
        _link.ofdm_miso_modulate(x, np.ones((mt, k)) / np.sqrt(mt), cfg, counter=tx_ops)
        rx_ops = OpCounter()
        y = _ofdm.ofdm_demodulate(np.zeros(k, dtype=complex) + 1.0, cfg, counter=rx_ops)
        _ofdm.ofdm_equalize_one_tap(y, np.ones(k))
        rx_ops.add(k)  # one equalizer multiply per subcarrier
        return tx_ops.total / k, rx_ops.total / k

    if variant in ("otfs_isfft", "otfs_zak"):
        cfg = _otfs.OtfsConfig(num_doppler_bins=m, num_delay_bins=k,
                               cp_len=0, sample_rate=1e6)
        grid = (rng.standard_normal((k, m)) + 1j * rng.standard_normal((k, m)))
        tx_ops = OpCounter()
        rx_ops = OpCounter()
        if variant == "otfs_isfft":
            weights = np.ones((mt, k), dtype=complex) / np.sqrt(mt)
            frame = _link.otfs_miso_modulate_isfft(grid, weights, cfg, counter=tx_ops)
            _otfs.otfs_demodulate_isfft(frame.row(), cfg, counter=rx_ops)
        else:
            frame = _otfs.otfs_modulate_zak(grid, cfg, counter=tx_ops)
            tx_ops.add(mt * k * m)  # wideband beam weight per antenna per sample
            _otfs.otfs_demodulate_zak(frame, cfg, counter=rx_ops)
        rx_ops.add(k * m)  # symbol-wise detection divide
        return tx_ops.total / (k * m), rx_ops.total / (k * m)

    if variant in ("ddam_mrt", "ddam_zf", "ddam_mmse"):
        criterion = variant.split("_")[1]
        channel = sample_random_channel(ArrayConfig(mt), l, (0.0, 16e-6), (0.0, 0.0),
                                        rng_seed, sample_rate=1e6)
        psi = _ddam.psi_from_channel(channel)
        bf_ops = OpCounter()
        beams = _ddam.path_beamformers(psi, criterion, noise_var=0.01, counter=bf_ops)
        block = 2048  # long enough that per-symbol cost dominates measurement noise
        symbols = (rng.standard_normal(block) + 1j * rng.standard_normal(block)) / np.sqrt(2)
        tx_ops = OpCounter()
        frame_cfg = _ddam.DdamFrameConfig(block_len=block, guard_len=2 * psi.n_max)
        _ddam.ddam_modulate(symbols, psi, beams, frame_cfg, counter=tx_ops)
        tx_per_symbol = tx_ops.total / block + bf_ops.total / n_s
        return tx_per_symbol, 1.0  # symbol-wise detection: one divide per symbol

    raise ValueError(f"unknown complexity variant {variant!r}")
