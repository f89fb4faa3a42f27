"""OFDM modem and the delay/Doppler feasibility-region analysis.

The modem uses unitary DFTs throughout.  The feasibility operations relate
the cyclic-prefix overhead ratio and subcarrier-count thresholds to the
largest channel delay and Doppler spreads an OFDM parameterization can
tolerate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import Frame
from .metrics import fft_multiplies


@dataclass(frozen=True)
class OfdmConfig:
    """K subcarriers, cyclic prefix length in samples, sample rate in Hz."""

    num_subcarriers: int
    cp_len: int
    sample_rate: float

    def __post_init__(self):
        k = self.num_subcarriers
        if k < 1 or (k & (k - 1)) != 0:
            raise ValueError("num_subcarriers must be a positive power of two")
        if self.cp_len < 0:
            raise ValueError("cp_len must be >= 0")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be > 0")

    @property
    def subcarrier_spacing(self) -> float:
        return self.sample_rate / self.num_subcarriers

    @property
    def symbol_duration(self) -> float:
        """Useful symbol time, excluding the cyclic prefix."""
        return self.num_subcarriers / self.sample_rate

    @property
    def cp_duration(self) -> float:
        return self.cp_len / self.sample_rate

    @property
    def cp_ratio(self) -> float:
        """Overhead ratio T_s / (T_s + T_cp)."""
        return self.symbol_duration / (self.symbol_duration + self.cp_duration)


@dataclass(frozen=True)
class FeasibilityThresholds:
    """Performance thresholds: CP ratio, subcarrier count, bandwidth, Doppler margin."""

    rho_th: float
    k_th: int
    bandwidth: float
    xi: float = 10.0

    def __post_init__(self):
        if not 0.0 < self.rho_th < 1.0:
            raise ValueError("rho_th must lie in (0, 1)")
        if self.k_th < 1:
            raise ValueError("k_th must be a positive integer")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be > 0")
        if self.xi <= 0:
            raise ValueError("xi must be > 0")


@dataclass(frozen=True)
class FeasibleRegion:
    """Axis-aligned rectangle [0, tau_max] x [0, nu_max] of admissible spreads."""

    tau_max: float
    nu_max: float

    def contains(self, tau_d: float, nu_d: float) -> bool:
        return 0.0 <= tau_d <= self.tau_max and 0.0 <= nu_d <= self.nu_max


def feasible_region(th: FeasibilityThresholds) -> FeasibleRegion:
    """Largest (tau_d, nu_d) rectangle meeting the thresholds.

    tau_max = ((1 - rho_th) / rho_th) * (k_th / B) and nu_max = B / (xi * k_th),
    so tau_max * nu_max = (1 - rho_th) / (xi * rho_th) independent of B and k_th.
    """
    tau_max = (1.0 - th.rho_th) / th.rho_th * (th.k_th / th.bandwidth)
    nu_max = th.bandwidth / (th.xi * th.k_th)
    return FeasibleRegion(tau_max=tau_max, nu_max=nu_max)


def check_parameters(cfg: OfdmConfig, tau_d: float, nu_d: float, xi: float = 10.0):
    """List the orthogonality/flatness constraints a parameterization violates.

    Checks T_cp >= tau_d, subcarrier spacing >= xi * nu_d, and spacing <=
    the coherence bandwidth 1/tau_d (vacuous for tau_d = 0).  Returns the
    empty list when the configuration is feasible.
    """
    if tau_d < 0 or nu_d < 0:
        raise ValueError("spreads must be >= 0")
    violations = []
    df = cfg.subcarrier_spacing
    if cfg.cp_duration < tau_d:
        violations.append(
            f"cp duration {cfg.cp_duration:.3e} s < delay spread {tau_d:.3e} s")
    if df < xi * nu_d:
        violations.append(
            f"subcarrier spacing {df:.6g} Hz < xi*doppler spread {xi * nu_d:.6g} Hz")
    if tau_d > 0 and df > 1.0 / tau_d:
        violations.append(
            f"subcarrier spacing {df:.6g} Hz > coherence bandwidth {1.0 / tau_d:.6g} Hz")
    return violations


def ofdm_modulate(freq_symbols: np.ndarray, cfg: OfdmConfig, counter=None) -> Frame:
    """Unitary inverse DFT of one symbol vector plus cyclic prefix."""
    freq_symbols = np.asarray(freq_symbols, dtype=np.complex128)
    if freq_symbols.shape != (cfg.num_subcarriers,):
        raise ValueError(
            f"expected {cfg.num_subcarriers} frequency symbols, got {freq_symbols.shape}")
    if counter is not None:
        counter.add(fft_multiplies(cfg.num_subcarriers))
    time = np.fft.ifft(freq_symbols, norm="ortho")
    if cfg.cp_len:
        # modular indexing keeps the extension cyclic even for cp_len > K
        prefix = time[np.arange(-cfg.cp_len, 0) % cfg.num_subcarriers]
        time = np.concatenate([prefix, time])
    return Frame(samples=time[np.newaxis, :], sample_rate=cfg.sample_rate)


def ofdm_demodulate(rx, cfg: OfdmConfig, counter=None) -> np.ndarray:
    """Drop the cyclic prefix and apply the unitary DFT to one symbol window."""
    samples = rx.row() if isinstance(rx, Frame) else np.asarray(rx, dtype=np.complex128)
    need = cfg.num_subcarriers + cfg.cp_len
    if len(samples) < need:
        raise ValueError(f"need at least {need} samples, got {len(samples)}")
    if counter is not None:
        counter.add(fft_multiplies(cfg.num_subcarriers))
    window = samples[cfg.cp_len:need]
    return np.fft.fft(window, norm="ortho")


# One-tap responses below this magnitude are reported as erasures.
ERASURE_THRESHOLD = 1e-15


def ofdm_equalize_one_tap(freq_symbols: np.ndarray, channel_freq_response: np.ndarray):
    """Element-wise division by the per-subcarrier response.

    Returns (equalized, erasure_mask); bins whose response magnitude falls
    below the erasure threshold are zeroed and flagged instead of divided.
    """
    x = np.asarray(freq_symbols, dtype=np.complex128)
    h = np.asarray(channel_freq_response, dtype=np.complex128)
    if x.shape != h.shape:
        raise ValueError("symbol and response vectors must have equal length")
    erased = np.abs(h) < ERASURE_THRESHOLD
    out = np.zeros_like(x)
    ok = ~erased
    out[ok] = x[ok] / h[ok]
    return out, erased
