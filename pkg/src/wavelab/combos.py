"""Combined pipelines: DDAM-OFDM and DDAM-OTFS.

DDAM-OFDM weights each subcarrier by the conjugate phase of the residual
equivalent channel, OFDM-modulates with a reduced cyclic prefix sized to
the residual delay window, and feeds the scalar stream through the DDAM
time-domain chain.  DDAM-OTFS multiplexes symbols on the delay-Doppler
grid and equalizes with the brute-force effective matrix of the
compensated end-to-end channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import DEFAULT_HALF_LENGTH, Frame, MultipathChannel, apply_channel
from .ddam import (
    AlignmentWindow,
    BeamformerSet,
    CompensationPlan,
    DdamFrameConfig,
    EquivalentChannel,
    PathStateInfo,
    build_compensation_plan,
    ddam_modulate,
)
from .ofdm import OfdmConfig, ofdm_demodulate, ofdm_equalize_one_tap, ofdm_modulate
from .otfs import OtfsConfig, dd_effective_matrix, mmse_equalize_dd
from .otfs import otfs_modulate_isfft, otfs_modulate_zak
from .otfs import otfs_demodulate_isfft, otfs_demodulate_zak


@dataclass(frozen=True)
class DdamOfdmLink:
    """Shared TX/RX state of one DDAM-OFDM configuration."""

    psi: PathStateInfo
    beams: BeamformerSet
    ofdm_cfg: OfdmConfig
    plan: CompensationPlan
    align_start: int          # first covered tap of the residual window
    subcarrier_weights: np.ndarray
    subcarrier_response: np.ndarray

    @property
    def symbol_stride(self) -> int:
        return self.ofdm_cfg.num_subcarriers + self.ofdm_cfg.cp_len


def ddam_ofdm_link(psi: PathStateInfo, beams: BeamformerSet, ofdm_cfg: OfdmConfig,
                   equivalent: EquivalentChannel, window: AlignmentWindow = None,
                   mode: str = "path_based",
                   half_length: int = DEFAULT_HALF_LENGTH) -> DdamOfdmLink:
    """Derive the per-subcarrier weights and alignment for a DDAM-OFDM run.

    The cyclic prefix must cover the declared residual delay window.  The
    equivalent taps inside [n_max - w_tau, n_max + cp - w_tau] define the
    per-subcarrier response; the transmit weighting is its conjugate phase.
    """
    window = window or AlignmentWindow()
    if ofdm_cfg.cp_len < window.w_tau_samples:
        raise ValueError(
            f"cp_len {ofdm_cfg.cp_len} shorter than the residual delay window "
            f"{window.w_tau_samples}")
    plan = build_compensation_plan(psi, mode=mode, window=window,
                                   half_length=half_length)
    align_start = plan.n_max - window.w_tau_samples
    k = ofdm_cfg.num_subcarriers
    h_rel = np.zeros(k, dtype=np.complex128)
    covered = equivalent.taps[align_start:align_start + ofdm_cfg.cp_len + 1]
    h_rel[:len(covered)] = covered[:k]
    response = np.fft.fft(h_rel)
    magnitude = np.abs(response)
    weights = np.where(magnitude > 0, np.conj(response) / np.maximum(magnitude, 1e-300), 1.0)
    return DdamOfdmLink(psi=psi, beams=beams, ofdm_cfg=ofdm_cfg, plan=plan,
                        align_start=align_start, subcarrier_weights=weights,
                        subcarrier_response=response)


def ddam_ofdm_transmit(freq_symbols: np.ndarray, psi: PathStateInfo,
                       beams: BeamformerSet, ofdm_cfg: OfdmConfig,
                       equivalent: EquivalentChannel,
                       window: AlignmentWindow = None, mode: str = "path_based",
                       half_length: int = DEFAULT_HALF_LENGTH) -> Frame:
    """Two-stage transmit: subcarrier phase alignment, OFDM, DDAM chain."""
    link = ddam_ofdm_link(psi, beams, ofdm_cfg, equivalent, window=window,
                          mode=mode, half_length=half_length)
    return ddam_ofdm_transmit_with_link(freq_symbols, link)


def ddam_ofdm_transmit_with_link(freq_symbols: np.ndarray, link: DdamOfdmLink) -> Frame:
    grids = np.atleast_2d(np.asarray(freq_symbols, dtype=np.complex128))
    if grids.shape[1] != link.ofdm_cfg.num_subcarriers:
        raise ValueError(
            f"each OFDM symbol needs {link.ofdm_cfg.num_subcarriers} subcarriers")
    stream = np.concatenate([
        ofdm_modulate(link.subcarrier_weights * row, link.ofdm_cfg).row()
        for row in grids])
    frame_cfg = DdamFrameConfig(block_len=len(stream))
    return ddam_modulate(stream, link.psi, link.beams, frame_cfg, plan=link.plan)


def ddam_ofdm_receive(rx, link: DdamOfdmLink, num_symbols: int,
                      pilot_symbol: np.ndarray = None) -> np.ndarray:
    """Align at the residual window, demodulate and one-tap equalize.

    The transmit power normalization leaves an unknown scalar on the link;
    when the first OFDM symbol is a known pilot, a least-squares scalar fit
    on it removes that factor from every returned symbol.
    """
    samples = rx.row() if isinstance(rx, Frame) else np.asarray(rx, dtype=np.complex128)
    stream = samples[link.align_start:]
    stride = link.symbol_stride
    need = num_symbols * stride
    if len(stream) < need:
        stream = np.concatenate([stream, np.zeros(need - len(stream), dtype=complex)])
    out = np.empty((num_symbols, link.ofdm_cfg.num_subcarriers), dtype=np.complex128)
    effective = link.subcarrier_response * link.subcarrier_weights
    for i in range(num_symbols):
        bins = ofdm_demodulate(stream[i * stride:(i + 1) * stride], link.ofdm_cfg)
        out[i], _ = ofdm_equalize_one_tap(bins, effective)
    if pilot_symbol is not None:
        pilot = np.asarray(pilot_symbol, dtype=np.complex128)
        scale = (pilot.conj() @ out[0]) / (pilot.conj() @ pilot)
        out /= scale
    return out


def ddam_chain_callable(channel: MultipathChannel, psi: PathStateInfo,
                        beams: BeamformerSet, window: AlignmentWindow = None,
                        mode: str = "path_based",
                        half_length: int = DEFAULT_HALF_LENGTH,
                        plan: CompensationPlan = None):
    """Scalar end-to-end map of the unnormalized DDAM chain over the channel."""
    from .ddam import _synthesize

    if plan is None:
        plan = build_compensation_plan(psi, mode=mode, window=window,
                                       half_length=half_length)

    def chain(signal: np.ndarray) -> np.ndarray:
        signal = np.asarray(signal, dtype=np.complex128)
        x, _ = _synthesize(signal, plan, beams, psi.sample_rate,
                           len(signal) + plan.max_kappa, normalize=False)
        return apply_channel(channel, Frame(x, psi.sample_rate),
                             half_length=half_length).row()

    return chain


def ddam_otfs_transmit(grid: np.ndarray, psi: PathStateInfo, beams: BeamformerSet,
                       otfs_cfg: OtfsConfig, window: AlignmentWindow = None,
                       mode: str = "path_based", variant: str = "zak",
                       half_length: int = DEFAULT_HALF_LENGTH) -> Frame:
    """OTFS-modulate the DD grid, then apply the DDAM time-domain chain."""
    modulate = otfs_modulate_zak if variant == "zak" else otfs_modulate_isfft
    stream = modulate(grid, otfs_cfg).row()
    plan = build_compensation_plan(psi, mode=mode, window=window,
                                   half_length=half_length)
    frame_cfg = DdamFrameConfig(block_len=len(stream))
    return ddam_modulate(stream, psi, beams, frame_cfg, plan=plan)


def ddam_otfs_effective_matrix(channel: MultipathChannel, psi: PathStateInfo,
                               beams: BeamformerSet, otfs_cfg: OtfsConfig,
                               window: AlignmentWindow = None,
                               mode: str = "path_based", variant: str = "zak",
                               half_length: int = DEFAULT_HALF_LENGTH) -> np.ndarray:
    """DD effective matrix of the compensated end-to-end channel."""
    chain = ddam_chain_callable(channel, psi, beams, window=window, mode=mode,
                                half_length=half_length)
    return dd_effective_matrix(chain, otfs_cfg, variant=variant)


def ddam_otfs_receive(rx, effective_matrix: np.ndarray, otfs_cfg: OtfsConfig,
                      noise_var: float, variant: str = "zak") -> np.ndarray:
    """Demodulate to the DD grid and MMSE-equalize with the effective matrix."""
    samples = rx.row() if isinstance(rx, Frame) else np.asarray(rx, dtype=np.complex128)
    need = otfs_cfg.frame_len + otfs_cfg.cp_len
    if len(samples) < need:
        samples = np.concatenate([samples, np.zeros(need - len(samples), dtype=complex)])
    demodulate = otfs_demodulate_zak if variant == "zak" else otfs_demodulate_isfft
    grid = demodulate(samples, otfs_cfg)
    return mmse_equalize_dd(grid, effective_matrix, noise_var)


def dominant_entries_per_column(matrix: np.ndarray, threshold_db: float = -30.0) -> np.ndarray:
    """Equalization cost proxy: entries per column above the power threshold."""
    mags = np.abs(matrix) ** 2
    floor = 10.0 ** (threshold_db / 10.0) * mags.max(axis=0, keepdims=True)
    return (mags >= floor).sum(axis=0)
