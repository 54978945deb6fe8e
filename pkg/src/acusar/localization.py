"""Single-observation direction finding from a multi-channel window.

Per ring mic, GCC-PHAT gives the arrival-time difference against the center
mic; stacking the far-field projections (r_m - r_0)^T u ~ -v_s * TDoA_m gives
an overdetermined linear system for the horizontal direction components. The
ring is coplanar, so the vertical component is recovered from the unit-norm
constraint with the source-below-UAV sign.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, RankDeficient
from .geometry import PosedArray
from .scene import MultiChannelClip, Waveform

# Relative planar residual above which TDoAs are flagged inconsistent.
DEFAULT_RESIDUAL_BOUND = 0.5

# Correlation oversampling: the inverse transform is zero-padded by this
# factor so the parabolic refinement works on a fine lag grid (coarse-grid
# parabolas on a bandlimited peak bias sub-sample delays by ~0.05 samples).
_INTERP = 8


@dataclass(frozen=True)
class TdoaSet:
    """Per-ring-mic delays relative to mic 0, with PHAT peak magnitudes."""

    tdoas: np.ndarray = field(repr=False)  # (M-1,) seconds
    peaks: np.ndarray = field(repr=False)  # (M-1,) unitless

    @property
    def count(self) -> int:
        return len(self.tdoas)


@dataclass(frozen=True)
class DoAEstimate:
    """Unit direction from the UAV toward the source.

    direction[2] <= 0 by convention (source at or below the array plane).
    residual is the relative planar least-squares misfit; residual_ok is
    False when it exceeds the configured bound (reported, not fatal).
    """

    direction: np.ndarray = field(repr=False)
    residual: float
    rank_ok: bool = True
    residual_ok: bool = True


def gcc_phat(x: Waveform, ref: Waveform, max_lag: float):
    """PHAT-weighted cross-correlation delay of x relative to ref.

    Positive delay means x arrives later than ref. The integer-lag peak is
    refined with 3-point parabolic interpolation.

    Returns (tdoa_seconds, peak_magnitude).

    Raises:
        DegenerateInput: either signal is all zero.
        ValueError: length/max_lag preconditions violated.
    """
    a, b = x.samples, ref.samples
    if len(a) != len(b):
        raise ValueError("signals must have equal length")
    if len(a) < 256:
        raise ValueError("signals must have at least 256 samples")
    fs = x.fs
    max_shift = int(np.floor(max_lag * fs))
    if max_shift >= len(a) // 2:
        raise ValueError("max_lag must be below half the signal length")
    if not np.any(a) or not np.any(b):
        raise DegenerateInput("all-zero signal")
    nfft = 1 << int(np.ceil(np.log2(2 * len(a))))
    spec = np.fft.rfft(a, nfft) * np.conj(np.fft.rfft(b, nfft))
    mag = np.abs(spec)
    whitened = np.where(mag < 1e-12, 0.0, spec / np.where(mag < 1e-12, 1.0, mag))
    cc = np.fft.irfft(whitened, nfft * _INTERP) * _INTERP
    fine_fs = fs * _INTERP
    max_fine = int(np.floor(max_lag * fine_fs))
    window = np.concatenate([cc[-max_fine:], cc[:max_fine + 1]])
    k = int(np.argmax(window))
    shift = k - max_fine
    # Parabolic refinement, skipped at the window edges.
    if 0 < k < len(window) - 1:
        y0, y1, y2 = window[k - 1], window[k], window[k + 1]
        denom = y0 - 2.0 * y1 + y2
        delta = 0.5 * (y0 - y2) / denom if abs(denom) > 1e-15 else 0.0
        delta = float(np.clip(delta, -0.5, 0.5))
        peak = y1 - 0.25 * (y0 - y2) * delta
    else:
        delta = 0.0
        peak = window[k]
    return (shift + delta) / fine_fs, float(peak)


def max_lag_for(posed: PosedArray, v_s: float) -> float:
    """Physical inter-mic lag bound with a 1.5x guard."""
    return 1.5 * posed.array.radius / v_s


def estimate_tdoas(clip: MultiChannelClip, max_lag: float) -> TdoaSet:
    """GCC-PHAT of every ring channel against channel 0."""
    ref = clip.channel(0)
    tdoas, peaks = [], []
    for m in range(1, clip.n_channels):
        t, p = gcc_phat(clip.channel(m), ref, max_lag)
        tdoas.append(t)
        peaks.append(p)
    return TdoaSet(tdoas=np.array(tdoas), peaks=np.array(peaks))


def solve_doa(posed: PosedArray, tdoas: TdoaSet, v_s: float,
              residual_bound: float = DEFAULT_RESIDUAL_BOUND) -> DoAEstimate:
    """Least-squares direction of arrival from ring TDoAs.

    Solves the planar system G g = V (G the ring offsets, V the delay
    distances); the raw solution points away from the source under the
    far-field model, so it is negated. The vertical component comes from
    the unit-norm constraint, pointing below the array.

    Raises:
        RankDeficient: ring offsets do not span the horizontal plane.
    """
    offsets = posed.array.ring_offsets
    if offsets.shape[0] != tdoas.count:
        raise ValueError("TDoA count does not match ring size")
    g_planar = offsets[:, :2]
    v = tdoas.tdoas * v_s
    svals = np.linalg.svd(g_planar, compute_uv=False)
    if svals[0] == 0.0 or svals[-1] <= 1e-10 * svals[0]:
        raise RankDeficient("ring offsets are collinear")
    sol, _res, _rank, _sv = np.linalg.lstsq(g_planar, v, rcond=1e-10)
    residual = float(np.linalg.norm(g_planar @ sol - v) / max(np.linalg.norm(v), 1e-12))
    planar = -sol
    norm = np.linalg.norm(planar)
    if norm > 1.0:
        planar = planar / norm
        norm = 1.0
    uz = -np.sqrt(max(0.0, 1.0 - norm * norm))
    direction = np.array([planar[0], planar[1], uz])
    direction /= np.linalg.norm(direction)
    return DoAEstimate(direction=direction, residual=residual,
                       rank_ok=True, residual_ok=residual <= residual_bound)
