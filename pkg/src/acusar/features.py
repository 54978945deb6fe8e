"""Log-Mel spectrogram front end and patch machinery for the anomaly scorer.

Pipeline: waveform -> STFT power -> triangular Mel filterbank (HTK scale,
area-normalized) -> log floor -> (optional) per-image standardization ->
non-overlapping square patches in frequency-major order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import IndivisibleDims, LengthMismatch, RatioOutOfRange
from .scene import Waveform


@dataclass(frozen=True)
class MelConfig:
    """Spectrogram front-end parameters.

    Frames are taken every `hop` samples on a signal zero-padded by
    fft_size/2 on each side, and the frame count is exactly
    clip_samples // hop, so the defaults give a 64 x 128 image from a
    1.024 s clip at 16 kHz.
    """

    fs: float = 16_000.0
    fft_size: int = 512
    hop: int = 128
    n_mels: int = 64
    fmin: float = 50.0
    fmax: float = 8_000.0
    log_floor: float = 1e-10
    clip_samples: int = 16_384

    def __post_init__(self):
        if self.clip_samples % self.hop != 0:
            raise ValueError("clip_samples must be a multiple of hop")
        if not 0 < self.fmin < self.fmax <= self.fs / 2:
            raise ValueError("need 0 < fmin < fmax <= fs/2")

    @property
    def n_frames(self) -> int:
        return self.clip_samples // self.hop

    @property
    def clip_seconds(self) -> float:
        return self.clip_samples / self.fs


@dataclass(frozen=True)
class MelImage:
    """Log-power Mel spectrogram, shape (n_mels, n_frames)."""

    values: np.ndarray = field(repr=False)
    config: MelConfig = field(repr=False)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class PatchGrid:
    """Non-overlapping P x P tiles of a Mel image, frequency-major order."""

    patches: np.ndarray = field(repr=False)  # (N, P, P)
    rows: int
    cols: int
    patch_size: int

    @property
    def n_patches(self) -> int:
        return self.patches.shape[0]

    def flat(self) -> np.ndarray:
        """(N, P*P) view with row-major cells inside each patch."""
        n = self.n_patches
        return self.patches.reshape(n, -1)


@dataclass(frozen=True)
class MaskPartition:
    """Disjoint visible/masked index sets over {0..N-1}."""

    visible: np.ndarray = field(repr=False)
    masked: np.ndarray = field(repr=False)
    ratio: float
    seed: int

    @property
    def n_total(self) -> int:
        return len(self.visible) + len(self.masked)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def _filterbank(fs: float, fft_size: int, n_mels: int, fmin: float, fmax: float):
    """Triangular Mel filterbank over rfft bins, area-normalized."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bins = np.fft.rfftfreq(fft_size, 1.0 / fs)
    fbank = np.zeros((n_mels, len(bins)))
    for i in range(n_mels):
        left, center, right = edges[i], edges[i + 1], edges[i + 2]
        rising = (bins - left) / (center - left)
        falling = (right - bins) / (right - center)
        fbank[i] = np.maximum(0.0, np.minimum(rising, falling))
        fbank[i] *= 2.0 / (right - left)
    return fbank


def mel_center_frequencies(cfg: MelConfig) -> np.ndarray:
    """Center frequency (Hz) of each Mel band."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax),
                                  cfg.n_mels + 2))
    return edges[1:-1]


def mel_spectrogram(clip: Waveform, cfg: MelConfig) -> MelImage:
    """Convert a clip of exactly cfg.clip_samples into a log-Mel image.

    Raises:
        LengthMismatch: clip length differs from cfg.clip_samples.
    """
    x = clip.samples
    if len(x) != cfg.clip_samples:
        raise LengthMismatch(f"expected {cfg.clip_samples} samples, got {len(x)}")
    pad = cfg.fft_size // 2
    padded = np.concatenate([np.zeros(pad), x, np.zeros(pad)])
    window = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(cfg.fft_size) / cfg.fft_size))
    starts = np.arange(cfg.n_frames) * cfg.hop
    frames = np.lib.stride_tricks.sliding_window_view(padded, cfg.fft_size)[starts]
    power = np.abs(np.fft.rfft(frames * window, axis=1)) ** 2  # (T, bins)
    fbank = _filterbank(cfg.fs, cfg.fft_size, cfg.n_mels, cfg.fmin, cfg.fmax)
    mel = power @ fbank.T  # (T, F)
    return MelImage(values=np.log(mel.T + cfg.log_floor), config=cfg)


def standardize(img: MelImage) -> MelImage:
    """Subtract the global mean and divide by the global std of the image."""
    v = img.values
    std = v.std()
    if std < 1e-12:
        return MelImage(values=np.zeros_like(v), config=img.config)
    return MelImage(values=(v - v.mean()) / std, config=img.config)


def patchify(img: MelImage, patch_size: int) -> PatchGrid:
    """Tile the image into P x P patches, frequency-major then time.

    Raises:
        IndivisibleDims: P does not divide both image dimensions.
    """
    f_dim, t_dim = img.values.shape
    p = patch_size
    if f_dim % p != 0 or t_dim % p != 0:
        raise IndivisibleDims(f"patch size {p} does not divide {f_dim}x{t_dim}")
    rows, cols = f_dim // p, t_dim // p
    tiles = (img.values.reshape(rows, p, cols, p)
             .transpose(0, 2, 1, 3)
             .reshape(rows * cols, p, p))
    return PatchGrid(patches=tiles, rows=rows, cols=cols, patch_size=p)


def unpatchify(grid: PatchGrid) -> np.ndarray:
    """Reassemble the (F, T) image from a PatchGrid."""
    p = grid.patch_size
    return (grid.patches.reshape(grid.rows, grid.cols, p, p)
            .transpose(0, 2, 1, 3)
            .reshape(grid.rows * p, grid.cols * p))


def sample_mask(n_patches: int, ratio: float, seed: int) -> MaskPartition:
    """Uniformly sample round(N * ratio) masked patch indices.

    Rounding is half-away-from-zero. Deterministic per seed.

    Raises:
        RatioOutOfRange: ratio outside [0, 0.95].
    """
    if not 0.0 <= ratio <= 0.95:
        raise RatioOutOfRange(f"masking ratio {ratio} outside [0, 0.95]")
    n_masked = int(np.floor(n_patches * ratio + 0.5))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_patches)
    masked = np.sort(perm[:n_masked])
    visible = np.sort(perm[n_masked:])
    return MaskPartition(visible=visible, masked=masked, ratio=ratio, seed=seed)


def normalize_patch(patch: np.ndarray) -> np.ndarray:
    """Zero-mean unit-std normalization of one patch (population std).

    Near-constant patches normalize to all zeros.
    """
    std = patch.std()
    if std < 1e-8:
        return np.zeros_like(patch)
    return (patch - patch.mean()) / std


def normalize_patches(flat_patches: np.ndarray) -> np.ndarray:
    """normalize_patch applied along the last axis of (..., P*P) arrays."""
    mean = flat_patches.mean(axis=-1, keepdims=True)
    std = flat_patches.std(axis=-1, keepdims=True)
    out = np.where(std < 1e-8, 0.0, (flat_patches - mean) / np.where(std < 1e-8, 1.0, std))
    return out
