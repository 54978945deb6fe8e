"""Synthetic acoustic scene generation and point-source propagation.

Waveforms are held in pascals with the 94 dB SPL == 1 Pa RMS convention.
Sources are rendered per microphone with a windowed-sinc fractional delay
and line-of-sight 1/d^alpha attenuation.

Signal kinds:
    rotor        harmonic stack at a blade-pass fundamental plus broadband floor
    env_desert   pink noise with slow gust modulation
    env_forest   pink noise plus randomized birdsong-like chirps
    victim_cry   harmonic vocal bursts, fundamental sweeping 350-600 Hz
    victim_shout harmonic vocal bursts, fundamental sweeping 150-300 Hz
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InjectionOutOfRange, SilentInput, SourceTooClose, UnknownKind
from .geometry import PosedArray

DEFAULT_FS = 16_000
SPEED_OF_SOUND = 343.0

# 94 dB SPL corresponds to 1 Pa RMS.
_REF_DB = 94.0

# Half-width of the windowed-sinc fractional-delay kernel, in taps.
_SINC_HALF_WIDTH = 32

SIGNAL_KINDS = ("rotor", "env_desert", "env_forest", "victim_cry", "victim_shout")


@dataclass(frozen=True)
class Waveform:
    """A single-channel sampled signal in pascals."""

    samples: np.ndarray = field(repr=False)
    fs: float = DEFAULT_FS

    @property
    def duration(self) -> float:
        return len(self.samples) / self.fs

    def rms(self) -> float:
        return float(np.sqrt(np.mean(np.square(self.samples))))


@dataclass(frozen=True)
class ScenarioProfile:
    """Per-scenario propagation and level calibration.

    alpha is the path-loss exponent (2.0 free space, 2.5 dense vegetation);
    levels are dB SPL; threshold is the default anomaly trigger level.
    """

    name: str
    alpha: float
    env_level: float
    rotor_level: float
    victim_level: float
    threshold: float

    def __post_init__(self):
        if self.alpha not in (2.0, 2.5):
            raise ValueError(f"unsupported path-loss exponent {self.alpha}")
        for level in (self.env_level, self.rotor_level, self.victim_level):
            if not 0.0 <= level <= 140.0:
                raise ValueError(f"level {level} dB SPL outside [0, 140]")

    @property
    def env_kind(self) -> str:
        return f"env_{self.name}"


def desert_profile() -> ScenarioProfile:
    return ScenarioProfile(name="desert", alpha=2.0, env_level=25.0,
                           rotor_level=75.0, victim_level=120.0, threshold=1.57)


def forest_profile() -> ScenarioProfile:
    return ScenarioProfile(name="forest", alpha=2.5, env_level=35.0,
                           rotor_level=75.0, victim_level=120.0, threshold=1.33)


def scenario_profile(name: str) -> ScenarioProfile:
    if name == "desert":
        return desert_profile()
    if name == "forest":
        return forest_profile()
    raise UnknownKind(f"unknown scenario {name!r}")


@dataclass(frozen=True)
class MultiChannelClip:
    """M aligned channels sharing one sample rate and start time."""

    samples: np.ndarray = field(repr=False)  # (channels, n)
    fs: float = DEFAULT_FS
    start_time: float = 0.0

    def __post_init__(self):
        if self.samples.ndim != 2:
            raise ValueError("samples must be (channels, n)")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.fs

    def channel(self, m: int) -> Waveform:
        return Waveform(samples=self.samples[m], fs=self.fs)


def spl_to_rms(level_db: float) -> float:
    """dB SPL -> RMS pressure in pascals."""
    return 10.0 ** ((level_db - _REF_DB) / 20.0)


def set_level(wave: Waveform, target_db: float) -> Waveform:
    """Rescale a waveform so its RMS matches a dB SPL target.

    Raises:
        SilentInput: the waveform has zero RMS.
    """
    rms = wave.rms()
    if rms == 0.0:
        raise SilentInput("cannot calibrate an all-zero waveform")
    return Waveform(samples=wave.samples * (spl_to_rms(target_db) / rms), fs=wave.fs)


# -- generators ---------------------------------------------------------------

def _pink_noise(n: int, fs: float, rng: np.random.Generator) -> np.ndarray:
    """Pink (1/f power) noise via spectral shaping of white noise."""
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    shape = np.zeros_like(freqs)
    shape[1:] = 1.0 / np.sqrt(freqs[1:])
    return np.fft.irfft(spec * shape, n=n)


def _slow_envelope(n: int, fs: float, cutoff_hz: float, depth: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Positive modulation envelope varying below cutoff_hz."""
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    spec[freqs > cutoff_hz] = 0.0
    slow = np.fft.irfft(spec, n=n)
    std = np.std(slow)
    if std > 0:
        slow /= std
    return np.maximum(1.0 + depth * slow, 0.05)


def _harmonic_stack(f0_track: np.ndarray, fs: float, amps: np.ndarray,
                    phases: np.ndarray) -> np.ndarray:
    """Sum of harmonics of a (possibly time-varying) fundamental.

    Harmonics are dropped once they cross 0.95 * Nyquist.
    """
    phase0 = 2.0 * np.pi * np.cumsum(f0_track) / fs
    out = np.zeros_like(f0_track)
    limit = 0.95 * fs / 2.0
    for k, (amp, ph) in enumerate(zip(amps, phases), start=1):
        if np.max(f0_track) * k >= limit:
            break
        out += amp * np.sin(k * phase0 + ph)
    return out


def _gen_rotor(n: int, fs: float, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / fs
    # Blade-pass fundamental with a slight slow drift, 8 harmonics at 1/k.
    f0 = 180.0 * (1.0 + 0.01 * np.sin(2.0 * np.pi * 0.2 * t + rng.uniform(0, 2 * np.pi)))
    amps = 1.0 / np.arange(1, 9)
    phases = rng.uniform(0, 2 * np.pi, size=8)
    tonal = _harmonic_stack(f0, fs, amps, phases)
    # Slow amplitude modulation from varying load.
    am_rate = rng.uniform(0.3, 1.5)
    tonal *= 1.0 + 0.3 * np.sin(2.0 * np.pi * am_rate * t + rng.uniform(0, 2 * np.pi))
    broadband = rng.standard_normal(n)
    tonal_rms = np.sqrt(np.mean(tonal ** 2))
    broadband *= 10.0 ** (-20.0 / 20.0) * tonal_rms / np.sqrt(np.mean(broadband ** 2))
    return tonal + broadband


def _gen_env_desert(n: int, fs: float, rng: np.random.Generator) -> np.ndarray:
    pink = _pink_noise(n, fs, rng)
    return pink * _slow_envelope(n, fs, cutoff_hz=0.5, depth=0.35, rng=rng)


def _gen_env_forest(n: int, fs: float, rng: np.random.Generator) -> np.ndarray:
    pink = _pink_noise(n, fs, rng)
    pink_rms = np.sqrt(np.mean(pink ** 2))
    out = pink.copy()
    duration = n / fs
    n_events = rng.poisson(0.8 * duration)
    for _ in range(n_events):
        length = int(rng.uniform(0.05, 0.30) * fs)
        start = rng.integers(0, max(1, n - length))
        f_start = rng.uniform(2000.0, 6000.0)
        f_end = np.clip(f_start + rng.uniform(-1000.0, 1000.0), 2000.0, 6000.0)
        freq = np.linspace(f_start, f_end, length)
        chirp = np.sin(2.0 * np.pi * np.cumsum(freq) / fs + rng.uniform(0, 2 * np.pi))
        chirp *= np.hanning(length) * rng.uniform(1.0, 3.0) * pink_rms * np.sqrt(2.0)
        out[start:start + length] += chirp
    return out


def _formant_gain(freq_hz: np.ndarray, centers, widths, gains) -> np.ndarray:
    g = np.ones_like(freq_hz)
    for c, w, a in zip(centers, widths, gains):
        g += a * np.exp(-0.5 * ((freq_hz - c) / w) ** 2)
    return g


def _gen_victim(n: int, fs: float, rng: np.random.Generator,
                f0_range, formants, n_harmonics: int) -> np.ndarray:
    out = np.zeros(n)
    centers, widths, gains = formants
    cursor = 0
    # Alternate voiced bursts with short gaps; bursts carry the vocal content.
    while cursor < n:
        burst_len = min(int(rng.uniform(0.20, 0.50) * fs), n - cursor)
        if burst_len > int(0.03 * fs):
            t = np.arange(burst_len) / fs
            f_lo = rng.uniform(*f0_range)
            f_hi = rng.uniform(*f0_range)
            f0 = np.linspace(f_lo, f_hi, burst_len)
            f0 = f0 * (1.0 + 0.03 * np.sin(2.0 * np.pi * 6.0 * t + rng.uniform(0, 2 * np.pi)))
            amps = np.array([
                _formant_gain(np.array([k * 0.5 * (f_lo + f_hi)]), centers, widths, gains)[0] / k
                for k in range(1, n_harmonics + 1)
            ])
            phases = rng.uniform(0, 2 * np.pi, size=n_harmonics)
            burst = _harmonic_stack(f0, fs, amps, phases)
            ramp = min(int(0.02 * fs), burst_len // 4)
            if ramp > 0:
                win = np.ones(burst_len)
                win[:ramp] = 0.5 * (1 - np.cos(np.pi * np.arange(ramp) / ramp))
                win[-ramp:] = win[:ramp][::-1]
                burst *= win
            out[cursor:cursor + burst_len] += burst
        cursor += burst_len + int(rng.uniform(0.05, 0.25) * fs)
    return out


def gen_signal(kind: str, duration: float, seed: int, fs: float = DEFAULT_FS) -> Waveform:
    """Generate a synthetic signal, normalized to RMS 1, deterministic per seed.

    Raises:
        UnknownKind: kind not in SIGNAL_KINDS.
    """
    if kind not in SIGNAL_KINDS:
        raise UnknownKind(f"unknown signal kind {kind!r}")
    if duration <= 0:
        raise ValueError(f"duration must be > 0, got {duration}")
    n = int(round(duration * fs))
    rng = np.random.default_rng(np.random.SeedSequence([_kind_tag(kind), int(seed)]))
    if kind == "rotor":
        samples = _gen_rotor(n, fs, rng)
    elif kind == "env_desert":
        samples = _gen_env_desert(n, fs, rng)
    elif kind == "env_forest":
        samples = _gen_env_forest(n, fs, rng)
    elif kind == "victim_cry":
        samples = _gen_victim(n, fs, rng, (350.0, 600.0),
                              ([900.0, 2800.0], [250.0, 450.0], [3.0, 2.0]), 12)
    else:  # victim_shout
        samples = _gen_victim(n, fs, rng, (150.0, 300.0),
                              ([700.0, 1800.0], [200.0, 350.0], [3.0, 2.0]), 15)
    rms = np.sqrt(np.mean(samples ** 2))
    return Waveform(samples=samples / rms, fs=fs)


def _kind_tag(kind: str) -> int:
    return SIGNAL_KINDS.index(kind) + 1


# -- propagation --------------------------------------------------------------

def _fractional_delay_kernel(frac: float) -> np.ndarray:
    """Hann-windowed sinc kernel interpolating at a fractional offset.

    Kernel index i covers taps j = i - (half_width - 1), so the kernel center
    aligns with tap j = 0.
    """
    w = _SINC_HALF_WIDTH
    j = np.arange(-w + 1, w + 1, dtype=float)
    x = j - frac
    window = 0.5 * (1.0 + np.cos(np.pi * x / w))
    window[np.abs(x) >= w] = 0.0
    return np.sinc(x) * window


def delay_and_scale(samples: np.ndarray, delay_samples: float, gain: float,
                    out_len: int) -> np.ndarray:
    """Apply a fractional delay and gain, writing into a fresh buffer of out_len."""
    n0 = int(np.floor(delay_samples))
    frac = delay_samples - n0
    kernel = _fractional_delay_kernel(frac)
    seg = np.convolve(samples, kernel)
    out = np.zeros(out_len)
    # seg[k] interpolates the delayed signal at sample k + n0 - (half_width - 1).
    offset = n0 - (_SINC_HALF_WIDTH - 1)
    src_lo = max(0, -offset)
    dst_lo = max(0, offset)
    length = min(len(seg) - src_lo, out_len - dst_lo)
    if length > 0:
        out[dst_lo:dst_lo + length] = gain * seg[src_lo:src_lo + length]
    return out


def propagate(source_pos, posed: PosedArray, signal: Waveform,
              profile: ScenarioProfile, v_s: float = SPEED_OF_SOUND) -> MultiChannelClip:
    """Render a point source at every microphone of a posed array.

    Channel m is the source signal delayed by d_m / v_s and scaled by
    1/d_m^alpha, with d_m the source-to-mic distance. All channels share a
    common time origin (the source's emission clock), so inter-channel lag
    differences are physical.

    Raises:
        SourceTooClose: some microphone is within 1 cm of the source.
    """
    src = np.asarray(source_pos, dtype=float)
    mics = posed.world_positions
    dists = np.linalg.norm(mics - src[None, :], axis=1)
    if np.any(dists <= 0.01):
        raise SourceTooClose(f"min source-mic distance {dists.min():.4f} m")
    fs = signal.fs
    delays = dists / v_s * fs
    gains = 1.0 / dists ** profile.alpha
    out_len = len(signal.samples) + int(np.ceil(delays.max())) + _SINC_HALF_WIDTH
    channels = np.stack([
        delay_and_scale(signal.samples, d, g, out_len)
        for d, g in zip(delays, gains)
    ])
    return MultiChannelClip(samples=channels, fs=fs, start_time=0.0)


def compose_test_clip(background: MultiChannelClip, victim: MultiChannelClip,
                      inject_at: float):
    """Sum a victim clip into a background clip at a given offset.

    Returns the composed clip and the ground-truth (start, end) interval in
    seconds.

    Raises:
        InjectionOutOfRange: the victim would not fit inside the background.
    """
    if victim.n_channels != background.n_channels or victim.fs != background.fs:
        raise ValueError("victim and background clips must share channels and fs")
    start = int(round(inject_at * background.fs))
    if inject_at < 0 or start + victim.n_samples > background.n_samples:
        raise InjectionOutOfRange(
            f"inject_at={inject_at} s with a {victim.duration:.3f} s clip does not fit "
            f"a {background.duration:.3f} s background")
    mixed = background.samples.copy()
    mixed[:, start:start + victim.n_samples] += victim.samples
    clip = MultiChannelClip(samples=mixed, fs=background.fs,
                            start_time=background.start_time)
    return clip, (inject_at, inject_at + victim.duration)
