"""Two-stage search mission along a survey trajectory.

At each hover the UAV synthesizes its local acoustic scene, pushes it into
the ring buffer, and scores a single-channel clip. Only on a trigger does
the full-channel window come back out of the buffer for TDoA estimation,
bearing solving, and ray fusion. The runner also provides the detection
evaluation protocol (12 s test clips with an injected 2 s anomaly).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mae
from .errors import DegenerateGeometry
from .features import MelConfig
from .fusion import Observation, fuse
from .geometry import build_circular_array, pose_at
from .localization import estimate_tdoas, max_lag_for, solve_doa
from .mae import MaeConfig, MaeParams
from .ringbuffer import RingBuffer
from .scene import (SPEED_OF_SOUND, MultiChannelClip, ScenarioProfile,
                    Waveform, compose_test_clip, gen_signal, propagate,
                    scenario_profile, set_level, spl_to_rms)

DEFAULT_ALTITUDES = {"desert": 5.0, "forest": 15.0}
ALTITUDE_SWEEPS = {"desert": (5.0, 10.0, 15.0, 20.0),
                   "forest": (15.0, 20.0, 35.0, 50.0)}

_TRAJ_START_XY = (-500.0, -4.0)
_TRAJ_TURN_Y = 5.0
_TRAJ_END_X = 200.0


@dataclass(frozen=True)
class Detector:
    """A trained scorer plus everything needed to run it."""

    params: MaeParams
    cfg: MaeConfig
    mel_cfg: MelConfig
    threshold: float


@dataclass(frozen=True)
class MissionConfig:
    profile: ScenarioProfile
    altitude: float | None = None
    victim_position: tuple = (0.0, 0.0, 0.0)
    hover_spacing: float = 10.0
    mic_count: int = 7
    mic_radius: float = 0.25
    v_s: float = SPEED_OF_SOUND
    buffer_seconds: float = 12.0
    tau_retro: float = 0.5
    tau_post: float = 0.5
    victim_burst_period: float = 3.0
    victim_burst_len: float = 1.0
    victim_enabled: bool = True
    # Cruise time between hovers; also decorrelates hover starts from the
    # victim's burst phase (back-to-back hovers alias against the duty cycle).
    travel_seconds: float = 0.7
    seed: int = 0


@dataclass(frozen=True)
class HoverRecord:
    index: int
    position: np.ndarray = field(repr=False)
    snr_db: float = float("-inf")
    score: float = 0.0
    triggered: bool = False
    doa: np.ndarray | None = field(default=None, repr=False)
    weight: float | None = None
    fused: np.ndarray | None = field(default=None, repr=False)
    loc_error: float | None = None


@dataclass
class MissionLog:
    records: list
    victim_position: np.ndarray = field(repr=False)
    n_triggers: int = 0

    def loc_errors(self):
        return [r.loc_error for r in self.records if r.loc_error is not None]


def build_survey_trajectory(scenario: str, altitude: float | None = None,
                            spacing: float = 10.0) -> np.ndarray:
    """Hover waypoints: short y-leg from the start, then a long x-axis cruise.

    Points are placed every `spacing` meters along each leg; the final
    endpoint is always included.
    """
    h = DEFAULT_ALTITUDES[scenario] if altitude is None else float(altitude)
    x0, y0 = _TRAJ_START_XY
    legs = [((x0, y0), (x0, _TRAJ_TURN_Y)),
            ((x0, _TRAJ_TURN_Y), (_TRAJ_END_X, _TRAJ_TURN_Y))]
    points = []
    for (ax, ay), (bx, by) in legs:
        length = float(np.hypot(bx - ax, by - ay))
        n_steps = int(np.floor(length / spacing))
        for i in range(n_steps + 1):
            fraction = i * spacing / length
            points.append((ax + fraction * (bx - ax), ay + fraction * (by - ay)))
        if n_steps * spacing < length:
            points.append((bx, by))
    waypoints = np.array([(px, py, h) for px, py in points])
    # Drop duplicated leg joints.
    keep = np.ones(len(waypoints), dtype=bool)
    keep[1:] = np.linalg.norm(np.diff(waypoints, axis=0), axis=1) > 1e-9
    return waypoints[keep]


def _burst_mask(t0: float, n: int, fs: float, period: float, burst_len: float) -> np.ndarray:
    """Victim duty-cycle mask for the window starting at mission time t0."""
    t = t0 + np.arange(n) / fs
    return (np.mod(t, period) < burst_len).astype(float)


def _synthesize_hover(cfg: MissionConfig, detector: Detector, posed, t0: float,
                      n_scene: int, hover_rng: np.random.Generator):
    """Per-channel noise plus (optionally) the propagated victim bursts.

    Returns (scene, noise_ch0_rms, victim_ch0) with scene shaped (M, n_scene).
    """
    fs = detector.mel_cfg.fs
    duration = n_scene / fs
    m = cfg.mic_count
    profile = cfg.profile
    seeds = hover_rng.integers(0, 2 ** 62, size=2 * m + 2)
    noise = np.zeros((m, n_scene))
    for ch in range(m):
        rotor = set_level(gen_signal("rotor", duration, int(seeds[ch]), fs),
                          profile.rotor_level)
        env = set_level(gen_signal(profile.env_kind, duration, int(seeds[m + ch]), fs),
                        profile.env_level)
        noise[ch] = rotor.samples[:n_scene] + env.samples[:n_scene]
    victim_ch = np.zeros((m, n_scene))
    if cfg.victim_enabled:
        mask = _burst_mask(t0, n_scene, fs, cfg.victim_burst_period, cfg.victim_burst_len)
        if mask.any():
            kind = "victim_cry" if hover_rng.random() < 0.5 else "victim_shout"
            voice = set_level(gen_signal(kind, duration, int(seeds[2 * m]), fs),
                              profile.victim_level)
            emitted = Waveform(samples=voice.samples * mask, fs=fs)
            if np.any(emitted.samples):
                rendered = propagate(cfg.victim_position, posed, emitted, profile, cfg.v_s)
                dists = np.linalg.norm(posed.world_positions
                                       - np.asarray(cfg.victim_position)[None, :], axis=1)
                lead = int(np.floor(dists.min() / cfg.v_s * fs))
                victim_ch = rendered.samples[:, lead:lead + n_scene]
    return noise + victim_ch, noise[0], victim_ch[0]


def run_mission(cfg: MissionConfig, detector: Detector,
                seed: int | None = None) -> MissionLog:
    """Fly the survey trajectory and log every hover.

    Deterministic per seed. GCC-PHAT and the bearing solver run only on
    triggered hovers; fusion starts at the second trigger. A degenerate
    fusion geometry is logged as an absent estimate, not an error.
    """
    run_seed = cfg.seed if seed is None else seed
    fs = detector.mel_cfg.fs
    clip_samples = detector.mel_cfg.clip_samples
    half_clip = clip_samples / (2.0 * fs)
    if cfg.tau_retro > half_clip or cfg.tau_post > half_clip:
        raise ValueError("retro/post windows must fit inside the scored clip")
    n_scene = clip_samples
    array = build_circular_array(cfg.mic_count, cfg.mic_radius)
    ring = RingBuffer(cfg.mic_count, fs, cfg.buffer_seconds)
    waypoints = build_survey_trajectory(cfg.profile.name, cfg.altitude,
                                        cfg.hover_spacing)
    victim = np.asarray(cfg.victim_position, dtype=float)
    root = np.random.SeedSequence(run_seed)
    hover_seeds = root.spawn(len(waypoints))

    records = []
    observations = []
    for k, waypoint in enumerate(waypoints):
        posed = pose_at(array, waypoint)
        # Mission clock (victim burst phase) includes travel time between
        # hovers; the buffer clock advances only while recording.
        t_mission = k * (n_scene / fs + cfg.travel_seconds)
        t_buffer = k * n_scene / fs
        hover_rng = np.random.default_rng(hover_seeds[k])
        scene, noise0, victim0 = _synthesize_hover(cfg, detector, posed, t_mission,
                                                   n_scene, hover_rng)
        ring.push(MultiChannelClip(samples=scene, fs=fs, start_time=t_buffer))

        sentinel = Waveform(samples=scene[0, :clip_samples], fs=fs)
        # The trigger timestamp marks the anomaly, i.e. the center of the
        # scored clip, so the retro/post window brackets the triggering sound.
        t_trig = t_buffer + half_clip
        mask_seed = int((run_seed * 1_000_003 + round(t_trig * fs)) % (2 ** 63))
        verdict = mae.sentinel_detect(sentinel, detector.params, detector.cfg,
                                      detector.mel_cfg, detector.threshold, mask_seed)

        v_rms = float(np.sqrt(np.mean(victim0[:clip_samples] ** 2)))
        n_rms = float(np.sqrt(np.mean(noise0[:clip_samples] ** 2)))
        snr = 20.0 * np.log10(v_rms / n_rms) if v_rms > 0 else float("-inf")

        doa = weight = fused = loc_error = None
        if verdict.triggered:
            window = ring.extract(t_trig, cfg.tau_retro, cfg.tau_post)
            tdoas = estimate_tdoas(window, max_lag_for(posed, cfg.v_s))
            estimate = solve_doa(posed, tdoas, cfg.v_s)
            doa = estimate.direction
            weight = float(np.mean(tdoas.peaks))
            observations.append(Observation(position=waypoint, direction=doa,
                                            weight=weight, timestamp=t_trig))
            if len(observations) >= 2:
                try:
                    fused = fuse(observations).position
                    loc_error = float(np.linalg.norm(fused - victim))
                except DegenerateGeometry:
                    fused = loc_error = None
        records.append(HoverRecord(index=k, position=waypoint, snr_db=snr,
                                   score=verdict.score, triggered=verdict.triggered,
                                   doa=doa, weight=weight, fused=fused,
                                   loc_error=loc_error))
    return MissionLog(records=records, victim_position=victim,
                      n_triggers=len(observations))


# -- detection evaluation protocol ---------------------------------------------

@dataclass(frozen=True)
class DetectionResult:
    accuracy: float
    hit_rate: float
    false_alarm_rate: float
    n_trials: int


def _mono_background(profile: ScenarioProfile, duration: float, fs: float,
                     seeds) -> Waveform:
    rotor = set_level(gen_signal("rotor", duration, int(seeds[0]), fs),
                      profile.rotor_level)
    env = set_level(gen_signal(profile.env_kind, duration, int(seeds[1]), fs),
                    profile.env_level)
    return Waveform(samples=rotor.samples + env.samples, fs=fs)


def make_victim_anomaly(profile: ScenarioProfile, distance: float, fs: float,
                        rng: np.random.Generator) -> Waveform:
    """Two random 1 s victim clips, concatenated, leveled, and attenuated."""
    parts = []
    for _ in range(2):
        kind = "victim_cry" if rng.random() < 0.5 else "victim_shout"
        parts.append(gen_signal(kind, 1.0, int(rng.integers(0, 2 ** 62)), fs).samples)
    voice = set_level(Waveform(samples=np.concatenate(parts), fs=fs),
                      profile.victim_level)
    return Waveform(samples=voice.samples / distance ** profile.alpha, fs=fs)


def eval_detection(detector: Detector, profile: ScenarioProfile, altitude: float,
                   n_trials: int, seed: int, clip_seconds: float = 12.0,
                   anomaly_seconds: float = 2.0) -> DetectionResult:
    """Success rate over randomized 12 s test clips with one injected anomaly.

    The victim sits directly below the UAV, so the propagation distance is
    the altitude. A trial succeeds when some scoring window overlapping the
    injected interval triggers and the victim-free control clip stays quiet.
    """
    fs = detector.mel_cfg.fs
    window = detector.mel_cfg.clip_seconds
    clip_samples = detector.mel_cfg.clip_samples
    n_windows = int(clip_seconds / window)
    root = np.random.SeedSequence(seed)
    hits = 0
    false_alarms = 0
    successes = 0
    for trial_ss in root.spawn(n_trials):
        rng = np.random.default_rng(trial_ss)
        seeds = rng.integers(0, 2 ** 62, size=2)
        background = _mono_background(profile, clip_seconds, fs, seeds)
        anomaly = make_victim_anomaly(profile, altitude, fs, rng)
        inject_at = rng.uniform(0.0, clip_seconds - anomaly_seconds)
        mixed, interval = compose_test_clip(
            MultiChannelClip(samples=background.samples[None], fs=fs),
            MultiChannelClip(samples=anomaly.samples[None], fs=fs), inject_at)
        mask_seeds = rng.integers(0, 2 ** 62, size=n_windows)
        hit = False
        alarm = False
        for i in range(n_windows):
            lo = i * clip_samples
            overlaps = (i * window) < interval[1] and (i + 1) * window > interval[0]
            test = Waveform(samples=mixed.samples[0, lo:lo + clip_samples], fs=fs)
            control = Waveform(samples=background.samples[lo:lo + clip_samples], fs=fs)
            v_test = mae.sentinel_detect(test, detector.params, detector.cfg,
                                         detector.mel_cfg, detector.threshold,
                                         int(mask_seeds[i]))
            v_ctrl = mae.sentinel_detect(control, detector.params, detector.cfg,
                                         detector.mel_cfg, detector.threshold,
                                         int(mask_seeds[i]))
            if v_test.triggered and overlaps:
                hit = True
            if v_ctrl.triggered:
                alarm = True
        hits += hit
        false_alarms += alarm
        successes += hit and not alarm
    return DetectionResult(accuracy=successes / n_trials, hit_rate=hits / n_trials,
                           false_alarm_rate=false_alarms / n_trials,
                           n_trials=n_trials)


def detector_from_checkpoint(path, mel_cfg: MelConfig | None = None,
                             threshold: float | None = None) -> Detector:
    """Load a Detector, preferring the checkpoint's calibrated threshold."""
    cfg, params, stored_threshold = mae.load_checkpoint(path)
    if threshold is None:
        threshold = stored_threshold if np.isfinite(stored_threshold) else None
    if threshold is None:
        raise ValueError("checkpoint has no calibrated threshold; pass one explicitly")
    return Detector(params=params, cfg=cfg,
                    mel_cfg=mel_cfg or MelConfig(), threshold=float(threshold))


def default_mission_config(scenario: str, **overrides) -> MissionConfig:
    profile = scenario_profile(scenario)
    return MissionConfig(profile=profile, **overrides)


def victim_rms_at(profile: ScenarioProfile, distance: float) -> float:
    """Expected victim RMS (Pa) at a mic, for SNR bookkeeping in tests."""
    return spl_to_rms(profile.victim_level) / distance ** profile.alpha
