import numpy as np
import pytest

from acusar.errors import (InjectionOutOfRange, SilentInput, SourceTooClose,
                           UnknownKind)
from acusar.geometry import build_circular_array, pose_at
from acusar.scene import (MultiChannelClip, Waveform, compose_test_clip,
                          desert_profile, forest_profile, gen_signal,
                          propagate, set_level)

FS = 16000.0


def spectral_centroid(samples, fs=FS):
    spec = np.abs(np.fft.rfft(samples)) ** 2
    freqs = np.fft.rfftfreq(len(samples), 1.0 / fs)
    return float((freqs * spec).sum() / spec.sum())


def periodogram_slope(samples, fs=FS, fmin=100.0, fmax=4000.0, seg=4096):
    """dB-per-decade slope of an averaged periodogram, fit over [fmin, fmax]."""
    window = np.hanning(seg)
    n_seg = len(samples) // seg
    power = np.zeros(seg // 2 + 1)
    for i in range(n_seg):
        power += np.abs(np.fft.rfft(samples[i * seg:(i + 1) * seg] * window)) ** 2
    freqs = np.fft.rfftfreq(seg, 1.0 / fs)
    sel = (freqs >= fmin) & (freqs <= fmax)
    design = np.vstack([np.log10(freqs[sel]), np.ones(sel.sum())]).T
    slope, _ = np.linalg.lstsq(design, 10.0 * np.log10(power[sel]), rcond=None)[0]
    return float(slope)


class TestSetLevel:
    def test_reference_convention(self):
        wave = gen_signal("rotor", 1.0, 7)
        assert set_level(wave, 94.0).rms() == pytest.approx(1.0, rel=1e-12)

    def test_victim_level(self):
        wave = gen_signal("victim_cry", 1.0, 3)
        assert set_level(wave, 120.0).rms() == pytest.approx(10 ** (26 / 20), rel=1e-12)
        assert set_level(wave, 120.0).rms() == pytest.approx(19.9526, rel=1e-4)

    def test_desert_level(self):
        wave = gen_signal("env_desert", 1.0, 3)
        assert set_level(wave, 25.0).rms() == pytest.approx(3.548e-4, rel=1e-3)

    def test_round_trip_within_centi_db(self):
        wave = gen_signal("env_forest", 2.0, 5)
        for target in (25.0, 75.0, 120.0):
            measured = 20 * np.log10(set_level(wave, target).rms()) + 94.0
            assert abs(measured - target) < 0.01

    def test_silent_input(self):
        with pytest.raises(SilentInput):
            set_level(Waveform(samples=np.zeros(100), fs=FS), 94.0)

    def test_shape_preserved(self):
        wave = gen_signal("rotor", 0.5, 11)
        scaled = set_level(wave, 60.0)
        ratio = scaled.samples / wave.samples
        np.testing.assert_allclose(ratio, ratio[0], rtol=1e-9)
        assert ratio[0] > 0


class TestGenSignal:
    def test_deterministic_per_seed(self):
        a = gen_signal("rotor", 1.0, 7)
        b = gen_signal("rotor", 1.0, 7)
        assert np.array_equal(a.samples, b.samples)

    def test_seeds_differ(self):
        a = gen_signal("rotor", 1.0, 7)
        b = gen_signal("rotor", 1.0, 8)
        assert not np.array_equal(a.samples, b.samples)

    def test_unit_rms(self):
        for kind in ("rotor", "env_desert", "env_forest", "victim_cry", "victim_shout"):
            assert gen_signal(kind, 1.0, 4).rms() == pytest.approx(1.0, rel=1e-9)

    def test_unknown_kind(self):
        with pytest.raises(UnknownKind):
            gen_signal("whalesong", 1.0, 0)

    def test_desert_spectrum_is_pink(self):
        for seed in (1, 2, 3):
            slope = periodogram_slope(gen_signal("env_desert", 10.0, seed).samples)
            assert -12.0 <= slope <= -8.0

    def test_cry_centroid_above_rotor(self):
        for seed in range(20):
            cry = spectral_centroid(gen_signal("victim_cry", 1.0, seed).samples)
            rotor = spectral_centroid(gen_signal("rotor", 1.0, seed).samples)
            assert cry > rotor


class TestPropagate:
    def setup_method(self):
        self.array = build_circular_array(7, 0.25)
        self.profile = desert_profile()

    def test_amplitude_and_delay_overhead(self):
        posed = pose_at(self.array, (0.0, 0.0, 10.0))
        sig = gen_signal("victim_cry", 0.5, 1)
        clip = propagate((0.0, 0.0, 0.0), posed, sig, self.profile, v_s=343.0)
        # mic 0 at distance 10, alpha=2 -> gain 0.01
        out_rms = np.sqrt(np.mean(clip.samples[0] ** 2) * clip.n_samples / len(sig.samples))
        assert out_rms == pytest.approx(0.01 * sig.rms(), rel=1e-3)
        # delay 10/343 s: locate energy onset via cross-correlation
        lag = np.argmax(np.correlate(clip.samples[0], sig.samples, mode="full"))
        lag -= len(sig.samples) - 1
        assert lag == pytest.approx(10.0 / 343.0 * FS, abs=1.0)

    def test_forest_attenuation_factor(self):
        posed = pose_at(self.array, (0.0, 0.0, 10.0))
        sig = gen_signal("victim_shout", 0.5, 2)
        clip = propagate((0.0, 0.0, 0.0), posed, sig, forest_profile(), v_s=343.0)
        out_rms = np.sqrt(np.mean(clip.samples[0] ** 2) * clip.n_samples / len(sig.samples))
        assert out_rms == pytest.approx(10 ** -2.5 * sig.rms(), rel=1e-3)

    def test_equidistant_mics_match(self):
        posed = pose_at(self.array, (0.0, 0.0, 20.0))
        sig = gen_signal("victim_cry", 0.3, 3)
        clip = propagate((0.0, 0.0, 0.0), posed, sig, self.profile)
        # all ring mics are equidistant from a source on the array axis
        ref = clip.samples[1]
        for m in range(2, 7):
            assert np.max(np.abs(clip.samples[m] - ref)) <= 1e-6 * np.max(np.abs(ref))

    def test_source_too_close(self):
        posed = pose_at(self.array, (0.0, 0.0, 0.0))
        sig = gen_signal("victim_cry", 0.1, 1)
        with pytest.raises(SourceTooClose):
            propagate((0.25, 0.0, 0.0), posed, sig, self.profile)

    def test_attenuation_monotone_in_distance(self):
        sig = gen_signal("victim_cry", 0.3, 9)
        rms = []
        for dist in (5.0, 11.0, 23.0, 47.0, 96.0):
            posed = pose_at(self.array, (0.0, 0.0, dist))
            clip = propagate((0.0, 0.0, 0.0), posed, sig, self.profile)
            rms.append(np.sqrt(np.mean(clip.samples[0] ** 2)))
        assert all(a > b for a, b in zip(rms, rms[1:]))

    def test_interchannel_delay_matches_geometry(self):
        rng = np.random.default_rng(42)
        sig = gen_signal("victim_cry", 0.5, 5)
        for _ in range(5):
            uav = rng.uniform(-50, 50, size=3)
            uav[2] = rng.uniform(10, 40)
            posed = pose_at(self.array, uav)
            source = np.array([rng.uniform(-30, 30), rng.uniform(-30, 30), 0.0])
            clip = propagate(source, posed, sig, self.profile, v_s=343.0)
            dists = np.linalg.norm(posed.world_positions - source, axis=1)
            for m in (1, 4):
                corr = np.correlate(clip.samples[m], clip.samples[0], mode="full")
                k = np.argmax(corr)
                y0, y1, y2 = corr[k - 1], corr[k], corr[k + 1]
                frac = 0.5 * (y0 - y2) / (y0 - 2 * y1 + y2)
                lag = k + frac - (clip.n_samples - 1)
                expected = (dists[m] - dists[0]) / 343.0 * FS
                assert abs(lag - expected) <= 0.2


class TestComposeTestClip:
    def _clips(self):
        fs = FS
        bg = MultiChannelClip(samples=np.zeros((1, int(12 * fs))), fs=fs)
        vic = MultiChannelClip(samples=np.ones((1, int(2 * fs))), fs=fs)
        return bg, vic

    def test_injection_at_start(self):
        bg, vic = self._clips()
        mixed, interval = compose_test_clip(bg, vic, 0.0)
        assert interval == (0.0, 2.0)
        assert mixed.samples[0, 0] == 1.0
        assert mixed.samples[0, int(2 * FS)] == 0.0

    def test_injection_at_end(self):
        bg, vic = self._clips()
        mixed, interval = compose_test_clip(bg, vic, 10.0)
        assert interval == (10.0, 12.0)
        assert mixed.samples[0, -1] == 1.0
        assert mixed.samples[0, int(10 * FS) - 1] == 0.0

    def test_out_of_range(self):
        bg, vic = self._clips()
        with pytest.raises(InjectionOutOfRange):
            compose_test_clip(bg, vic, 10.5)
        with pytest.raises(InjectionOutOfRange):
            compose_test_clip(bg, vic, -0.1)

    def test_sum_is_samplewise(self):
        fs = FS
        rng = np.random.default_rng(0)
        bg = MultiChannelClip(samples=rng.standard_normal((2, int(12 * fs))), fs=fs)
        vic = MultiChannelClip(samples=rng.standard_normal((2, int(2 * fs))), fs=fs)
        mixed, _ = compose_test_clip(bg, vic, 3.5)
        start = int(3.5 * fs)
        np.testing.assert_array_equal(
            mixed.samples[:, start:start + vic.n_samples],
            bg.samples[:, start:start + vic.n_samples] + vic.samples)
        np.testing.assert_array_equal(mixed.samples[:, :start], bg.samples[:, :start])
