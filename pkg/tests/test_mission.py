import numpy as np
import pytest

from acusar import localization, mission
from acusar.mission import (build_survey_trajectory, default_mission_config,
                            eval_detection, run_mission)


class TestTrajectory:
    def test_desert_start_and_end(self):
        wp = build_survey_trajectory("desert")
        np.testing.assert_allclose(wp[0], [-500.0, -4.0, 5.0])
        np.testing.assert_allclose(wp[-1], [200.0, 5.0, 5.0])

    def test_forest_altitude(self):
        wp = build_survey_trajectory("forest")
        np.testing.assert_allclose(wp[0], [-500.0, -4.0, 15.0])
        assert np.all(wp[:, 2] == 15.0)

    def test_hover_spacing_bound(self):
        wp = build_survey_trajectory("desert", spacing=10.0)
        steps = np.linalg.norm(np.diff(wp, axis=0), axis=1)
        assert np.all(steps <= 10.0 + 1e-9)
        assert len(wp) == 72

    def test_altitude_override(self):
        wp = build_survey_trajectory("desert", altitude=20.0)
        assert np.all(wp[:, 2] == 20.0)

    def test_cruise_leg_follows_x_axis(self):
        wp = build_survey_trajectory("desert")
        cruise = wp[wp[:, 1] == 5.0]
        assert cruise[0, 0] == -500.0
        assert cruise[-1, 0] == 200.0
        assert np.all(np.diff(cruise[:, 0]) > 0)


class TestBurstMask:
    def test_duty_cycle(self):
        mask = mission._burst_mask(0.0, 6000, 1000.0, period=3.0, burst_len=1.0)
        assert mask[:1000].all() and not mask[1000:3000].any()
        assert mask[3000:4000].all() and not mask[4000:6000].any()

    def test_phase_offset(self):
        mask = mission._burst_mask(2.5, 1000, 1000.0, period=3.0, burst_len=1.0)
        # [2.5, 3.5): burst resumes at t=3.0
        assert not mask[:500].any() and mask[500:].all()


class TestRunMission:
    def test_no_victim_never_triggers(self, desert):
        cfg = default_mission_config("desert", seed=11, hover_spacing=20.0,
                                     victim_enabled=False)
        log = run_mission(cfg, desert.detector)
        assert log.n_triggers == 0
        assert all(not r.triggered for r in log.records)
        assert all(r.loc_error is None for r in log.records)
        assert all(not np.isfinite(r.snr_db) for r in log.records)

    def test_deterministic_per_seed(self, desert):
        cfg = default_mission_config("desert", seed=5, hover_spacing=100.0)
        a = run_mission(cfg, desert.detector)
        b = run_mission(cfg, desert.detector)
        assert len(a.records) == len(b.records)
        for ra, rb in zip(a.records, b.records):
            assert ra.score == rb.score
            assert ra.snr_db == rb.snr_db or (
                not np.isfinite(ra.snr_db) and not np.isfinite(rb.snr_db))
            assert ra.triggered == rb.triggered

    def test_sentinel_only_hovers_do_no_correlation(self, desert, monkeypatch):
        calls = {"gcc": 0, "sentinel": 0}
        real_gcc = localization.gcc_phat
        real_detect = mission.mae.sentinel_detect

        def counting_gcc(*args, **kwargs):
            calls["gcc"] += 1
            return real_gcc(*args, **kwargs)

        def counting_detect(*args, **kwargs):
            calls["sentinel"] += 1
            return real_detect(*args, **kwargs)

        monkeypatch.setattr(localization, "gcc_phat", counting_gcc)
        monkeypatch.setattr(mission.mae, "sentinel_detect", counting_detect)
        cfg = default_mission_config("desert", seed=3, hover_spacing=20.0,
                                     victim_enabled=False)
        log = run_mission(cfg, desert.detector)
        assert calls["sentinel"] == len(log.records)
        assert calls["gcc"] == 0

    def test_triggered_hovers_produce_rays_and_fusion(self, desert):
        cfg = default_mission_config("desert", seed=1, hover_spacing=2.5)
        log = run_mission(cfg, desert.detector)
        trig = [r for r in log.records if r.triggered]
        assert len(trig) >= 2
        for r in trig:
            assert np.linalg.norm(r.doa) == pytest.approx(1.0, abs=1e-9)
            assert r.doa[2] <= 0.0
            assert r.weight > 0.0
            assert np.isfinite(r.snr_db)
        errs = log.loc_errors()
        assert errs, "at least one fused estimate expected"
        # fly-through geometry localizes the victim within a couple of meters
        assert errs[-1] < 2.0

    def test_triggers_only_near_victim(self, desert):
        cfg = default_mission_config("desert", seed=2, hover_spacing=5.0)
        log = run_mission(cfg, desert.detector)
        for r in log.records:
            if r.triggered:
                assert abs(r.position[0]) <= 30.0

    def test_window_fit_validated(self, desert):
        cfg = default_mission_config("desert", tau_retro=0.9)
        with pytest.raises(ValueError):
            run_mission(cfg, desert.detector)


class TestEvalDetection:
    def test_accuracy_high_when_victim_close(self, desert):
        result = eval_detection(desert.detector, desert.profile, altitude=5.0,
                                n_trials=30, seed=42)
        assert 0.9 <= result.accuracy <= 1.0
        assert result.false_alarm_rate <= 0.1

    def test_altitude_trend(self, desert):
        near = eval_detection(desert.detector, desert.profile, 5.0,
                              n_trials=40, seed=7)
        far = eval_detection(desert.detector, desert.profile, 20.0,
                             n_trials=40, seed=7)
        assert near.accuracy >= far.accuracy

    def test_result_fields_bounded(self, desert):
        result = eval_detection(desert.detector, desert.profile, 10.0,
                                n_trials=10, seed=3)
        assert 0.0 <= result.accuracy <= 1.0
        assert 0.0 <= result.hit_rate <= 1.0
        assert result.accuracy <= result.hit_rate
        assert result.n_trials == 10

    def test_reproducible(self, desert):
        a = eval_detection(desert.detector, desert.profile, 10.0, n_trials=10, seed=9)
        b = eval_detection(desert.detector, desert.profile, 10.0, n_trials=10, seed=9)
        assert a == b
