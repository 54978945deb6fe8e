"""Shared fixtures: trained detectors, one per scenario, built once per session.

Training runs the real pipeline (200 synthetic noise clips, 30 epochs) so the
detection and mission tests exercise exactly what ships.
"""

import time

import numpy as np
import pytest

from acusar import mae
from acusar.features import MelConfig
from acusar.mission import Detector
from acusar.scene import Waveform, gen_signal, scenario_profile, set_level

MEL_CFG = MelConfig()
N_TRAIN_CLIPS = 200
CAL_MARGIN = 1.05


def make_noise_clip(profile, seed, duration=1.024):
    rotor = set_level(gen_signal("rotor", duration, 1000 + seed), profile.rotor_level)
    env = set_level(gen_signal(profile.env_kind, duration, 50000 + seed),
                    profile.env_level)
    return Waveform(samples=rotor.samples + env.samples, fs=16000.0)


class TrainedScenario:
    def __init__(self, scenario: str):
        self.profile = scenario_profile(scenario)
        self.clips = [make_noise_clip(self.profile, i) for i in range(N_TRAIN_CLIPS)]
        cfg = mae.MaeConfig()
        params = mae.init_params(cfg, seed=0)
        start = time.time()
        params, self.losses = mae.pretrain(params, self.clips, cfg, MEL_CFG,
                                           mae.TrainConfig(seed=0))
        self.train_seconds = time.time() - start
        self.threshold = mae.calibrate_threshold(params, cfg, MEL_CFG, self.clips,
                                                 margin=CAL_MARGIN, seed=0)
        self.detector = Detector(params=params, cfg=cfg, mel_cfg=MEL_CFG,
                                 threshold=self.threshold)

    def noise_clip(self, seed):
        return make_noise_clip(self.profile, seed)

    def victim_clip_at(self, distance, seed, duration=1.024):
        kind = "victim_cry" if seed % 2 else "victim_shout"
        voice = set_level(gen_signal(kind, duration, 7000 + seed),
                          self.profile.victim_level)
        return Waveform(samples=voice.samples / distance ** self.profile.alpha,
                        fs=16000.0)


@pytest.fixture(scope="session")
def desert():
    return TrainedScenario("desert")


@pytest.fixture(scope="session")
def forest():
    return TrainedScenario("forest")
