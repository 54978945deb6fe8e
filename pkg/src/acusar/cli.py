"""Command-line entry point: dataset generation, training, evaluation, missions.

Every command takes a YAML config (merged over built-in defaults plus a few
flag overrides) and echoes the fully resolved config into the output
directory, so any artifact can be reproduced from its run directory alone.
Outputs are WAV (16-bit PCM little-endian) and CSV with fixed headers,
'.' decimals, and '\\n' newlines.
"""

from __future__ import annotations

import argparse
import copy
import csv
import sys
from pathlib import Path

import numpy as np
import yaml
from scipy.io import wavfile

from . import mae
from .features import MelConfig
from .mae import MaeConfig, TrainConfig
from .mission import (ALTITUDE_SWEEPS, Detector, MissionConfig, eval_detection,
                      run_mission)
from .scene import Waveform, gen_signal, scenario_profile, set_level

DETECTION_HEADER = "scenario,h_m,rho,accuracy,n_trials,seed"
MISSION_HEADER = ("hover_idx,x,y,z,snr_db,d_re,triggered,"
                  "doa_x,doa_y,doa_z,sx,sy,sz,loc_err_m")
MANIFEST_HEADER = "file,kind,scenario,seed,duration_s,rms_db"

DEFAULT_CONFIG = {
    "seed": 0,
    "scenario": "desert",
    "mel": {
        "fs": 16000.0, "fft_size": 512, "hop": 128, "n_mels": 64,
        "fmin": 50.0, "fmax": 8000.0, "log_floor": 1e-10, "clip_samples": 16384,
    },
    "mae": {
        "patch_size": 8, "n_tokens": 128, "embed_dim": 64, "enc_depth": 2,
        "enc_heads": 4, "dec_dim": 32, "dec_depth": 1, "dec_heads": 2,
        "mlp_ratio": 4, "mask_ratio": 0.10, "top_k": 0.10,
    },
    "train": {
        "optimizer": "adam", "lr": 2e-3, "epochs": 30, "batch_size": 16,
        "rhos": [round(0.05 * i, 2) for i in range(19)],
        "calibration_margin": 1.05, "calibration_clips": 200,
    },
    "gen": {
        "n_noise": 200, "n_victim": 50,
        "noise_seconds": 1.024, "victim_seconds": 1.0,
    },
    "detect": {"n_trials": 100, "altitudes": None},
    "mission": {
        "altitude": None, "hover_spacing": 10.0, "victim": [0.0, 0.0, 0.0],
        "victim_enabled": True, "mic_count": 7, "mic_radius": 0.25,
        "v_s": 343.0, "buffer_seconds": 12.0, "tau_retro": 0.5, "tau_post": 0.5,
        "burst_period": 3.0, "burst_len": 1.0, "travel_seconds": 0.7,
        "threshold": None,
    },
}


def deep_update(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_update(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        with open(path) as fh:
            loaded = yaml.safe_load(fh) or {}
        cfg = deep_update(cfg, loaded)
    return cfg


def echo_config(cfg: dict, out_dir: Path, command: str) -> None:
    resolved = dict(cfg)
    resolved["command"] = command
    with open(out_dir / "config.yaml", "w") as fh:
        yaml.safe_dump(resolved, fh, sort_keys=True)


def mel_config_from(cfg: dict) -> MelConfig:
    m = cfg["mel"]
    return MelConfig(fs=m["fs"], fft_size=m["fft_size"], hop=m["hop"],
                     n_mels=m["n_mels"], fmin=m["fmin"], fmax=m["fmax"],
                     log_floor=m["log_floor"], clip_samples=m["clip_samples"])


def mae_config_from(cfg: dict, mask_ratio: float | None = None) -> MaeConfig:
    m = cfg["mae"]
    return MaeConfig(patch_size=m["patch_size"], n_tokens=m["n_tokens"],
                     embed_dim=m["embed_dim"], enc_depth=m["enc_depth"],
                     enc_heads=m["enc_heads"], dec_dim=m["dec_dim"],
                     dec_depth=m["dec_depth"], dec_heads=m["dec_heads"],
                     mlp_ratio=m["mlp_ratio"],
                     mask_ratio=m["mask_ratio"] if mask_ratio is None else mask_ratio,
                     top_k=m["top_k"])


# -- WAV helpers ----------------------------------------------------------------

def write_wav(path, samples: np.ndarray, fs: float) -> None:
    """16-bit PCM export, peak-normalized to 0.9 full scale."""
    peak = np.max(np.abs(samples))
    if peak == 0:
        raise ValueError("refusing to write an all-zero WAV")
    scaled = np.round(samples / peak * 0.9 * 32767.0).astype(np.int16)
    wavfile.write(path, int(fs), scaled.T if scaled.ndim == 2 else scaled)


def read_wav(path) -> Waveform:
    fs, data = wavfile.read(path)
    if data.ndim > 1:
        data = data.T[0]
    return Waveform(samples=data.astype(float) / 32767.0, fs=float(fs))


def load_dataset_clips(data_dir: Path, kind_prefix: str):
    """Load (clip, row) pairs for manifest rows whose kind starts with prefix."""
    clips = []
    with open(data_dir / "manifest.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            if not row["kind"].startswith(kind_prefix):
                continue
            wave = read_wav(data_dir / row["file"])
            clips.append((set_level(wave, float(row["rms_db"])), row))
    return clips


# -- commands ---------------------------------------------------------------------

def cmd_gen(cfg: dict, out_dir: Path) -> int:
    """Write noise and victim WAV datasets plus a manifest."""
    scenario = cfg["scenario"]
    profile = scenario_profile(scenario)
    fs = cfg["mel"]["fs"]
    g = cfg["gen"]
    seed = cfg["seed"]
    rows = []
    rng = np.random.default_rng(np.random.SeedSequence([seed, 71]))
    for i in range(g["n_noise"]):
        s_rotor, s_env = int(rng.integers(2 ** 62)), int(rng.integers(2 ** 62))
        rotor = set_level(gen_signal("rotor", g["noise_seconds"], s_rotor, fs),
                          profile.rotor_level)
        env = set_level(gen_signal(profile.env_kind, g["noise_seconds"], s_env, fs),
                        profile.env_level)
        mix = Waveform(samples=rotor.samples + env.samples, fs=fs)
        rms_db = 20.0 * np.log10(mix.rms()) + 94.0
        name = f"noise_{i:04d}.wav"
        write_wav(out_dir / name, mix.samples, fs)
        rows.append((name, "noise", scenario, s_rotor, g["noise_seconds"], rms_db))
    for i in range(g["n_victim"]):
        s = int(rng.integers(2 ** 62))
        kind = "victim_cry" if i % 2 == 0 else "victim_shout"
        clip = gen_signal(kind, g["victim_seconds"], s, fs)
        name = f"victim_{i:04d}.wav"
        write_wav(out_dir / name, clip.samples, fs)
        rows.append((name, kind, scenario, s, g["victim_seconds"], profile.victim_level))
    with open(out_dir / "manifest.csv", "w", newline="") as fh:
        fh.write(MANIFEST_HEADER + "\n")
        for name, kind, scen, s, dur, rms_db in rows:
            fh.write(f"{name},{kind},{scen},{s},{dur:.3f},{rms_db:.6f}\n")
    print(f"wrote {len(rows)} clips to {out_dir}")
    return 0


def _rho_tag(rho: float) -> str:
    return f"{int(round(rho * 1000)):04d}"


def cmd_pretrain(cfg: dict, data_dir: Path, out_dir: Path) -> int:
    """Train one checkpoint per masking ratio; calibrate its trigger threshold."""
    mel_cfg = mel_config_from(cfg)
    train = cfg["train"]
    clips_rows = load_dataset_clips(data_dir, "noise")
    if not clips_rows:
        raise FileNotFoundError(f"no noise clips in {data_dir}")
    clips = [c for c, _ in clips_rows]
    scenario = clips_rows[0][1]["scenario"]
    for rho in train["rhos"]:
        mae_cfg = mae_config_from(cfg, mask_ratio=float(rho))
        params = mae.init_params(mae_cfg, seed=cfg["seed"])
        hyper = TrainConfig(lr=train["lr"], epochs=train["epochs"],
                            batch_size=train["batch_size"], seed=cfg["seed"])
        params, losses = mae.pretrain(params, clips, mae_cfg, mel_cfg, hyper)
        threshold = mae.calibrate_threshold(
            params, mae_cfg, mel_cfg, clips[:train["calibration_clips"]],
            margin=train["calibration_margin"], seed=cfg["seed"])
        tag = f"{scenario}_rho{_rho_tag(rho)}"
        ckpt = out_dir / f"mae_{tag}.ckpt"
        mae.save_checkpoint(ckpt, mae_cfg, params, threshold)
        with open(out_dir / f"loss_{tag}.csv", "w", newline="") as fh:
            fh.write("epoch,loss\n")
            for epoch, loss in enumerate(losses):
                fh.write(f"{epoch},{loss:.10f}\n")
        with open(out_dir / f"meta_{tag}.yaml", "w") as fh:
            yaml.safe_dump({
                "checkpoint": ckpt.name, "scenario": scenario, "rho": float(rho),
                "optimizer": train["optimizer"], "lr": train["lr"],
                "epochs": train["epochs"], "batch_size": train["batch_size"],
                "seed": cfg["seed"], "final_loss": float(losses[-1]),
                "threshold": float(threshold),
            }, fh, sort_keys=True)
        print(f"trained {ckpt.name}: loss {losses[0]:.4f} -> {losses[-1]:.4f}, "
              f"threshold {threshold:.4f}")
    return 0


def cmd_eval_detect(cfg: dict, checkpoint_dir: Path, out_dir: Path) -> int:
    """Detection accuracy sweep over altitude and masking ratio."""
    scenario = cfg["scenario"]
    profile = scenario_profile(scenario)
    mel_cfg = mel_config_from(cfg)
    altitudes = cfg["detect"]["altitudes"] or list(ALTITUDE_SWEEPS[scenario])
    n_trials = cfg["detect"]["n_trials"]
    seed = cfg["seed"]
    checkpoints = sorted(checkpoint_dir.glob(f"mae_{scenario}_rho*.ckpt"))
    if not checkpoints:
        raise FileNotFoundError(f"no {scenario} checkpoints in {checkpoint_dir}")
    lines = [DETECTION_HEADER]
    for ckpt in checkpoints:
        mae_cfg, params, threshold = mae.load_checkpoint(ckpt)
        detector = Detector(params=params, cfg=mae_cfg, mel_cfg=mel_cfg,
                            threshold=threshold)
        for h in altitudes:
            result = eval_detection(detector, profile, float(h), n_trials, seed)
            lines.append(f"{scenario},{h:g},{mae_cfg.mask_ratio:g},"
                         f"{result.accuracy:.4f},{n_trials},{seed}")
            print(lines[-1])
    (out_dir / "detection.csv").write_text("\n".join(lines) + "\n")
    return 0


def _fmt(value, spec=".6f") -> str:
    return "" if value is None else format(value, spec)


def cmd_mission(cfg: dict, checkpoint: Path, out_dir: Path) -> int:
    """Run one end-to-end mission and export the per-hover log."""
    scenario = cfg["scenario"]
    m = cfg["mission"]
    mel_cfg = mel_config_from(cfg)
    mae_cfg, params, stored_threshold = mae.load_checkpoint(checkpoint)
    threshold = m["threshold"]
    if threshold is None:
        threshold = stored_threshold if np.isfinite(stored_threshold) \
            else scenario_profile(scenario).threshold
    detector = Detector(params=params, cfg=mae_cfg, mel_cfg=mel_cfg,
                        threshold=float(threshold))
    mission_cfg = MissionConfig(
        profile=scenario_profile(scenario), altitude=m["altitude"],
        victim_position=tuple(m["victim"]), hover_spacing=m["hover_spacing"],
        mic_count=m["mic_count"], mic_radius=m["mic_radius"], v_s=m["v_s"],
        buffer_seconds=m["buffer_seconds"], tau_retro=m["tau_retro"],
        tau_post=m["tau_post"], victim_burst_period=m["burst_period"],
        victim_burst_len=m["burst_len"], victim_enabled=m["victim_enabled"],
        travel_seconds=m["travel_seconds"], seed=cfg["seed"])
    log = run_mission(mission_cfg, detector)
    lines = [MISSION_HEADER]
    for r in log.records:
        doa = r.doa if r.doa is not None else (None, None, None)
        fused = r.fused if r.fused is not None else (None, None, None)
        snr = "" if not np.isfinite(r.snr_db) else f"{r.snr_db:.3f}"
        lines.append(",".join([
            str(r.index), f"{r.position[0]:.3f}", f"{r.position[1]:.3f}",
            f"{r.position[2]:.3f}", snr, f"{r.score:.6f}",
            "1" if r.triggered else "0",
            _fmt(doa[0], ".9f"), _fmt(doa[1], ".9f"), _fmt(doa[2], ".9f"),
            _fmt(fused[0]), _fmt(fused[1]), _fmt(fused[2]), _fmt(r.loc_error),
        ]))
    (out_dir / "mission.csv").write_text("\n".join(lines) + "\n")
    errors = log.loc_errors()
    final = f"{errors[-1]:.3f} m" if errors else "n/a"
    print(f"{len(log.records)} hovers, {log.n_triggers} triggers, "
          f"final localization error {final}")
    return 0


# -- argument parsing ---------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML config overriding defaults")
    parser.add_argument("--seed", type=int, help="global RNG seed override")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--scenario", choices=("desert", "forest"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="acusar",
        description="Airborne acoustic victim detection and localization pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic audio dataset")
    _add_common(p)
    p.add_argument("--n-noise", type=int)
    p.add_argument("--n-victim", type=int)

    p = sub.add_parser("pretrain", help="train detector checkpoints")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset directory from gen")
    p.add_argument("--rhos", help="comma-separated masking ratios")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("eval-detect", help="detection accuracy sweep")
    _add_common(p)
    p.add_argument("--checkpoints", required=True, help="checkpoint directory")
    p.add_argument("--n-trials", type=int)
    p.add_argument("--altitudes", help="comma-separated altitudes in meters")

    p = sub.add_parser("mission", help="run one end-to-end mission")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--altitude", type=float)
    p.add_argument("--no-victim", action="store_true")
    return parser


def _apply_overrides(cfg: dict, args: argparse.Namespace) -> dict:
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.scenario:
        cfg["scenario"] = args.scenario
    if args.command == "gen":
        if args.n_noise is not None:
            cfg["gen"]["n_noise"] = args.n_noise
        if args.n_victim is not None:
            cfg["gen"]["n_victim"] = args.n_victim
    elif args.command == "pretrain":
        if args.rhos:
            cfg["train"]["rhos"] = [float(r) for r in args.rhos.split(",")]
        if args.epochs is not None:
            cfg["train"]["epochs"] = args.epochs
    elif args.command == "eval-detect":
        if args.n_trials is not None:
            cfg["detect"]["n_trials"] = args.n_trials
        if args.altitudes:
            cfg["detect"]["altitudes"] = [float(h) for h in args.altitudes.split(",")]
    elif args.command == "mission":
        if args.altitude is not None:
            cfg["mission"]["altitude"] = args.altitude
        if args.no_victim:
            cfg["mission"]["victim_enabled"] = False
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = _apply_overrides(load_config(args.config), args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out_dir, args.command)
    if args.command == "gen":
        return cmd_gen(cfg, out_dir)
    if args.command == "pretrain":
        return cmd_pretrain(cfg, Path(args.data), out_dir)
    if args.command == "eval-detect":
        return cmd_eval_detect(cfg, Path(args.checkpoints), out_dir)
    if args.command == "mission":
        return cmd_mission(cfg, Path(args.checkpoint), out_dir)
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
