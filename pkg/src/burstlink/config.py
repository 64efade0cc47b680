"""Plain-text ``key = value`` configuration files.

One flat namespace per file; ``#`` starts a comment. Lists are
comma-separated, ``inf`` is accepted for the unbounded SNR and coherence
settings. The same format serves frame configs, channel profiles, and whole
sweep specifications.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .channel import ChannelProfile
from .framing import FrameConfig
from .sync import DetectorConfig
from .waveform import PulseShapeConfig


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines into a string dict."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def format_kv(pairs: dict[str, object]) -> str:
    lines = []
    for key, value in pairs.items():
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def _as_float(value: str) -> float:
    if value.lower() in ("inf", "infinite", "infinity"):
        return math.inf
    return float(value)


def _as_int_list(value: str) -> tuple[int, ...]:
    return tuple(int(v.strip()) for v in value.split(",") if v.strip())


_FRAME_KEYS = {
    "pilot_reps": int,
    "modulation": int,
    "payload_symbols": int,
    "pilot_block_len": int,
    "training_rep_len": int,
    "training_reps": int,
    "golay_len": int,
    "crc_bits": int,
}

_CHANNEL_KEYS = {
    "cfo_hz": ("delta_f_hz", _as_float),
    "drift_hz_per_s": ("drift_hz_per_s", _as_float),
    "theta_in_rad": ("theta_in_rad", _as_float),
    "snr_db": ("snr_db", _as_float),
    "coherence_symbols": ("coherence_symbols", _as_float),
    "fading": ("fading", str),
    "rician_k": ("rician_k", _as_float),
    "freq_walk_std_hz": ("freq_walk_std_hz", _as_float),
    "delay_spread_s": ("delay_spread_s", _as_float),
    "channel_seed": ("seed", int),
}


def frame_config_from_kv(kv: dict[str, str], defaults: FrameConfig | None = None) -> FrameConfig:
    base = {
        "pilot_reps": defaults.pilot_reps if defaults else 1,
        "modulation": defaults.modulation if defaults else 4,
    }
    if defaults is not None:
        for name in _FRAME_KEYS:
            base[name] = getattr(defaults, name)
    for name, conv in _FRAME_KEYS.items():
        if name in kv:
            base[name] = conv(kv[name])
    return FrameConfig(**base)


def frame_config_to_kv(cfg: FrameConfig) -> dict[str, object]:
    return {name: getattr(cfg, name) for name in _FRAME_KEYS}


def channel_profile_from_kv(kv: dict[str, str]) -> ChannelProfile:
    args = {}
    for key, (attr, conv) in _CHANNEL_KEYS.items():
        if key in kv:
            args[attr] = conv(kv[key])
    profile = ChannelProfile(**args)
    if math.isfinite(profile.coherence_symbols):
        profile = ChannelProfile(
            **{**args, "coherence_symbols": int(profile.coherence_symbols)}
        )
    return profile


def channel_profile_to_kv(profile: ChannelProfile) -> dict[str, object]:
    return {
        "cfo_hz": profile.delta_f_hz,
        "drift_hz_per_s": profile.drift_hz_per_s,
        "theta_in_rad": profile.theta_in_rad,
        "snr_db": profile.snr_db,
        "coherence_symbols": profile.coherence_symbols,
        "fading": profile.fading,
        "rician_k": profile.rician_k,
        "freq_walk_std_hz": profile.freq_walk_std_hz,
        "delay_spread_s": profile.delay_spread_s,
        "channel_seed": profile.seed,
    }


@dataclass(frozen=True)
class SweepSpec:
    """A full experiment grid: pilot repetitions x modulations x profiles."""

    lambda_list: tuple[int, ...] = (1, 2, 4, 6, 8)
    modulations: tuple[int, ...] = (4, 8, 16, 64)
    profiles: tuple[ChannelProfile, ...] = (ChannelProfile(),)
    frames_per_trial: int = 50
    trials_per_cell: int = 3
    master_seed: int = 0
    symbol_period_s: float = 1e-6
    frame_template: FrameConfig | None = None
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    pulse: PulseShapeConfig = field(default_factory=PulseShapeConfig)

    def __post_init__(self) -> None:
        if not self.lambda_list or not self.modulations or not self.profiles:
            raise ValueError("sweep lists must be nonempty")
        if self.frames_per_trial < 1:
            raise ValueError("frames_per_trial must be >= 1")
        if self.trials_per_cell < 1:
            raise ValueError("trials_per_cell must be >= 1")

    def frame_config(self, pilot_reps: int, modulation: int) -> FrameConfig:
        base = self.frame_template
        if base is None:
            return FrameConfig(pilot_reps=pilot_reps, modulation=modulation)
        return FrameConfig(
            pilot_reps=pilot_reps,
            modulation=modulation,
            payload_symbols=base.payload_symbols,
            pilot_block_len=base.pilot_block_len,
            training_rep_len=base.training_rep_len,
            training_reps=base.training_reps,
            golay_len=base.golay_len,
            crc_bits=base.crc_bits,
        )

    @property
    def cell_count(self) -> int:
        return (
            len(self.lambda_list)
            * len(self.modulations)
            * len(self.profiles)
            * self.trials_per_cell
        )


def sweep_spec_from_text(text: str) -> SweepSpec:
    kv = parse_kv_text(text)
    profile = channel_profile_from_kv(kv)
    template = None
    if any(k in kv for k in _FRAME_KEYS if k not in ("pilot_reps", "modulation")):
        template = frame_config_from_kv(
            {k: v for k, v in kv.items() if k not in ("pilot_reps", "modulation")},
            defaults=FrameConfig(pilot_reps=1, modulation=4),
        )
    det_args = {}
    if "rho_threshold" in kv:
        det_args["rho_threshold"] = float(kv["rho_threshold"])
    if "mf_threshold_factor" in kv:
        det_args["mf_threshold_factor"] = float(kv["mf_threshold_factor"])
    return SweepSpec(
        lambda_list=_as_int_list(kv["lambda_list"]) if "lambda_list" in kv else (1, 2, 4, 6, 8),
        modulations=_as_int_list(kv["modulations"]) if "modulations" in kv else (4, 8, 16, 64),
        profiles=(profile,),
        frames_per_trial=int(kv.get("frames_per_trial", 50)),
        trials_per_cell=int(kv.get("trials_per_cell", 3)),
        master_seed=int(kv.get("master_seed", 0)),
        symbol_period_s=float(kv.get("symbol_period_s", 1e-6)),
        frame_template=template,
        detector=DetectorConfig(**det_args),
    )


def sweep_spec_to_text(spec: SweepSpec) -> str:
    if len(spec.profiles) != 1:
        raise ValueError("only single-profile sweeps serialize to one config file")
    pairs: dict[str, object] = {
        "lambda_list": spec.lambda_list,
        "modulations": spec.modulations,
        "frames_per_trial": spec.frames_per_trial,
        "trials_per_cell": spec.trials_per_cell,
        "master_seed": spec.master_seed,
        "symbol_period_s": spec.symbol_period_s,
    }
    pairs.update(channel_profile_to_kv(spec.profiles[0]))
    if spec.frame_template is not None:
        frame_kv = frame_config_to_kv(spec.frame_template)
        frame_kv.pop("pilot_reps")
        frame_kv.pop("modulation")
        pairs.update(frame_kv)
    pairs["rho_threshold"] = spec.detector.rho_threshold
    pairs["mf_threshold_factor"] = spec.detector.mf_threshold_factor
    return format_kv(pairs)


def load_sweep_config(path: str) -> SweepSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return sweep_spec_from_text(fh.read())


def save_sweep_config(spec: SweepSpec, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(sweep_spec_to_text(spec))
