"""JSON run configuration for the ``meo`` command.

The schema is documented in ``docs/config.md``. Unknown keys anywhere are
rejected, and errors name the offending key path.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .cost_model import BERT_BASE, BERT_LARGE, BERT_SMALL, ModelProfile, Variant
from .expert_bank import Activation, Placement
from .gating import GateLevel

__all__ = ["MODES", "ConfigError", "PRESETS", "RunConfig", "TrainSettings", "parse_config", "config_from_dict"]

MODES = ("bench", "flops", "equiv", "gradcheck", "train-toy")

DEFAULT_BENCH_PROFILE = ModelProfile(layers=1, d_model=256, d_ff=1024, seq_len=128, vocab=0,
                                     n_experts=32, m_selected=1, level=GateLevel.SEQUENCE,
                                     variant=Variant.MEO, r=64)
PRESETS = {
    "bench": DEFAULT_BENCH_PROFILE,
    "bert-small": BERT_SMALL,
    "bert-base": BERT_BASE,
    "bert-large": BERT_LARGE,
}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 500
    lr: float = 0.5
    classes: int = 4
    samples_per_class: int = 64
    d_in: int = 8
    separation: float = 3.0
    spread: float = 1.0
    n_experts: int = 8
    m: int = 2
    activation: Activation = Activation.IDENTITY
    placement: Placement = Placement.OUTSIDE

    def to_dict(self) -> dict:
        d = asdict(self)
        d["activation"] = self.activation.value
        d["placement"] = self.placement.value
        return d


@dataclass(frozen=True)
class RunConfig:
    mode: str
    profile: ModelProfile = DEFAULT_BENCH_PROFILE
    variants: tuple[Variant, ...] = ()
    m_sweep: tuple[int, ...] = (1, 2, 4, 8, 16)
    repeats: int = 10
    warmup: int = 3
    seed: int = 0
    precision: str = "f64"
    output_path: str | None = None
    renormalize: bool = True
    activation: Activation = Activation.GELU
    placement: Placement = Placement.OUTSIDE
    equiv_count: int = 50
    train: TrainSettings = field(default_factory=TrainSettings)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "profile": self.profile.to_dict(),
            "variants": [v.value for v in self.variants],
            "m_sweep": list(self.m_sweep),
            "repeats": self.repeats,
            "warmup": self.warmup,
            "seed": self.seed,
            "precision": self.precision,
            "output_path": self.output_path,
            "renormalize": self.renormalize,
            "activation": self.activation.value,
            "placement": self.placement.value,
            "equiv_count": self.equiv_count,
            "train": self.train.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _check_keys(obj, allowed, where: str):
    if not isinstance(obj, dict):
        raise ConfigError(where, f"expected an object, got {type(obj).__name__}")
    for key in obj:
        if key not in allowed:
            path = f"{where}.{key}" if where else key
            raise ConfigError(path, "unknown key")


def _int(value, key, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(key, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(key, f"must be >= {minimum}, got {value}")
    return value


def _float(value, key, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    if positive and value <= 0:
        raise ConfigError(key, f"must be > 0, got {value}")
    return float(value)


def _bool(value, key):
    if not isinstance(value, bool):
        raise ConfigError(key, f"expected true/false, got {value!r}")
    return value


def _enum(cls, value, key):
    try:
        return cls(value)
    except ValueError:
        choices = ", ".join(repr(c.value) for c in cls)
        raise ConfigError(key, f"expected one of {choices}, got {value!r}") from None


_PROFILE_INTS = {"layers": 0, "d_model": 1, "d_ff": 1, "seq_len": 1, "vocab": 0,
                 "n_experts": 1, "m_selected": 0, "r": 1}


def _profile(raw) -> ModelProfile:
    if isinstance(raw, str):
        if raw not in PRESETS:
            raise ConfigError("profile", f"unknown preset {raw!r}; choose from {sorted(PRESETS)}")
        return PRESETS[raw]
    allowed = {f.name for f in fields(ModelProfile)} | {"preset"}
    _check_keys(raw, allowed, "profile")
    base = DEFAULT_BENCH_PROFILE
    if "preset" in raw:
        if raw["preset"] not in PRESETS:
            raise ConfigError("profile.preset", f"unknown preset {raw['preset']!r}")
        base = PRESETS[raw["preset"]]
    values = base.to_dict()
    for key, minimum in _PROFILE_INTS.items():
        if key in raw:
            values[key] = _int(raw[key], f"profile.{key}", minimum)
    if "level" in raw:
        values["level"] = _enum(GateLevel, raw["level"], "profile.level")
    if "variant" in raw:
        values["variant"] = _enum(Variant, raw["variant"], "profile.variant")
    if values["m_selected"] > values["n_experts"]:
        raise ConfigError("profile.m_selected",
                          f"m_selected={values['m_selected']} exceeds n_experts={values['n_experts']}")
    return ModelProfile(**values)


def _train(raw) -> TrainSettings:
    _check_keys(raw, {f.name for f in fields(TrainSettings)}, "train")
    d = TrainSettings().to_dict()
    d.update(raw)
    out = TrainSettings(
        epochs=_int(d["epochs"], "train.epochs", 1),
        lr=_float(d["lr"], "train.lr", positive=True),
        classes=_int(d["classes"], "train.classes", 2),
        samples_per_class=_int(d["samples_per_class"], "train.samples_per_class", 1),
        d_in=_int(d["d_in"], "train.d_in", 1),
        separation=_float(d["separation"], "train.separation", positive=True),
        spread=_float(d["spread"], "train.spread", positive=True),
        n_experts=_int(d["n_experts"], "train.n_experts", 1),
        m=_int(d["m"], "train.m", 1),
        activation=_enum(Activation, d["activation"], "train.activation"),
        placement=_enum(Placement, d["placement"], "train.placement"),
    )
    if out.m > out.n_experts:
        raise ConfigError("train.m", f"m={out.m} exceeds n_experts={out.n_experts}")
    return out


_TOP_KEYS = {"mode", "profile", "variants", "m_sweep", "repeats", "warmup", "seed", "precision",
             "output_path", "renormalize", "activation", "placement", "equiv_count", "train"}


def config_from_dict(raw: dict, mode: str | None = None) -> RunConfig:
    """Validate a decoded JSON object; ``mode`` (from the command line) fills or must match ``raw['mode']``."""
    _check_keys(raw, _TOP_KEYS, "")
    file_mode = raw.get("mode")
    if file_mode is not None and mode is not None and file_mode != mode:
        raise ConfigError("mode", f"config says {file_mode!r} but {mode!r} was requested")
    mode = file_mode or mode
    if mode not in MODES:
        raise ConfigError("mode", f"expected one of {', '.join(MODES)}, got {mode!r}")

    profile = _profile(raw["profile"]) if "profile" in raw else DEFAULT_BENCH_PROFILE
    variants = raw.get("variants", [])
    if not isinstance(variants, list):
        raise ConfigError("variants", "expected a list")
    variants = tuple(_enum(Variant, v, f"variants[{i}]") for i, v in enumerate(variants))

    m_sweep = raw.get("m_sweep", [1, 2, 4, 8, 16] if mode == "bench" else [profile.m_selected])
    if not isinstance(m_sweep, list) or not m_sweep:
        raise ConfigError("m_sweep", "expected a nonempty list of integers")
    for i, m in enumerate(m_sweep):
        _int(m, f"m_sweep[{i}]", 0 if mode == "flops" else 1)
        if m > profile.n_experts:
            raise ConfigError(f"m_sweep[{i}]", f"value {m} exceeds n_experts={profile.n_experts}")

    repeats = _int(raw.get("repeats", 10), "repeats", 1)
    warmup = _int(raw.get("warmup", 3), "warmup", 0)
    if mode == "bench":
        if repeats < 3:
            raise ConfigError("repeats", f"bench needs at least 3 repeats, got {repeats}")
        if warmup < 3:
            raise ConfigError("warmup", f"bench needs at least 3 warmup iterations, got {warmup}")

    precision = raw.get("precision", "f32" if mode == "bench" else "f64")
    if precision not in ("f32", "f64"):
        raise ConfigError("precision", f"expected 'f32' or 'f64', got {precision!r}")
    if precision == "f32" and mode != "bench":
        raise ConfigError("precision", "single precision is only available in bench mode")

    output_path = raw.get("output_path")
    if output_path is not None and not isinstance(output_path, str):
        raise ConfigError("output_path", "expected a string or null")

    return RunConfig(
        mode=mode,
        profile=profile,
        variants=variants,
        m_sweep=tuple(m_sweep),
        repeats=repeats,
        warmup=warmup,
        seed=_int(raw.get("seed", 0), "seed", 0),
        precision=precision,
        output_path=output_path,
        renormalize=_bool(raw.get("renormalize", True), "renormalize"),
        activation=_enum(Activation, raw.get("activation", "gelu"), "activation"),
        placement=_enum(Placement, raw.get("placement", "out"), "placement"),
        equiv_count=_int(raw.get("equiv_count", 50), "equiv_count", 1),
        train=_train(raw.get("train", {})),
    )


def parse_config(path, mode: str | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("", f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return config_from_dict(raw, mode)
