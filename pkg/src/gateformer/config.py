"""Run configuration: schema-validated INI sections plus flag overrides.

A config file has [data] / [model] / [gate] / [train] / [synth] sections of
key=value pairs; every key is validated against the schema below and unknown
sections or keys are rejected before any work starts. Command-line overrides
(``--set section.key=value`` or dedicated flags) win over the file. The
fingerprint of the resolved config is stamped into every emitted table so
results stay traceable to the exact settings that produced them.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


@dataclass
class DataConfig:
    news: str = "news.tsv"
    behaviors: str = "behaviors.tsv"
    vocab: str = "vocab.txt"
    l_max: int = 30
    n_max: int = 50
    k_neg: int = 4
    title_only: bool = False
    val_fraction: float = 0.2


@dataclass
class ModelConfig:
    d: int = 64
    layers: int = 2
    heads: int = 4
    max_positions: int = 0  # 0 = derived from n_max * l_max


@dataclass
class GateConfig:
    k: int = 3
    window: int = 1
    filters: int = 32
    user_encoder: str = "lstm"
    granularity: str = "token"
    method: str = "learned"


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    peak_lr: float = 1e-3
    warmup: int = 100
    seed: int = 0
    log_interval: int = 50
    eval_interval: int = 200
    clip_norm: float = 0.0
    threads: int = 1


@dataclass
class SynthConfig:
    users: int = 160
    items: int = 320
    topics: int = 8
    tokens_per_item: int = 30
    policy: str = "random"
    signals: int = 2
    distractors: int = 2
    filler_pool: int = 120
    history_len: int = 6
    impressions_per_user: int = 4
    noise: float = 0.0
    val_fraction: float = 0.25


_CHOICES = {
    ("gate", "user_encoder"): ("lstm", "attn"),
    ("gate", "granularity"): ("token", "word"),
    ("gate", "method"): ("learned", "first", "bm25", "random"),
    ("synth", "policy"): ("front", "random", "back"),
}

_SECTIONS = {
    "data": DataConfig,
    "model": ModelConfig,
    "gate": GateConfig,
    "train": TrainConfig,
    "synth": SynthConfig,
}


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    gate: GateConfig = field(default_factory=GateConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def apply(self, section: str, key: str, raw: str) -> None:
        """Set one value from its string form, validating name and type."""
        if section not in _SECTIONS:
            raise ValueError(f"unknown config section: [{section}]")
        target = getattr(self, section)
        spec = {f.name: f.type for f in fields(target)}
        if key not in spec:
            raise ValueError(f"unknown config key: {section}.{key}")
        current = getattr(target, key)
        if isinstance(current, bool):
            value = _bool(raw)
        elif isinstance(current, int):
            value = int(raw)
        elif isinstance(current, float):
            value = float(raw)
        else:
            value = raw.strip()
        choices = _CHOICES.get((section, key))
        if choices and value not in choices:
            raise ValueError(
                f"{section}.{key} must be one of {choices}, got {value!r}"
            )
        setattr(target, key, value)

    def items(self) -> list[tuple[str, str, object]]:
        out = []
        for section in sorted(_SECTIONS):
            target = getattr(self, section)
            for f in sorted(fields(target), key=lambda f: f.name):
                out.append((section, f.name, getattr(target, f.name)))
        return out

    def fingerprint(self) -> str:
        canon = "\n".join(f"{s}.{k}={v!r}" for s, k, v in self.items())
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]

    def dump(self, path) -> None:
        """Canonical INI: sorted sections and keys, no comments."""
        lines = []
        current = None
        for section, key, value in self.items():
            if section != current:
                if current is not None:
                    lines.append("")
                lines.append(f"[{section}]")
                current = section
            lines.append(f"{key} = {value}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @property
    def max_positions(self) -> int:
        if self.model.max_positions > 0:
            return self.model.max_positions
        return max(self.data.l_max, self.data.n_max * self.data.l_max)


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    """Defaults, then the INI file, then ``section.key=value`` overrides."""
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise FileNotFoundError(f"config file not found: {path}")
        for section in parser.sections():
            for key, raw in parser.items(section):
                cfg.apply(section, key, raw)
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"override must look like section.key=value: {item!r}")
        dotted, raw = item.split("=", 1)
        if "." not in dotted:
            raise ValueError(f"override must look like section.key=value: {item!r}")
        section, key = dotted.split(".", 1)
        cfg.apply(section.strip(), key.strip(), raw)
    return cfg
