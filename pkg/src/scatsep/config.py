"""Run configuration: an INI file of sections plus command-line overrides.

Example::

    [features]
    mode = scatt2
    Q = 32
    J1 = 5

    [nmf]
    q = 400
    q2 = 1000
    sparsity = 0.1

    [neural]
    arch = cqt-dnn
    epochs = 50

Unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .pipeline import FeatureSettings, NmfSettings


@dataclass(frozen=True)
class NeuralSettings:
    arch: str = "cqt-dnn"
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 128
    epochs: int = 50
    seed: int = 0
    branch_width: int = 128
    max_mixtures: int = 0  # 0 = all cross-source pairs


@dataclass(frozen=True)
class PathSettings:
    manifest: str = ""
    model_dir: str = "models"
    out_dir: str = "out"


@dataclass(frozen=True)
class RunConfig:
    features: FeatureSettings = field(default_factory=FeatureSettings)
    nmf: NmfSettings = field(default_factory=NmfSettings)
    neural: NeuralSettings = field(default_factory=NeuralSettings)
    paths: PathSettings = field(default_factory=PathSettings)

    def replace(self, section: str, **changes) -> "RunConfig":
        current = getattr(self, section)
        return dataclasses.replace(self, **{section: dataclasses.replace(current, **changes)})


def _convert(section: str, key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ValueError(f"[{section}] {key}: cannot parse {raw!r}") from exc
    return raw.strip()


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep Q / J1 case
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ValueError(f"{source}: {exc}") from exc
    cfg = RunConfig()
    for section in parser.sections():
        if section not in {f.name for f in dataclasses.fields(RunConfig)}:
            raise ValueError(f"{source}: unknown section [{section}]")
        current = getattr(cfg, section)
        defaults = {f.name: getattr(current, f.name) for f in dataclasses.fields(current)}
        changes = {}
        for key, raw in parser.items(section):
            if key not in defaults:
                raise ValueError(f"{source}: unknown key {key!r} in [{section}]")
            changes[key] = _convert(section, key, raw, defaults[key])
        cfg = cfg.replace(section, **changes)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} does not exist")
    return parse_config(path.read_text(), str(path))
