"""Plain-text ``key = value`` pipeline configuration.

Blank lines and ``#`` comments are ignored. Keys are listed in
:data:`SCHEMA`; anything else is rejected with its line number. List values
are comma separated. See docs/formats.md for the full schema.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from .classify import DEFAULT_GRID, NORMS
from .graph import QuantizerConfig
from .net import NetworkConfig, TrainConfig
from .sax import SaxParams

OUTPUT_DIR_ENV = "DECONVSAX_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


SCHEMA = {
    # network
    "filters1": int,
    "filters2": int,
    "pool_w": int,
    "tie_weights": _bool,
    "final_activation": str,
    # training
    "learning_rate": float,
    "rho": float,
    "epsilon": float,
    "epochs": int,
    "batch_size": int,
    "seed": int,
    # features and classification
    "sax": _ints,
    "grid.n": _ints,
    "grid.w": _ints,
    "grid.a": _ints,
    "grid.C": _floats,
    "norm": str,
    "workers": int,
    # graphs
    "Q": int,
    "quantizer": str,
    # outputs
    "output_dir": str,
}

NET_KEYS = ("filters1", "filters2", "pool_w", "tie_weights", "final_activation")
TRAIN_KEYS = ("learning_rate", "rho", "epsilon", "epochs", "batch_size", "seed")


@dataclass
class PipelineConfig:
    values: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "PipelineConfig":
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, raw = (p.strip() for p in line.partition("="))
            if not sep or not key:
                raise ConfigError(f"{source}:{lineno}: expected key = value")
            if key not in SCHEMA:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
            try:
                values[key] = SCHEMA[key](raw)
            except ValueError as exc:
                raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from exc
        cfg = cls(values)
        cfg.validate(source)
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
        return cls.parse(text, str(path))

    def override(self, **flags) -> "PipelineConfig":
        """Flags win over file values; ``None`` means "not given"."""
        merged = dict(self.values)
        merged.update({k: v for k, v in flags.items() if v is not None})
        cfg = PipelineConfig(merged)
        cfg.validate("flags")
        return cfg

    def validate(self, source: str) -> None:
        try:
            self.train_config()
            NetworkConfig(1, 1, **self._net_kw())
            if "sax" in self.values:
                self.sax_params()
            self.quantizer()
            if self.values.get("norm", "hellinger") not in NORMS:
                raise ValueError(f"norm must be one of {NORMS}")
            if self.values.get("workers", 1) < 1:
                raise ValueError("workers must be >= 1")
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: {exc}") from exc

    def _net_kw(self) -> dict:
        return {k: self.values[k] for k in NET_KEYS if k in self.values}

    def network(self, channels: int, length: int) -> NetworkConfig:
        return NetworkConfig(channels, length, **self._net_kw())

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{k: self.values[k] for k in TRAIN_KEYS if k in self.values})

    def sax_params(self) -> SaxParams | None:
        if "sax" not in self.values:
            return None
        v = self.values["sax"]
        if len(v) != 3:
            raise ValueError("sax must be n,w,a")
        return SaxParams(*v)

    def grid(self) -> dict:
        return {k: tuple(self.values.get(f"grid.{k}", DEFAULT_GRID[k])) for k in DEFAULT_GRID}

    def quantizer(self) -> QuantizerConfig:
        return QuantizerConfig(self.values.get("Q", 10), self.values.get("quantizer", "gaussian"))

    @property
    def seed(self) -> int:
        return self.values.get("seed", 0)

    @property
    def norm(self) -> str:
        return self.values.get("norm", "hellinger")

    @property
    def workers(self) -> int:
        return self.values.get("workers", 1)

    def output_dir(self) -> Path | None:
        env = os.environ.get(OUTPUT_DIR_ENV)
        if env:
            return Path(env)
        return Path(self.values["output_dir"]) if "output_dir" in self.values else None

    def resolve(self, path) -> Path:
        """Relative output paths land under the output directory, if one is set."""
        path = Path(path)
        base = self.output_dir()
        if base is None or path.is_absolute():
            return path
        return base / path
