"""Model/run configuration and its `key=value` file format.

Unknown keys are rejected rather than ignored: silent typos in experiment
configs are worse than a hard failure.  Blank lines and `#` comments are
allowed.  ``config_lines`` renders the full effective config (defaults
included) so every run can echo exactly what it used.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .errors import ConfigError

ALGEBRAS = ("quaternion", "real_mirror")
IMAGE_ENCODERS = ("builtin_qcnn", "external_features")


@dataclass
class ModelConfig:
    variant: int = 1
    algebra: str = "quaternion"
    seed: int = 1
    embed_dim: int = 100
    max_len: int = 150
    conv_filters: int = 128
    conv_width: int = 5
    common_dim: int = 16
    image_encoder: str = "builtin_qcnn"
    image_filters1: int = 8
    image_filters2: int = 16
    feature_dim: int = 2048
    dropout: float = 0.35
    lr: float = 1e-3
    epochs: int = 20
    batch: int = 128
    embeddings: str = ""

    @property
    def embed_units(self):
        """Quaternions per token position.

        Embedding rows are zero-padded with 4 - (d mod 4) zeros (always at
        least one), so the default 100 becomes 104 reals = 26 quaternions.
        """
        return self.embed_dim // 4 + 1

    @property
    def feature_units(self):
        return self.feature_dim // 4

    def validate(self):
        if self.variant not in range(1, 8):
            raise ConfigError(f"variant must be 1..7, got {self.variant}")
        if self.algebra not in ALGEBRAS:
            raise ConfigError(f"algebra must be one of {ALGEBRAS}, got {self.algebra!r}")
        if self.image_encoder not in IMAGE_ENCODERS:
            raise ConfigError(
                f"image_encoder must be one of {IMAGE_ENCODERS}, got {self.image_encoder!r}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.feature_dim % 4 != 0:
            raise ConfigError(f"feature_dim must be divisible by 4, got {self.feature_dim}")
        for key in (
            "embed_dim", "max_len", "conv_filters", "conv_width", "common_dim",
            "image_filters1", "image_filters2", "batch",
        ):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        return self


_FIELD_TYPES = {f.name: f.type for f in fields(ModelConfig)}


def _convert(key, raw):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"config key {key}: cannot parse {raw!r} as {kind}") from None


def parse_config(text, base=None):
    """Parse `key=value` lines into a ModelConfig, starting from defaults."""
    cfg = base if base is not None else ModelConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        cfg = replace(cfg, **{key: _convert(key, raw)})
    return cfg.validate()


def load_config(path, base=None):
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read(), base=base)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def config_lines(cfg):
    """Render every field as key=value, the run's effective-config echo."""
    return [f"{f.name}={getattr(cfg, f.name)}" for f in fields(ModelConfig)]
