"""
Configuration management for dualstr runs.

An INI file is read with ConfigParser and each section is validated by a
pydantic model. Unknown sections or keys are hard errors that name the
offending line, so a typo can never silently fall back to a default.
"""

import logging
import os
import re
from configparser import ConfigParser
from configparser import Error as ConfigParserError
from pathlib import Path
from typing import Any, ClassVar, Literal, Mapping, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic import model_validator

from dualstr.errors import ConfigError, ConfigKeyError
from dualstr.tokenizer import EVAL_CHARSET, TRAIN_CHARSET

logger = logging.getLogger(__name__)

CONFIG_ENV = "DUALSTR_CONFIG"

KeyLines = Mapping[tuple[str, Optional[str]], int]


class Section(BaseModel):
    """Base for one INI section."""

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    section: ClassVar[str]

    @classmethod
    def from_config(
        cls, parser: ConfigParser, lines: Optional[KeyLines] = None
    ) -> "Section":
        """Create the section from ConfigParser, or defaults when it is absent."""
        lines = lines or {}
        if not parser.has_section(cls.section):
            return cls()
        values: dict[str, Any] = {}
        for key, value in parser.items(cls.section, raw=True):
            if key in parser.defaults():
                continue
            if value is None or not value.strip():
                raise ConfigKeyError(
                    cls.section, key, "value is empty", lines.get((cls.section, key))
                )
            values[key] = value.strip()
        return cls.validated(values, lines)

    @classmethod
    def validated(
        cls, values: Mapping[str, Any], lines: Optional[KeyLines] = None
    ) -> "Section":
        lines = lines or {}
        try:
            return cls.model_validate(dict(values))
        except ValidationError as e:
            first = e.errors()[0]
            key = str(first["loc"][0]) if first["loc"] else None
            if first["type"] == "extra_forbidden":
                reason = "unknown key"
            else:
                reason = first["msg"]
            raise ConfigKeyError(cls.section, key, reason, lines.get((cls.section, key)))


def _int_list(value: Any) -> Any:
    if isinstance(value, str):
        return [int(part) for part in value.split(",") if part.strip()]
    return value


class ModelConfig(Section):
    """Encoder, decoder and sequence sizes."""

    section: ClassVar[str] = "model"

    image_h: int = Field(default=32, gt=0, description="Input image height in pixels")
    image_w: int = Field(default=128, gt=0, description="Input image width in pixels")
    patch: int = Field(default=8, gt=0, description="Square patch size")
    image_layers: int = Field(default=6, ge=1, description="Image encoder blocks")
    image_dim: int = Field(default=128, gt=0, description="Image encoder width")
    image_heads: int = Field(default=4, gt=0, description="Image encoder heads")
    text_layers: int = Field(default=4, ge=1, description="Text encoder blocks")
    text_dim: int = Field(default=128, gt=0, description="Text encoder width")
    text_heads: int = Field(default=4, gt=0, description="Text encoder heads")
    joint_dim: int = Field(default=128, gt=0, description="Joint feature width D")
    dec_depth: int = Field(default=1, ge=1, description="Decoder layers")
    dec_head_dim: int = Field(default=32, gt=0, description="Decoder per-head width")
    mlp_ratio: int = Field(default=4, gt=0, description="MLP hidden width multiplier")
    dropout: float = Field(default=0.1, ge=0.0, lt=1.0, description="Dropout rate")
    max_label_length: int = Field(
        default=25, ge=1, description="Longest label; the decoder has this + 1 rows"
    )
    text_length: int = Field(default=16, ge=3, description="Text encoder sequence length")
    init_seed: int = Field(default=0, ge=0, description="Weight initialization seed")

    @model_validator(mode="after")
    def _check_shapes(self) -> "ModelConfig":
        if self.image_h % self.patch:
            raise ValueError(f"image_h {self.image_h} is not divisible by patch {self.patch}")
        if self.image_w % self.patch:
            raise ValueError(f"image_w {self.image_w} is not divisible by patch {self.patch}")
        if self.image_dim % self.image_heads:
            raise ValueError("image_dim must be divisible by image_heads")
        if self.text_dim % self.text_heads:
            raise ValueError("text_dim must be divisible by text_heads")
        return self


class CharsetConfig(Section):
    section: ClassVar[str] = "charset"

    train_charset: str = Field(
        default=TRAIN_CHARSET, description="Ordered training characters (no duplicates)"
    )
    eval_charset: str = Field(
        default=EVAL_CHARSET, description="Lowercase evaluation characters"
    )

    @field_validator("train_charset", "eval_charset")
    @classmethod
    def _unique(cls, value: str) -> str:
        if len(set(value)) != len(value):
            raise ValueError("charset contains duplicate characters")
        return value


class MaskConfig(Section):
    section: ClassVar[str] = "masks"

    k: int = Field(default=6, ge=2, description="Masks per training step")
    mask_pairing: bool = Field(
        default=False, description="Follow each random permutation by its reverse"
    )
    per_sample_masks: bool = Field(
        default=False, description="Draw a mask set per sample instead of per batch"
    )


class FreezingConfig(Section):
    section: ClassVar[str] = "freezing"

    image_freeze_layers: int = Field(default=0, ge=0)
    text_freeze_layers: int = Field(
        default=2, ge=0, description="Defaults to half of the text encoder"
    )
    token_only: bool = Field(
        default=False, description="Text encoder contributes token embeddings only"
    )


class AdapterConfig(Section):
    section: ClassVar[str] = "adapter"

    mode: Literal["none", "residual_adapter", "ladder_side"] = Field(default="none")
    lam: float = Field(
        default=0.2, ge=0.0, le=1.0, alias="lambda", description="Residual ratio"
    )
    reduction: int = Field(default=4, description="Side network 1/r width (2, 4 or 8)")
    connected_layers: list[int] = Field(
        default_factory=lambda: [2, 4, 6],
        description="Image encoder blocks feeding the side network (1-based)",
    )
    text_connected_layers: list[int] = Field(
        default_factory=lambda: [2, 4],
        description="Text encoder blocks feeding the side network (1-based)",
    )

    @field_validator("connected_layers", "text_connected_layers", mode="before")
    @classmethod
    def _split_layers(cls, value: Any) -> Any:
        return _int_list(value)

    @field_validator("reduction")
    @classmethod
    def _check_reduction(cls, value: int) -> int:
        if value not in (2, 4, 8):
            raise ValueError("reduction must be 2, 4 or 8")
        return value


class OptimConfig(Section):
    section: ClassVar[str] = "optim"

    base_lr: float = Field(
        default=8.4e-5, gt=0, description="Encoder lr at lr_reference_batch"
    )
    lr_reference_batch: int = Field(default=512, gt=0)
    scratch_multiplier: float = Field(
        default=19.0, gt=0, description="Decoder and adapter lr multiplier"
    )
    weight_decay: float = Field(default=0.2, ge=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    warmup_fraction: float = Field(default=0.075, gt=0, lt=1)
    total_steps: Optional[int] = Field(default=None, gt=0)
    batch: Optional[int] = Field(default=None, gt=0)
    accum_steps: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check_batch(self) -> "OptimConfig":
        if self.batch is not None and self.batch % self.accum_steps:
            raise ValueError(
                f"batch {self.batch} is not a multiple of accum_steps {self.accum_steps}"
            )
        return self

    @property
    def encoder_peak_lr(self) -> float:
        batch = self.batch if self.batch is not None else self.lr_reference_batch
        return self.base_lr * batch / self.lr_reference_batch

    @property
    def scratch_peak_lr(self) -> float:
        return self.encoder_peak_lr * self.scratch_multiplier


class TrainConfig(Section):
    section: ClassVar[str] = "train"

    seed: int = Field(default=0, ge=0)
    log_every: int = Field(default=50, ge=1)
    eval_every: int = Field(default=0, ge=0, description="0 evaluates only at the end")
    checkpoint_every: int = Field(default=0, ge=0, description="0 saves only at the end")
    augment: bool = Field(default=True)
    teacher_force_text: bool = Field(
        default=False, description="Feed ground truth instead of the visual prediction"
    )


class DecodeConfig(Section):
    section: ClassVar[str] = "decode"

    refine_iters: int = Field(default=1, ge=0)
    fast_cross: bool = Field(default=False)
    refine_visual_context: Literal["visual", "cross"] = Field(default="cross")


SECTIONS: dict[str, type[Section]] = {
    cls.section: cls
    for cls in (
        ModelConfig,
        CharsetConfig,
        MaskConfig,
        FreezingConfig,
        AdapterConfig,
        OptimConfig,
        TrainConfig,
        DecodeConfig,
    )
}


class RunConfig(BaseModel):
    """All sections of a run."""

    model_config = ConfigDict(frozen=True)

    model: ModelConfig = Field(default_factory=ModelConfig)
    charset: CharsetConfig = Field(default_factory=CharsetConfig)
    masks: MaskConfig = Field(default_factory=MaskConfig)
    freezing: FreezingConfig = Field(default_factory=FreezingConfig)
    adapter: AdapterConfig = Field(default_factory=AdapterConfig)
    optim: OptimConfig = Field(default_factory=OptimConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    decode: DecodeConfig = Field(default_factory=DecodeConfig)

    @classmethod
    def from_config(
        cls, parser: ConfigParser, lines: Optional[KeyLines] = None
    ) -> "RunConfig":
        lines = lines or {}
        for name in parser.sections():
            if name not in SECTIONS:
                raise ConfigKeyError(name, None, "unknown section", lines.get((name, None)))
        return cls(**{name: s.from_config(parser, lines) for name, s in SECTIONS.items()})

    def snapshot(self) -> dict[str, dict[str, Any]]:
        """JSON-serializable form, embedded in checkpoints."""
        return {
            name: getattr(self, name).model_dump(mode="json", by_alias=True)
            for name in SECTIONS
        }

    @classmethod
    def from_snapshot(cls, snapshot: Mapping[str, Mapping[str, Any]]) -> "RunConfig":
        sections = {}
        for name, values in snapshot.items():
            if name not in SECTIONS:
                raise ConfigKeyError(name, None, "unknown section in snapshot")
            sections[name] = SECTIONS[name].validated(values)
        return cls(**sections)

    def with_overrides(self, **sections: Mapping[str, Any]) -> "RunConfig":
        """Copy with some keys replaced, e.g. with_overrides(optim={"batch": 8})."""
        snap = self.snapshot()
        for name, values in sections.items():
            snap[name] = {**snap[name], **values}
        return RunConfig.from_snapshot(snap)


def find_config_file() -> Path:
    """Find the configuration file in multiple possible locations"""
    # Try environment variable first
    if config_env := os.getenv(CONFIG_ENV):
        return Path(config_env)

    possible_paths = [
        Path(__file__).parent / "config.ini",
        Path.cwd() / "config.ini",
        Path.home() / ".config" / "dualstr" / "config.ini",
    ]
    for path in possible_paths:
        if path.exists():
            return path

    raise ConfigError(
        f"Config file not found. Searched in: {', '.join(str(p) for p in possible_paths)}"
    )


def packaged_config(name: str = "desk") -> Path:
    """Path of a recipe shipped under dualstr/configs."""
    return Path(__file__).parent / "configs" / f"{name}.ini"


def key_lines(text: str) -> dict[tuple[str, Optional[str]], int]:
    """1-based line numbers of every section header and key."""
    found: dict[tuple[str, Optional[str]], int] = {}
    section: Optional[str] = None
    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            found.setdefault((section, None), number)
        elif section is not None and raw[:1] not in (" ", "\t"):
            key = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
            found.setdefault((section, key), number)
    return found


def load_config(path: Optional[Path] = None) -> tuple[ConfigParser, KeyLines]:
    """Read the configuration file and return the parser and key line numbers."""
    config_path = Path(path) if path is not None else find_config_file()
    logger.info(f"Using config file at {config_path}")
    try:
        text = config_path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read config file {config_path}: {e}")
    parser = ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=str(config_path))
    except ConfigParserError as e:
        line = getattr(e, "lineno", None)
        section = getattr(e, "section", None) or "?"
        key = getattr(e, "option", None)
        raise ConfigKeyError(section, key, e.message.splitlines()[0], line)
    return parser, key_lines(text)


def load_run_config(
    path: Optional[Path] = None,
    required: Sequence[tuple[str, str]] = (),
) -> RunConfig:
    """Load and validate a run configuration.

    `required` lists (section, key) pairs that must appear in the file.
    """
    parser, lines = load_config(path)
    for section, key in required:
        if not parser.has_option(section, key):
            raise ConfigKeyError(
                section, key, "required key is missing", lines.get((section, None))
            )
    config = RunConfig.from_config(parser, lines)
    logger.debug(f"Loaded configuration: {config.snapshot()}")
    return config
