import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, Field, field_validator, model_validator

from pyvolseg.converters.weight_maps import WeightScheme
from pyvolseg.errors import BadConfig


class OptimizerKind(enum.Enum):
    sgd = "sgd"
    adam = "adam"


class SynthConfig(BaseModel):
    """
    Parameters of the synthetic nearest-seed cell volumes.
    """

    dims: tuple[int, int, int] = (16, 64, 64)
    seeds_per_slice: int = Field(8, ge=2)
    thickness: float = Field(2.0, ge=1.0)
    """Wall width in pixels, measured across the bisector of the two nearest seeds."""
    class_mode: Literal["four_class", "binary"] = "four_class"
    style: Literal["source", "target"] = "source"
    noise_sigma: float = Field(0.05, ge=0.0)
    seed: int = Field(42, ge=0)

    @field_validator("dims", mode="before")
    @classmethod
    def _split_dims(cls, value: Any) -> Any:
        if isinstance(value, str):
            return tuple(int(part) for part in value.split(","))
        return value

    @field_validator("dims")
    @classmethod
    def _positive_dims(cls, value: tuple[int, int, int]) -> tuple[int, int, int]:
        if min(value) < 1:
            raise ValueError(f"Volume dims must be positive, got {value}")
        return value

    @property
    def num_classes(self) -> int:
        return 4 if self.class_mode == "four_class" else 2


class TrainConfig(BaseModel):
    """
    Full description of a supervised training or fine-tuning run.
    """

    images: Path
    labels: Path
    weights: Path | None = None
    out: Path
    base_checkpoint: Path | None = None
    """Pretrained network for fine-tuning; a fresh one is built when absent."""
    scheme: WeightScheme = WeightScheme.entropy
    ratio: float = Field(10.0, gt=0.0)
    window: int = Field(5, ge=1)
    sigma: float = Field(10.0, gt=0.0)
    floor: float = Field(0.05, ge=0.0, lt=1.0)
    classes: int = Field(4, ge=2)
    boundary_class: int = Field(1, ge=0)
    depth: int = Field(3, ge=1)
    base_channels: int = Field(16, ge=1)
    batch: int = Field(2, ge=1)
    crop: int = Field(64, ge=1)
    iters: int = Field(120, ge=0)
    """Epochs over the training slices."""
    steps_per_epoch: int | None = Field(None, ge=1)
    """Overrides ceil(train pixels / batch crop pixels)."""
    lr: float = Field(1e-4, gt=0.0)
    opt: OptimizerKind = OptimizerKind.adam
    seed: int = Field(42, ge=0)
    jitter: bool = False
    jitter_epochs: int = Field(10, ge=0)
    """Length of the appended jitter phase of fine-tuning."""
    val_frac: float = Field(0.1, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def _crop_fits_depth(self) -> "TrainConfig":
        factor = 2 ** (self.depth - 1)
        if self.crop % factor != 0:
            raise ValueError(f"Crop size {self.crop} must be divisible by {factor} for depth {self.depth}")
        return self


class AdaptConfig(BaseModel):
    """
    Unsupervised adversarial adaptation of a pretrained binary segmentation network.

    Only the path of the target images is part of the configuration; target
    labels never enter the training loop.
    """

    images: Path
    """Source images."""
    labels: Path
    """Source labels."""
    target_images: Path
    base_checkpoint: Path
    out: Path
    disc_lr: float = Field(1e-4, gt=0.0)
    gen_lr: float = Field(1e-4, gt=0.0)
    steps_per_epoch: int = Field(20, ge=1)
    epochs: int = Field(5, ge=0)
    d_steps: int = Field(1, ge=1)
    g_steps: int = Field(1, ge=1)
    opt: OptimizerKind = OptimizerKind.adam
    batch: int = Field(2, ge=1)
    crop: int = Field(64, ge=16)
    boundary_class: int = Field(1, ge=0)
    jitter: bool = False
    val_frac: float = Field(0.1, ge=0.0, lt=1.0)
    disc_slope: float = Field(0.2, gt=0.0, lt=1.0)
    """Negative slope of the discriminator LeakyReLUs."""
    probe_crops: int = Field(8, ge=1)
    seed: int = Field(42, ge=0)


class WeightsConfig(BaseModel):
    """Raw (un-normalized) weight maps of a label volume."""

    labels: Path
    out: Path
    scheme: WeightScheme = WeightScheme.entropy
    ratio: float = Field(10.0, gt=0.0)
    window: int = Field(5, ge=1)
    sigma: float = Field(10.0, gt=0.0)
    boundary_class: int = Field(1, ge=0)


class PredictConfig(BaseModel):
    images: Path
    base_checkpoint: Path
    out: Path


class EvalConfig(BaseModel):
    images: Path
    labels: Path
    base_checkpoint: Path
    out: Path
    boundary_class: int = Field(1, ge=0)


class GradCheckConfig(BaseModel):
    seed: int = Field(42, ge=0)
    out: Path = Path(".")


class CommandArgs(BaseModel):
    command: str
    config_path: Path | None
    overrides: dict[str, Any]


def read_key_values(path: Path) -> dict[str, str]:
    """Parse a key=value file; blank lines and '#' comments are ignored."""
    values: dict[str, str] = {}
    for number, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise BadConfig(f"{path}:{number}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, enum.Enum):
        return str(value.value)
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


@dataclass
class RunManifest:
    command: str
    config: BaseModel
    extras: dict[str, Any] = field(default_factory=dict)
    """Run settings that live outside the configuration model."""

    def to_string(self) -> str:
        lines = [f"command={self.command}"]
        lines += [f"{key}={_format_value(value)}" for key, value in self.extras.items()]
        for key, value in self.config.model_dump().items():
            if value is None:
                continue
            lines.append(f"{key}={_format_value(value)}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: Path) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "manifest.txt"
        path.write_text(self.to_string())
        return path
