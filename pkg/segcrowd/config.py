"""
SegCrowd - Configuration Module

Single source of truth for all pipeline parameters.
Dataclass tree, persisted as YAML, overridable by dotted keys.

Precedence (lowest first): dataclass defaults, SEGCROWD_SEED environment
variable (seed fields only), YAML config file, command-line flags.
"""

from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any, Optional
import copy

import yaml

from .errors import ConfigError


BORDER_MODES = ("renormalize", "clip")


@dataclass
class GroundTruthConfig:
    """
    Ground-truth generation: Gaussian density maps, ones-template
    segmentation maps and the count quantization table.
    """
    kernel_size: int = 15          # Gaussian window (pixels)
    sigma: float = 4.0             # isotropic std (pixels)
    template_size: int = 15        # ones template for segmentation GT
    border_mode: str = "renormalize"
    num_classes: int = 5           # count groups K

    def validate(self) -> list[str]:
        issues = []
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            issues.append(f"groundtruth.kernel_size must be odd and positive, got {self.kernel_size}")
        if self.template_size < 1 or self.template_size % 2 == 0:
            issues.append(f"groundtruth.template_size must be odd and positive, got {self.template_size}")
        if self.sigma <= 0:
            issues.append(f"groundtruth.sigma must be > 0, got {self.sigma}")
        if self.border_mode not in BORDER_MODES:
            issues.append(f"groundtruth.border_mode must be one of {BORDER_MODES}, got {self.border_mode!r}")
        if self.num_classes < 1:
            issues.append("groundtruth.num_classes must be >= 1")
        return issues


@dataclass
class ModelConfig:
    """
    Network layout: four receptive-field branches, pooled trunk blocks,
    a weight-tied dilated block, and the three task heads.
    """
    in_channels: int = 1
    branch_kernels: list[int] = field(default_factory=lambda: [3, 5, 7, 9])
    branch_filters: int = 16
    # One conv block per entry, each followed by a 2x2 max-pool
    trunk_filters: list[int] = field(default_factory=lambda: [32, 32])
    trunk_dilations: list[int] = field(default_factory=lambda: [1, 2])
    shared_dilation: int = 2
    shared_repeats: int = 2
    head_filters: int = 16
    spp_levels: list[int] = field(default_factory=lambda: [1, 2, 4])
    fc_widths: list[int] = field(default_factory=lambda: [64, 5])
    init_std: float = 0.01
    prelu_init: float = 0.25
    seed: int = 0

    @property
    def pool_stages(self) -> int:
        return len(self.trunk_filters)

    @property
    def output_stride(self) -> int:
        return 2 ** self.pool_stages

    @property
    def min_input_size(self) -> int:
        """Smallest H and W the pooling stages and the SPP levels allow."""
        return self.output_stride * max(self.spp_levels)

    @property
    def num_classes(self) -> int:
        return self.fc_widths[-1]

    @property
    def feature_channels(self) -> int:
        return self.trunk_filters[-1]

    def validate(self) -> list[str]:
        issues = []
        if self.in_channels not in (1, 3):
            issues.append(f"model.in_channels must be 1 or 3, got {self.in_channels}")
        if len(self.branch_kernels) != 4:
            issues.append(f"model.branch_kernels needs exactly 4 entries, got {len(self.branch_kernels)}")
        if any(k < 1 or k % 2 == 0 for k in self.branch_kernels):
            issues.append(f"model.branch_kernels must be odd, got {self.branch_kernels}")
        if self.branch_filters < 1 or self.head_filters < 1:
            issues.append("model.branch_filters and model.head_filters must be >= 1")
        if not self.trunk_filters:
            issues.append("model.trunk_filters needs at least one block")
        if len(self.trunk_dilations) != len(self.trunk_filters):
            issues.append("model.trunk_dilations must match model.trunk_filters in length")
        if any(d < 1 for d in list(self.trunk_dilations) + [self.shared_dilation]):
            issues.append("dilation rates must be >= 1")
        if self.shared_repeats < 1:
            issues.append("model.shared_repeats must be >= 1")
        if not self.spp_levels or any(n < 1 for n in self.spp_levels):
            issues.append(f"model.spp_levels must be positive grid sizes, got {self.spp_levels}")
        if len(self.fc_widths) != 2:
            issues.append(f"model.fc_widths needs (hidden, classes), got {self.fc_widths}")
        if self.init_std <= 0:
            issues.append("model.init_std must be > 0")
        return issues


@dataclass
class AugmentationConfig:
    """Training-set construction: random crops, flips, noise."""
    enabled: bool = True
    patches_per_image: int = 9
    patch_fraction: float = 0.5    # per axis, so 1/4 of the area
    hflip: bool = True
    flip_probability: float = 0.5
    noise_std: float = 0.01        # fraction of the [0, 1] dynamic range
    seed: int = 0
    workers: int = 1

    def validate(self) -> list[str]:
        issues = []
        if self.patches_per_image < 1:
            issues.append("augmentation.patches_per_image must be >= 1")
        if not 0.0 < self.patch_fraction <= 1.0:
            issues.append(f"augmentation.patch_fraction must be in (0, 1], got {self.patch_fraction}")
        if not 0.0 <= self.flip_probability <= 1.0:
            issues.append("augmentation.flip_probability must be in [0, 1]")
        if self.noise_std < 0:
            issues.append("augmentation.noise_std must be >= 0")
        if self.workers < 1:
            issues.append("augmentation.workers must be >= 1")
        return issues


@dataclass
class TrainConfig:
    """Optimizer, loss weighting and task switches."""
    iterations: int = 1000
    batch_size: int = 1
    learning_rate: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    lambda1: float = 0.01
    cla_task: bool = True
    seg_task: bool = True
    intermediate_supervision: bool = True
    seed: int = 0
    checkpoint_every: int = 0      # 0 = final checkpoint only
    log_every: int = 50
    progress_bar: bool = False

    def validate(self) -> list[str]:
        issues = []
        if self.iterations < 1:
            issues.append("train.iterations must be >= 1")
        if self.batch_size < 1:
            issues.append("train.batch_size must be >= 1")
        if self.learning_rate <= 0:
            issues.append("train.learning_rate must be > 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            issues.append("train.beta1 and train.beta2 must be in [0, 1)")
        if self.epsilon <= 0:
            issues.append("train.epsilon must be > 0")
        if self.lambda1 < 0:
            issues.append("train.lambda1 must be >= 0")
        if self.checkpoint_every < 0 or self.log_every < 0:
            issues.append("train.checkpoint_every and train.log_every must be >= 0")
        return issues


@dataclass
class EvaluationConfig:
    use_roi: bool = True
    group_by_scene: bool = True
    folds: int = 5

    def validate(self) -> list[str]:
        if self.folds < 2:
            return ["evaluation.folds must be >= 2"]
        return []


@dataclass
class OutputConfig:
    """Output directory structure."""
    base_dir: Path = field(default_factory=lambda: Path("runs/segcrowd"))
    checkpoints_subdir: str = "checkpoints"
    logs_subdir: str = "logs"
    reports_subdir: str = "reports"

    @property
    def checkpoints_dir(self) -> Path:
        return self.base_dir / self.checkpoints_subdir

    @property
    def logs_dir(self) -> Path:
        return self.base_dir / self.logs_subdir

    @property
    def reports_dir(self) -> Path:
        return self.base_dir / self.reports_subdir

    def create_directories(self) -> None:
        for dir_path in (self.checkpoints_dir, self.logs_dir, self.reports_dir):
            dir_path.mkdir(parents=True, exist_ok=True)

    def validate(self) -> list[str]:
        return []


@dataclass
class SegCrowdConfig:
    """
    Master configuration.

    Sections: groundtruth, model, augmentation, train, evaluation, output.
    """
    experiment_name: str = "segcrowd"
    random_seed: int = 42

    groundtruth: GroundTruthConfig = field(default_factory=GroundTruthConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    _SECTIONS = ("groundtruth", "model", "augmentation", "train", "evaluation", "output")

    def to_dict(self) -> dict:
        def convert(obj):
            if isinstance(obj, Enum):
                return obj.value
            elif isinstance(obj, Path):
                return str(obj)
            elif hasattr(obj, "__dataclass_fields__"):
                return {f.name: convert(getattr(obj, f.name)) for f in fields(obj)}
            elif isinstance(obj, dict):
                return {k: convert(v) for k, v in obj.items()}
            elif isinstance(obj, (list, tuple)):
                return [convert(v) for v in obj]
            return obj
        return convert(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), default_flow_style=False, sort_keys=False)

    def save(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_yaml())

    @classmethod
    def load(cls, path: Path) -> "SegCrowdConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Config file not found: {path}")
        return cls().apply_file(path)

    @classmethod
    def from_dict(cls, data: dict) -> "SegCrowdConfig":
        return cls().merge(data)

    def copy(self) -> "SegCrowdConfig":
        return copy.deepcopy(self)

    def merge(self, data: dict) -> "SegCrowdConfig":
        """Apply a nested dict (e.g. parsed YAML) on top of this config, in place."""
        if not isinstance(data, dict):
            raise ConfigError([f"config root must be a mapping, got {type(data).__name__}"])
        return self.apply_overrides(_flatten(data))

    def apply_file(self, path: Path) -> "SegCrowdConfig":
        """
        Apply a config file in place: a nested YAML mapping, or line-oriented
        dotted key=value overrides (blank lines and # comments skipped).
        """
        text = Path(path).read_text(encoding="utf-8")
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError:
            doc = text
        if doc is None:
            return self
        if isinstance(doc, dict) and not any("=" in str(k) for k in _flatten(doc)):
            return self.merge(doc)
        return self.apply_overrides(parse_key_value_lines(text, source=str(path)))

    def apply_global_seed(self, seed: int) -> "SegCrowdConfig":
        """Set every seed field from one global seed."""
        self.random_seed = int(seed)
        self.model.seed = int(seed)
        self.augmentation.seed = int(seed)
        self.train.seed = int(seed)
        return self

    def apply_overrides(self, overrides: dict[str, Any]) -> "SegCrowdConfig":
        """
        Apply dotted-key overrides, e.g. {"train.learning_rate": 1e-4}.
        String values are parsed as YAML scalars when the target is not a string.
        """
        issues = []
        for key, value in overrides.items():
            parts = key.split(".")
            target: Any = self
            for part in parts[:-1]:
                if part not in self._SECTIONS or target is not self:
                    issues.append(f"unknown config key: {key}")
                    target = None
                    break
                target = getattr(target, part)
            if target is None:
                continue
            name = parts[-1]
            if name.startswith("_") or name not in {f.name for f in fields(target)}:
                issues.append(f"unknown config key: {key}")
                continue
            current = getattr(target, name)
            if hasattr(current, "__dataclass_fields__"):
                issues.append(f"config key {key} names a section, not a value")
                continue
            try:
                setattr(target, name, _coerce(value, current))
            except (TypeError, ValueError) as e:
                issues.append(f"bad value for {key}: {e}")
        if issues:
            raise ConfigError(issues, suggested_fix="Check key names against configs/segcrowd.yaml")
        return self

    def validate(self) -> list[str]:
        """Validate configuration, return list of issues (empty if valid)."""
        issues = []
        for name in self._SECTIONS:
            issues.extend(getattr(self, name).validate())
        if self.model.num_classes != self.groundtruth.num_classes:
            issues.append(
                f"model.fc_widths[-1] ({self.model.num_classes}) must equal "
                f"groundtruth.num_classes ({self.groundtruth.num_classes})"
            )
        return issues

    def check(self) -> "SegCrowdConfig":
        """Raise ConfigError when validate() reports issues."""
        issues = self.validate()
        if issues:
            raise ConfigError(issues)
        return self


def _flatten(data: dict, prefix: str = "") -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for key, value in data.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, dotted + "."))
        else:
            flat[dotted] = value
    return flat


def _coerce(value: Any, current: Any) -> Any:
    """Convert value to the type of the field's current value."""
    if isinstance(value, str) and not isinstance(current, (str, Path)):
        value = yaml.safe_load(value)
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise TypeError(f"expected true/false, got {value!r}")
        return value
    if isinstance(current, int):
        if isinstance(value, bool) or float(value) != int(float(value)):
            raise TypeError(f"expected integer, got {value!r}")
        return int(float(value))
    if isinstance(current, float):
        if isinstance(value, bool):
            raise TypeError(f"expected number, got {value!r}")
        return float(value)
    if isinstance(current, list):
        if not isinstance(value, (list, tuple)):
            raise TypeError(f"expected list, got {value!r}")
        return list(value)
    if isinstance(current, Path):
        return Path(value)
    if isinstance(current, str):
        return str(value)
    return value


def parse_key_value_lines(text: str, source: str = "<config>") -> dict[str, str]:
    """Dotted key=value lines to an override dict; later lines win."""
    overrides: dict[str, str] = {}
    issues = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            issues.append(f"{source}:{lineno}: expected key=value, got {line!r}")
            continue
        overrides[key.strip()] = value.strip()
    if issues:
        raise ConfigError(issues)
    return overrides


def load_or_create_config(config_path: Optional[Path] = None) -> SegCrowdConfig:
    """Load config from file or create default."""
    if config_path and Path(config_path).exists():
        return SegCrowdConfig.load(config_path)
    return SegCrowdConfig()
