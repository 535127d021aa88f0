"""
Toolkit configuration.

Sections are pydantic models; files are YAML or JSON and are read with
yaml.safe_load. Nothing is read from the environment.
"""

from pathlib import Path
from typing import Dict, List, Optional, Type, TypeVar, Union

import pydantic
import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..core.errors import InvalidConfig

ModelT = TypeVar("ModelT", bound=BaseModel)

DEFAULT_HIGH_RESOURCE = ["eng", "arb", "rus", "spa", "deu", "zho"]


class AnnotationConfig(BaseModel):
    """How annotation overlays are parsed."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    open_delimiter: str = "<<"
    close_delimiter: str = ">>"
    # Extra sentence-level label strings mapped to severity levels 0-3.
    label_map: Dict[str, int] = Field(default_factory=dict)
    discard_invalid: bool = False

    @model_validator(mode="after")
    def _check(self) -> "AnnotationConfig":
        if not self.open_delimiter or not self.close_delimiter:
            raise ValueError("span delimiters must be non-empty")
        if self.open_delimiter == self.close_delimiter:
            raise ValueError("open and close delimiters must differ")
        bad = {k: v for k, v in self.label_map.items() if v not in (0, 1, 2, 3)}
        if bad:
            raise ValueError(f"label_map levels must be 0-3, got {bad}")
        return self


class OtConfig(BaseModel):
    """Attention optimal-transport detector parameters."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    bottom_k: int = Field(4, ge=1)
    length_window: float = Field(1.25, ge=1.0)
    tau_quantile: float = Field(0.99, ge=0.0, le=1.0)
    reference_drop_fraction: float = Field(0.2, ge=0.0, lt=1.0)
    similarity_encoder: Optional[str] = None
    min_calibration_records: int = Field(10, ge=2)


class CombinerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lam: float = Field(1.0, ge=0.0)
    tol: float = Field(1e-8, gt=0.0)
    max_iter: int = Field(1000, ge=1)
    folds: int = Field(3, ge=2)


class ResourceConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    high_resource: List[str] = Field(default_factory=lambda: list(DEFAULT_HIGH_RESOURCE))

    @property
    def high_resource_set(self) -> frozenset:
        return frozenset(code.lower() for code in self.high_resource)


class ToolkitConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    annotation: AnnotationConfig = Field(default_factory=AnnotationConfig)
    ot: OtConfig = Field(default_factory=OtConfig)
    combiner: CombinerConfig = Field(default_factory=CombinerConfig)
    resources: ResourceConfig = Field(default_factory=ResourceConfig)
    threads: int = Field(1, ge=1)


def load_model(path: Union[str, Path], model: Type[ModelT]) -> ModelT:
    """Read a YAML/JSON document and validate it against ``model``."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except yaml.YAMLError as exc:
        raise InvalidConfig(f"config {path} is not valid YAML/JSON: {exc}") from exc
    try:
        return model.model_validate(data or {})
    except pydantic.ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(part) for part in first["loc"]) or "(root)"
        raise InvalidConfig(f"config {path}: {where}: {first['msg']}") from exc


def load_config(path: Optional[Union[str, Path]] = None) -> ToolkitConfig:
    if path is None:
        return ToolkitConfig()
    return load_model(path, ToolkitConfig)
