"""Experiment configuration: a strict JSON schema validated with pydantic."""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

# mirrors stosign.learning.models.MODEL_KINDS; importing it here would be circular
MODEL_KINDS = ("scalar-quadratic", "linear-regression", "logistic-regression", "mlp-1-hidden")
ALGORITHMS = ("sign", "sto", "dp", "dp-topk", "ef-sto", "ef-dp", "full-precision")
STO_ALGORITHMS = ("sto", "ef-sto")
DP_ALGORITHMS = ("dp", "dp-topk", "ef-dp")
EF_ALGORITHMS = ("ef-sto", "ef-dp")


class ConfigError(ValueError):
    """Validation failure; ``errors`` holds one ``"field.path: message"`` per problem."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("; ".join(errors))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ByzantineSpec(_Strict):
    count: int = Field(0, ge=0)
    knowledge: Literal["true-full-gradient", "mean-of-normals"] = "true-full-gradient"


class ModelConfig(_Strict):
    kind: Literal[MODEL_KINDS]  # type: ignore[valid-type]
    dims: list[int]
    init_scale: float = Field(0.0, ge=0)


class QuadraticData(_Strict):
    kind: Literal["quadratic"]
    targets: list[Union[float, list[float]]]


class MixtureData(_Strict):
    kind: Literal["gaussian-mixture"]
    samples: int = Field(ge=2)
    features: int = Field(ge=1)
    classes: int = Field(ge=2)
    separation: float = Field(3.0, gt=0)


class RegressionData(_Strict):
    kind: Literal["linear-regression"]
    samples: int = Field(ge=2)
    features: int = Field(ge=1)
    noise: float = Field(0.1, ge=0)


class LrSpec(_Strict):
    kind: Literal["constant", "step-decay", "multiplicative-decay", "theory"] = "constant"
    eta0: float = Field(gt=0)
    milestones: list[tuple[int, float]] = []
    rate: float = Field(0.99, gt=0)


class BSpec(_Strict):
    mode: Literal["fixed-scalar", "oracle-max", "theory-schedule"] = "fixed-scalar"
    value: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def _value_for_fixed(self):
        if self.mode == "fixed-scalar" and self.value is None:
            raise ValueError("b.value is required when b.mode is fixed-scalar")
        return self


class DpSpec(_Strict):
    epsilon: float = Field(gt=0)
    delta: float = Field(0.0, ge=0, lt=1)
    clip: float = Field(gt=0)
    mechanism: Literal["gaussian", "laplace"] = "gaussian"
    topk_fraction: Optional[float] = Field(None, gt=0, le=1)
    skip_untransmitted: bool = False
    accounting_rounds: Optional[int] = Field(None, ge=1)
    report_delta: float = Field(1e-5, gt=0, lt=1)

    @model_validator(mode="after")
    def _mechanism_params(self):
        if self.mechanism == "gaussian":
            if not 0 < self.delta < 1:
                raise ValueError("dp.delta must lie in (0, 1) for the gaussian mechanism")
            if not self.epsilon < 1:
                raise ValueError("dp.epsilon must lie in (0, 1) for the gaussian mechanism")
        elif self.delta != 0:
            raise ValueError("dp.delta must be 0 for the laplace mechanism")
        return self


class OutputSpec(_Strict):
    dir: Optional[str] = None
    csv: str = "metrics.csv"
    summary: str = "summary.json"


class ExperimentConfig(_Strict):
    seed: int = Field(ge=0)
    algorithm: Literal[ALGORITHMS]  # type: ignore[valid-type]
    aggregator: Literal["majority", "weighted"] = "majority"
    M: int
    byzantine: ByzantineSpec = ByzantineSpec()
    model: ModelConfig
    dataset: Union[QuadraticData, MixtureData, RegressionData] = Field(discriminator="kind")
    labels_per_worker: Optional[int] = Field(None, ge=1)
    rounds: int
    lr: LrSpec
    b: Optional[BSpec] = None
    dp: Optional[DpSpec] = None
    batch_size: int = Field(0, ge=0)
    parallel_workers: int = Field(1, ge=1)
    output: OutputSpec = OutputSpec()

    @field_validator("M")
    @classmethod
    def _m_positive(cls, v):
        if v < 1:
            raise ValueError("M must be ≥ 1")
        return v

    @field_validator("rounds")
    @classmethod
    def _rounds_positive(cls, v):
        if v < 1:
            raise ValueError("rounds must be ≥ 1")
        return v

    @property
    def total_voters(self) -> int:
        return self.M + self.byzantine.count

    @model_validator(mode="after")
    def _cross_field(self):
        errors = []
        alg = self.algorithm
        if alg in STO_ALGORITHMS and self.b is None:
            errors.append(f"b: section required for algorithm {alg!r}")
        if alg not in STO_ALGORITHMS and self.b is not None:
            errors.append(f"b: not used by algorithm {alg!r}")
        if alg in DP_ALGORITHMS and self.dp is None:
            errors.append(f"dp.epsilon: required for algorithm {alg!r} (dp section missing)")
        if alg not in DP_ALGORITHMS and self.dp is not None:
            errors.append(f"dp: not used by algorithm {alg!r}")
        if self.dp is not None:
            if alg == "dp-topk" and self.dp.topk_fraction is None:
                errors.append("dp.topk_fraction: required for algorithm 'dp-topk'")
            if alg != "dp-topk" and (self.dp.topk_fraction is not None or self.dp.skip_untransmitted):
                errors.append(f"dp.topk_fraction: only used by algorithm 'dp-topk'")
        if alg in EF_ALGORITHMS:
            if self.total_voters % 2 == 0:
                errors.append(f"M: error feedback needs an odd total voter count, got {self.total_voters}")
            if self.aggregator != "majority":
                errors.append("aggregator: error-feedback algorithms use the majority rule")
        if alg == "full-precision" and self.aggregator != "majority":
            errors.append("aggregator: full-precision averages gradients; weighted vote does not apply")
        if isinstance(self.dataset, QuadraticData):
            if len(self.dataset.targets) != self.M:
                errors.append(f"dataset.targets: need one target per normal worker ({self.M}), "
                              f"got {len(self.dataset.targets)}")
            if self.model.kind != "scalar-quadratic":
                errors.append("model.kind: quadratic data needs model kind 'scalar-quadratic'")
        else:
            if self.model.kind == "scalar-quadratic":
                errors.append("model.kind: 'scalar-quadratic' needs dataset kind 'quadratic'")
            if self.model.dims[0] != self.dataset.features:
                errors.append(f"model.dims: first entry must equal dataset.features ({self.dataset.features})")
        if isinstance(self.dataset, MixtureData):
            if self.model.kind not in ("logistic-regression", "mlp-1-hidden"):
                errors.append("model.kind: classification data needs a classifier model")
            elif self.model.dims[-1] != self.dataset.classes:
                errors.append(f"model.dims: last entry must equal dataset.classes ({self.dataset.classes})")
        elif self.labels_per_worker is not None:
            errors.append("labels_per_worker: only meaningful for classification datasets")
        if isinstance(self.dataset, RegressionData) and self.model.kind != "linear-regression":
            errors.append("model.kind: regression data needs model kind 'linear-regression'")
        if errors:
            raise ValueError("\n".join(errors))
        return self


_PATH_PREFIX = re.compile(r"^[A-Za-z_][\w.]*: ")


def format_validation_errors(exc: ValidationError) -> list[str]:
    out = []
    for err in exc.errors():
        # union members add the discriminator tag to the location; drop it
        loc = ".".join(str(part) for part in err["loc"] if part not in ("quadratic", "gaussian-mixture",
                                                                         "linear-regression"))
        msg = err["msg"].removeprefix("Value error, ")
        for line in msg.split("\n"):
            out.append(line if _PATH_PREFIX.match(line) else f"{loc or 'config'}: {line}")
    return out


def validate_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(format_validation_errors(exc)) from None


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read config ({exc.strerror})"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})"]) from None
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: top level must be a JSON object"])
    return validate_config(data)
