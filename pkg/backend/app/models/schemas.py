from enum import Enum
from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, Field, field_validator, model_validator

from app.config import get_settings

CONFIG_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# Data sources
# ---------------------------------------------------------------------------

class SyntheticKind(str, Enum):
    LINEAR_HOMOSCEDASTIC = "linear_homoscedastic"
    SINE_HETEROSCEDASTIC = "sine_heteroscedastic"
    LOGNORMAL_SKEWED = "lognormal_skewed"


class SyntheticSpec(BaseModel):
    """Desk-scale generator description."""

    kind: SyntheticKind
    n: int = Field(default=1000, ge=1)
    d: int = Field(default=1, ge=1)
    noise_scale: float = Field(default=0.5, ge=0)

    model_config = {"frozen": True}


class DataSource(BaseModel):
    """Either a CSV file or a synthetic generator (exactly one)."""

    csv_path: Optional[str] = None
    target_column: Union[str, int] = -1
    synthetic: Optional[SyntheticSpec] = None
    synthetic_seed: int = Field(default=0, ge=0)
    log_target: bool = Field(default=False, description="Opt-in log transform of skewed targets")

    @model_validator(mode="after")
    def exactly_one_source(self):
        if (self.csv_path is None) == (self.synthetic is None):
            raise ValueError("Set exactly one of csv_path or synthetic")
        return self


# ---------------------------------------------------------------------------
# Neural network training
# ---------------------------------------------------------------------------

class EarlyStopping(str, Enum):
    NONE = "none"
    LOSS = "loss"
    INTERVAL = "interval"


class TrainConfig(BaseModel):
    learning_rate: float = Field(default=5e-4, ge=0, description="Adam step size; 0 freezes the parameters")
    epochs: int = Field(default=100, ge=1)
    batch_size: Optional[int] = Field(default=None, ge=1, description="None: full batch up to 1024 rows, else 256")
    l2_lambda: float = Field(default=1e-6, ge=0)
    early_stopping: EarlyStopping = EarlyStopping.NONE
    patience: int = Field(default=10, ge=1)
    alpha: float = Field(default=0.1, gt=0, lt=1, description="Target miscoverage for interval early stopping")
    adversarial_frac: float = Field(
        default=0.0, ge=0, description="FGSM step as a fraction of each feature's range; 0 disables"
    )
    seed: int = Field(default=0, ge=0)

    model_config = {"frozen": True}

    def resolved_batch_size(self, n: int) -> int:
        if self.batch_size is not None:
            return min(self.batch_size, n)
        return n if n <= 1024 else 256


class LossTag(str, Enum):
    MSE = "mse"
    GAUSS_NLL = "gauss_nll"
    PINBALL = "pinball"
    QD = "qd"
    LUBE = "lube"


class LossKind(BaseModel):
    tag: LossTag
    levels: tuple[float, ...] = ()
    alpha: float = 0.1
    lambda_qd: float = Field(default=15.0, ge=0)
    softness: float = Field(default=160.0, gt=0)
    lambda_lube: float = Field(default=10.0, ge=0)
    target_range: float = Field(default=1.0, gt=0)

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def check_parameters(self):
        if self.tag == LossTag.PINBALL:
            if not self.levels:
                raise ValueError("pinball loss needs at least one quantile level")
            if any(not 0 < q < 1 for q in self.levels):
                raise ValueError(f"pinball levels must lie in (0, 1), got {self.levels}")
        if self.tag in (LossTag.QD, LossTag.LUBE) and not 0 < self.alpha < 1:
            raise ValueError(f"{self.tag.value} alpha must lie in (0, 1), got {self.alpha}")
        return self

    @property
    def n_outputs(self) -> int:
        if self.tag == LossTag.MSE:
            return 1
        if self.tag == LossTag.PINBALL:
            return len(self.levels)
        return 2

    @classmethod
    def mse(cls) -> "LossKind":
        return cls(tag=LossTag.MSE)

    @classmethod
    def gauss_nll(cls) -> "LossKind":
        return cls(tag=LossTag.GAUSS_NLL)

    @classmethod
    def pinball(cls, *levels: float) -> "LossKind":
        return cls(tag=LossTag.PINBALL, levels=tuple(levels))

    @classmethod
    def qd(cls, alpha: float, lambda_qd: float = 15.0, softness: float = 160.0) -> "LossKind":
        return cls(tag=LossTag.QD, alpha=alpha, lambda_qd=lambda_qd, softness=softness)


# ---------------------------------------------------------------------------
# Forest / GP
# ---------------------------------------------------------------------------

class ForestConfig(BaseModel):
    n_trees: int = Field(default=100, ge=1)
    max_depth: Optional[int] = Field(default=None, ge=0, description="None grows until leaves are pure or too small")
    min_leaf: int = Field(default=1, ge=1)
    features_per_split: Optional[int] = Field(default=None, ge=1, description="None uses all features")
    seed: int = Field(default=0, ge=0)
    max_workers: int = Field(default=1, ge=1)

    model_config = {"frozen": True}


class GPHyper(BaseModel):
    lengthscale: float = Field(default=1.0, gt=0)
    signal_variance: float = Field(default=1.0, gt=0)
    noise_variance: float = Field(default=0.1, gt=0)

    model_config = {"frozen": True}


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

class MethodSpec(BaseModel):
    """A registry key plus free-form hyperparameters (epochs, dropout_prob, n_trees, measure, ...)."""

    name: str
    params: dict[str, Any] = Field(default_factory=dict)
    label: Optional[str] = Field(default=None, description="Row label; defaults to name")

    @property
    def row_label(self) -> str:
        return self.label or self.name


class ExperimentConfig(BaseModel):
    schema_version: Literal[1] = CONFIG_SCHEMA_VERSION
    name: str = "experiment"
    data: DataSource
    methods: list[MethodSpec] = Field(min_length=1)
    alpha: float = Field(default_factory=lambda: get_settings().default_alpha, gt=0, lt=1)
    n_splits: int = Field(default=50, ge=1)
    test_frac: float = Field(default=0.2, gt=0, lt=1)
    cal_frac: float = Field(default=0.5, ge=0, lt=1)
    tuning_frac: float = Field(default=0.05, ge=0, lt=1, description="Validation slice of proper-train")
    base_seed: int = Field(default=0, ge=0)
    unsafe_train_calibration: bool = False
    time_budget_s: Optional[float] = Field(default=None, gt=0, description="Per method per split; None uses settings")
    max_workers: Optional[int] = Field(default=None, ge=1)

    @field_validator("schema_version", mode="before")
    @classmethod
    def known_version(cls, v):
        if v != CONFIG_SCHEMA_VERSION:
            raise ValueError(f"Unsupported config schema_version {v}; this build reads version {CONFIG_SCHEMA_VERSION}")
        return v

    @model_validator(mode="after")
    def unique_labels(self):
        labels = [m.row_label for m in self.methods]
        if len(set(labels)) != len(labels):
            raise ValueError(f"Method labels must be unique, got {labels}")
        return self


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------

class RunStatus(str, Enum):
    OK = "ok"
    OUT_OF_TIME = "OoT"
    OUT_OF_RANGE = "OoR"
    ERROR = "error"


class MetricsReport(BaseModel):
    coverage: float = Field(ge=0, le=1)
    mean_width: float = Field(ge=0)
    relative_width: Optional[float] = None
    r2: Optional[float] = None
    n_test: int = Field(ge=1)


class ResultRow(BaseModel):
    method: str
    split: int
    coverage: Optional[float] = None
    mean_width: Optional[float] = None
    relative_width: Optional[float] = None
    r2: Optional[float] = None
    wall_ms: float = 0.0
    status: RunStatus = RunStatus.OK
    tuned: str = ""
    detail: str = ""

    model_config = {"use_enum_values": True}


class AggregateRow(BaseModel):
    method: str
    n_rows: int
    n_excluded: int
    coverage_mean: Optional[float] = None
    coverage_std: Optional[float] = None
    mean_width_mean: Optional[float] = None
    mean_width_std: Optional[float] = None
    relative_width_mean: Optional[float] = None
    relative_width_std: Optional[float] = None
    r2_mean: Optional[float] = None
    r2_std: Optional[float] = None
    wall_ms_mean: Optional[float] = None


class ResultsTable(BaseModel):
    rows: list[ResultRow] = Field(default_factory=list)
    aggregate: list[AggregateRow] = Field(default_factory=list)

    def rows_for(self, method: str) -> list[ResultRow]:
        return [r for r in self.rows if r.method == method]

    def aggregate_for(self, method: str) -> AggregateRow:
        for a in self.aggregate:
            if a.method == method:
                return a
        raise KeyError(method)


# ---------------------------------------------------------------------------
# API
# ---------------------------------------------------------------------------

class MethodInfo(BaseModel):
    name: str
    family: str
    conformal: bool
    description: str


class RunTriggerResponse(BaseModel):
    run_id: str
    status: str = "running"


class RunStatusResponse(BaseModel):
    run_id: str
    status: str  # running | completed | failed
    progress_percent: int = 0
    error: Optional[str] = None
    output_dir: Optional[str] = None
