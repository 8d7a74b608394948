from typing import List, Literal, Optional

import pydantic

from app import settings
from app.sysid.sdp.backends import SolverOptions
from app.sysid.systems import SyntheticSystem
from app.sysid.trajectory import ForcingSpec, LaguerreBank, SmootherConfig
from .core import ActionConfiguration


FitKind = Literal["eq", "rie", "trie"]


class SyntheticConfig(pydantic.BaseModel):
    system: SyntheticSystem = pydantic.Field(default_factory=SyntheticSystem)
    forcing: ForcingSpec = pydantic.Field(default_factory=ForcingSpec)
    duration: float = pydantic.Field(30.0, gt=0, description="Record length in seconds.")
    dt: float = pydantic.Field(0.01, gt=0)
    noise_std: float = pydantic.Field(0.0, ge=0, description="Output noise standard deviation.")

    @pydantic.root_validator(skip_on_failure=True)
    def enough_samples(cls, values):
        if values["duration"] < 2 * values["dt"]:
            raise ValueError("duration must cover at least two sample steps")
        return values


class DataSourceConfig(pydantic.BaseModel):
    kind: Literal["synthetic", "csv", "record"] = pydantic.Field(
        "synthetic",
        description="synthetic: generate from the synthetic section; csv: t,u..,y.. file; "
                    "record: a state record CSV (t,x..,xdot..,xddot..,u..,y..) used as is.",
    )
    path: Optional[str] = None

    @pydantic.root_validator(skip_on_failure=True)
    def path_for_files(cls, values):
        if values["kind"] != "synthetic" and not values.get("path"):
            raise ValueError(f"data.path is required for data.kind={values['kind']}")
        return values


class ModelDegrees(pydantic.BaseModel):
    deg_e: int = pydantic.Field(1, ge=1)
    deg_f: int = pydantic.Field(3, ge=0)
    deg_f_u: int = pydantic.Field(1, ge=0)
    deg_g: int = pydantic.Field(1, ge=0)


class FitConfig(pydantic.BaseModel):
    kind: FitKind = "trie"
    regularization: float = pydantic.Field(0.0, ge=0.0, title="l1 weight")
    v_threshold: Optional[float] = pydantic.Field(None, ge=0.0)
    sample_stride: int = pydantic.Field(1, ge=1)
    weighting: Literal["dt", "sum"] = "dt"
    metric_floor: float = pydantic.Field(settings.METRIC_FLOOR, gt=0.0)
    compare_kinds: List[FitKind] = pydantic.Field(
        [], description="When set, fit every listed kind on the same data and write a comparison table."
    )
    amplitude_window: float = pydantic.Field(10.0, gt=0, description="Window (s) for the oscillation amplitude comparison.")


class EvalConfig(pydantic.BaseModel):
    model_path: Optional[str] = pydantic.Field(None, description="Defaults to <output_dir>/model.json.")
    horizon: Optional[float] = pydantic.Field(None, gt=0)


class VerifyConfig(pydantic.BaseModel):
    checks: List[str] = []
    include_solver_checks: bool = False
    delta_minus_sign: float = pydantic.Field(1.0, description="Sign on the relaxed difference term; -1 injects a fault.")

    @pydantic.validator("delta_minus_sign")
    def unit_sign(cls, val):
        if val not in (1.0, -1.0):
            raise ValueError("delta_minus_sign must be 1 or -1")
        return val


class RunConfig(ActionConfiguration):
    seed: int = settings.DEFAULT_SEED
    output_dir: str = settings.OUTPUT_DIR
    train_fraction: float = pydantic.Field(1.0, gt=0.0, le=1.0, description="Leading share of the record used for training.")
    data: DataSourceConfig = pydantic.Field(default_factory=DataSourceConfig)
    synthetic: SyntheticConfig = pydantic.Field(default_factory=SyntheticConfig)
    bank: Optional[LaguerreBank] = pydantic.Field(
        None, description="Required whenever states are built from output data (data.kind synthetic or csv)."
    )
    smoother: SmootherConfig = pydantic.Field(default_factory=SmootherConfig)
    model: ModelDegrees = pydantic.Field(default_factory=ModelDegrees)
    fit: FitConfig = pydantic.Field(default_factory=FitConfig)
    solver: SolverOptions = pydantic.Field(default_factory=SolverOptions)
    eval: EvalConfig = pydantic.Field(default_factory=EvalConfig)
    verify: VerifyConfig = pydantic.Field(default_factory=VerifyConfig)
