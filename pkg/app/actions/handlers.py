import logging
from typing import Optional, Tuple

import pandas as pd
import pydantic

from app.actions.configurations import FitKind, RunConfig
from app.services.activity_logger import LogLevel, activity_logger, log_activity
from app.services.errors import (
    ActionExecutionError,
    ConfigurationValidationError,
    DataValidationError,
    ModelSpecError,
    SolverFailure,
)
from app.services.state import ArtifactStore
from app.services.utils import config_hash
from app.sysid.checks import run_suite
from app.sysid.geometry import frames_along
from app.sysid.model import PolyModelSpec, default_spec, load_model, sample_points, save_model
from app.sysid.objective import breakdown
from app.sysid.report import BoundChain, EvalReport, FitReport
from app.sysid.sdp.fit import FitOptions, FitResult, fit
from app.sysid.simulate import (
    error_summary,
    orbital_sim_error,
    oscillation_amplitude,
    output_energy,
    simulate_record,
    variational_run,
)
from app.sysid.trajectory import (
    TrajectoryRecord,
    build_state,
    gen_synthetic,
    load_csv,
    load_record_csv,
    save_raw_csv,
    save_record_csv,
    split_record,
)


logger = logging.getLogger(__name__)


def synthesize(config: RunConfig):
    synthetic = config.synthetic
    return gen_synthetic(
        synthetic.system,
        synthetic.forcing,
        duration=synthetic.duration,
        dt=synthetic.dt,
        noise_std=synthetic.noise_std,
        seed=config.seed,
    )


def load_states(config: RunConfig) -> TrajectoryRecord:
    """The state record a command works on, built from the configured data source."""
    data = config.data
    if data.kind == "record":
        try:
            return load_record_csv(data.path)
        except FileNotFoundError:
            raise DataValidationError(f"record file not found: {data.path}")
        except (KeyError, ValueError) as e:
            raise DataValidationError(f"invalid record file {data.path}: {e}")
    if config.bank is None:
        raise ConfigurationValidationError(f"bank.pole is required to build states from data.kind={data.kind}")
    raw = load_csv(data.path) if data.kind == "csv" else synthesize(config)[0]
    return build_state(raw, config.bank, config.smoother)


def model_spec(config: RunConfig, record: TrajectoryRecord) -> PolyModelSpec:
    degrees = config.model
    try:
        return default_spec(
            record.n, record.m, record.p,
            deg_e=degrees.deg_e, deg_f=degrees.deg_f, deg_g=degrees.deg_g, deg_f_u=degrees.deg_f_u,
        )
    except pydantic.ValidationError as e:
        raise ModelSpecError(f"cannot build the model basis: {e}")


def fit_options(config: RunConfig, kind: FitKind) -> FitOptions:
    return FitOptions(
        kind=kind,
        regularization=config.fit.regularization,
        v_threshold=config.fit.v_threshold,
        sample_stride=config.fit.sample_stride,
        weighting=config.fit.weighting,
        metric_floor=config.fit.metric_floor,
        solver=config.solver,
    )


def bound_chain(spec, result: FitResult, record, v_threshold=None) -> BoundChain:
    frames = result.frames if result.frames is not None else frames_along(record, v_threshold)
    run = variational_run(spec, result.coefs, record, result.metric, frames)
    return BoundChain(
        linearized_orbital_error=run.orbital_linearized_error,
        trie_bar_integral=run.trie_bar_integral,
        trie_hat_integral=result.report.costs.trie_hat,
        coupling_integral=run.coupling_integral,
    )


def run_fit(store: ArtifactStore, config: RunConfig, record: TrajectoryRecord, kind: FitKind, suffix: str = "") -> Tuple[FitReport, FitResult]:
    digest = config_hash(config)
    train, validation = split_record(record, config.train_fraction)
    spec = model_spec(config, record)
    try:
        result = fit(train, spec, fit_options(config, kind))
    except SolverFailure as e:
        if e.report is not None:
            store.write_document(f"report{suffix}.json", e.report.copy(update={"seed": config.seed, "config_hash": digest}))
        log_activity(
            store, "fit", f"{kind} fit failed: {e}", level=LogLevel.ERROR,
            data={"status": None if e.solution is None else e.solution.status.value},
        )
        raise

    training, _ = error_summary(spec, result.coefs, train)
    validation_summary = error_summary(spec, result.coefs, validation)[0] if validation is not None else None
    chain = bound_chain(spec, result, train, config.fit.v_threshold)
    report = result.report.copy(update={
        "seed": config.seed,
        "config_hash": digest,
        "training": training,
        "validation": validation_summary,
        "bound_chain": chain,
        "meta": {"n": spec.n, "m": spec.m, "p": spec.p, "n_coef": spec.n_coef, "train_samples": train.N},
    })
    P = None if kind == "eq" else result.metric.P
    save_model(store.path(f"model{suffix}.json"), spec, result.coefs, P=P,
               meta={"kind": kind, "seed": config.seed, "config_hash": digest})
    store.register(f"model{suffix}", f"model{suffix}.json")
    store.write_document(f"report{suffix}.json", report)
    frames = result.frames if result.frames is not None else frames_along(train, config.fit.v_threshold)
    parts = breakdown(sample_points(spec, result.coefs, train, frames), result.metric)
    store.write_frame(f"costs{suffix}.csv", parts.to_frame())
    log_activity(
        store, "fit", f"{kind} fit finished with objective {report.objective:.6g}",
        data={"solver": report.solver.dict(), "bound_chain": chain.dict()},
    )
    if not chain.holds:
        logger.warning(f"Bound chain does not hold for the {kind} fit: {chain.dict()}", extra={"kind": kind, "needs_attention": True})
    return report, result


def comparison_row(kind: FitKind, status: str, record, window: float, spec=None, report: Optional[FitReport] = None,
                   result: Optional[FitResult] = None) -> dict:
    """Whole-record behaviour of one fitted kind; failed fits keep only their status."""
    row = {"kind": kind, "status": status}
    if result is None:
        return row
    sim = simulate_record(spec, result.coefs, record)
    metrics = orbital_sim_error(sim, record)
    leading, trailing = oscillation_amplitude(sim, window)
    costs = report.costs
    infinite = {"eq": 0, "rie": costs.infinite_rie, "trie": costs.infinite_trie}[kind]
    row.update({
        "objective": report.objective,
        "sim_status": sim.status.value,
        "horizon": record.horizon,
        "sim_error": metrics.sim_error,
        "orbital_sim_error": metrics.orbital_sim_error,
        "output_energy": output_energy(record),
        "amplitude_leading": leading,
        "amplitude_trailing": trailing,
        "infinite_local_costs": infinite,
        "infinite_fraction": infinite / max(costs.n_samples, 1),
    })
    return row


@activity_logger()
def cmd_synth(store: ArtifactStore, action_config: RunConfig):
    raw, truth = synthesize(action_config)
    save_raw_csv(raw, store.path("data.csv"))
    store.register("data", "data.csv")
    save_record_csv(truth, store.path("truth.csv"))
    store.register("truth", "truth.csv")
    return {"samples": raw.N, "system": action_config.synthetic.system.kind, "data": "data.csv", "truth": "truth.csv"}


@activity_logger()
def cmd_fit(store: ArtifactStore, action_config: RunConfig):
    record = load_states(action_config)
    kinds = action_config.fit.compare_kinds
    if not kinds:
        report, _ = run_fit(store, action_config, record, action_config.fit.kind)
        return {"kind": report.kind, "status": report.solver.status, "objective": report.objective,
                "bound_chain_holds": report.bound_chain.holds, "model": "model.json", "report": "report.json"}

    spec = model_spec(action_config, record)
    window = action_config.fit.amplitude_window
    rows = []
    for kind in kinds:
        try:
            report, result = run_fit(store, action_config, record, kind, suffix=f"_{kind}")
        except SolverFailure as e:
            status = e.solution.status.value if e.solution is not None else "failed"
            rows.append(comparison_row(kind, status, record, window))
            continue
        rows.append(comparison_row(kind, report.solver.status, record, window, spec=spec, report=report, result=result))
    table = pd.DataFrame(rows)
    store.write_frame("comparison.csv", table)
    log_activity(store, "fit", "method comparison finished", data={"rows": rows})
    return {"kinds": list(kinds), "comparison": "comparison.csv", "statuses": {row["kind"]: row["status"] for row in rows}}


@activity_logger()
def cmd_eval(store: ArtifactStore, action_config: RunConfig):
    record = load_states(action_config)
    model_path = action_config.eval.model_path or str(store.path("model.json"))
    document = load_model(model_path)
    spec, coefs = document.spec, document.to_coefficients()
    if (spec.n, spec.m, spec.p) != (record.n, record.m, record.p):
        raise DataValidationError(
            f"model dimensions (n={spec.n}, m={spec.m}, p={spec.p}) do not match the data "
            f"(n={record.n}, m={record.m}, p={record.p})"
        )
    horizon = action_config.eval.horizon
    train, validation = split_record(record, action_config.train_fraction)
    training, traces = error_summary(spec, coefs, train, horizon)
    store.write_frame("traces.csv", traces.to_frame())
    validation_summary = None
    if validation is not None:
        validation_summary, validation_traces = error_summary(spec, coefs, validation, horizon)
        store.write_frame("traces_validation.csv", validation_traces.to_frame())
    report = EvalReport(
        model_path=str(model_path),
        seed=action_config.seed,
        config_hash=config_hash(action_config),
        training=training,
        validation=validation_summary,
    )
    store.write_document("eval_report.json", report)
    return {"report": "eval_report.json", "sim_error": training.sim_error, "orbital_sim_error": training.orbital_sim_error}


@activity_logger()
def cmd_verify(store: ArtifactStore, action_config: RunConfig):
    verify = action_config.verify
    try:
        results = run_suite(
            names=verify.checks or None,
            seed=action_config.seed,
            delta_minus_sign=verify.delta_minus_sign,
            include_solver=verify.include_solver_checks,
        )
    except KeyError as e:
        raise ConfigurationValidationError(str(e))
    summary = {name: {"passed": result.passed, "detail": result.detail} for name, result in results.items()}
    store.write_json("verify.json", summary)
    failed = sorted(name for name, result in results.items() if not result.passed)
    if failed:
        raise ActionExecutionError(f"checks failed: {', '.join(failed)}")
    return {"passed": sorted(results), "summary": "verify.json"}
