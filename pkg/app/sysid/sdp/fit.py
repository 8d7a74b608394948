import logging
import time
from dataclasses import dataclass
from typing import List, Literal, Optional

import numpy as np
import pydantic
import scipy.sparse as sp

from app.services.errors import InfeasibleProgram, SolverFailure
from app.sysid.geometry import frames_along
from app.sysid.model import ModelCoefficients, PolyModelSpec, affine_maps, sample_points, unflatten
from app.sysid.objective import Metric, breakdown, integrate_costs
from app.sysid.report import CostSummary, FitReport, SolverSummary
from app.sysid.sdp.backends import SolverOptions, solve
from app.sysid.sdp.lmi import metric_floor_block, sample_block
from app.sysid.sdp.program import AffineMatrix, ConicProgram, ConicSolution, PsdBlock, SolutionStatus, VariableLayout
from app.sysid.sdp.sos import build_sos_block


logger = logging.getLogger(__name__)


FitKind = Literal["eq", "rie", "trie"]


class FitOptions(pydantic.BaseModel):
    kind: FitKind = "trie"
    regularization: float = pydantic.Field(0.0, ge=0.0, description="Weight of the l1 norm of the coefficients.")
    v_threshold: Optional[float] = pydantic.Field(None, ge=0.0, description="Velocity threshold; default scales the median speed.")
    sample_stride: int = pydantic.Field(1, ge=1, description="Keep every k-th sample in the program.")
    weighting: Literal["dt", "sum"] = "dt"
    metric_floor: Optional[float] = pydantic.Field(None, gt=0.0)
    solver: SolverOptions = pydantic.Field(default_factory=SolverOptions)


def assemble(record, frames, spec: PolyModelSpec, regularization: float = 0.0, kind: FitKind = "trie",
             sample_stride: int = 1, weighting: str = "dt", metric_floor: float = None) -> ConicProgram:
    """
    Variables: [coefficients | vech(P) | Gram | l1 bounds | slacks].
    Objective: sum of slacks (dt-weighted) + regularization * sum of l1 bounds.
    """
    if kind not in ("eq", "rie", "trie"):
        raise ValueError(f"unknown fit kind '{kind}'")
    indices = np.arange(0, record.N, sample_stride)
    certificate = build_sos_block(spec)
    layout = VariableLayout(
        n_coef=spec.n_coef,
        n_metric=0 if kind == "eq" else spec.n,
        n_gram=certificate.n_gram,
        n_l1=spec.n_coef if regularization > 0 else 0,
        n_slack=len(indices),
    )
    maps = affine_maps(spec, record)
    blocks: List[PsdBlock] = []
    for j, k in enumerate(indices):
        frame = frames[k] if frames is not None else None
        blocks.append(sample_block(maps.at(k), frame, layout, j, kind))
    blocks.append(certificate.block(layout))
    if kind != "eq":
        blocks.append(metric_floor_block(layout, metric_floor))

    objective = np.zeros(layout.n_vars)
    weight = record.dt * sample_stride if weighting == "dt" else 1.0
    objective[layout.slack_offset: layout.slack_offset + layout.n_slack] = weight
    if regularization > 0:
        objective[layout.l1_offset: layout.l1_offset + layout.n_l1] = regularization
        for c in range(spec.n_coef):
            bound = AffineMatrix.variables([[layout.l1_offset + c]], layout.n_vars)
            coef = AffineMatrix.variables([[c]], layout.n_vars)
            blocks.append(PsdBlock(name=f"l1_upper_{c}", group="l1", matrix=bound - coef))
            blocks.append(PsdBlock(name=f"l1_lower_{c}", group="l1", matrix=bound + coef))
    eq_matrix, eq_rhs = certificate.equalities(layout)
    program = ConicProgram(
        layout=layout,
        objective=objective,
        blocks=blocks,
        eq_matrix=sp.csr_matrix(eq_matrix),
        eq_rhs=eq_rhs,
        meta={"kind": kind, "samples": indices.tolist(), "weighting": weighting},
    )
    logger.info(
        f"Assembled {kind} program: {layout.n_vars} variables, {len(blocks)} PSD blocks {program.block_counts()}, "
        f"{eq_matrix.shape[0]} equalities."
    )
    return program


def extract(program: ConicProgram, solution: ConicSolution, spec: PolyModelSpec):
    """Coefficients and metric (identity for equation-error programs) from a solution vector."""
    layout = program.layout
    coefs = unflatten(spec, layout.coefficients(solution.x))
    P = layout.metric(solution.x)
    metric = Metric.identity(spec.n) if P is None else Metric.from_P(P)
    return coefs, metric


def cost_summary(record, frames, spec: PolyModelSpec, coefs: ModelCoefficients, metric: Metric) -> CostSummary:
    parts = breakdown(sample_points(spec, coefs, record, frames), metric)
    return CostSummary(
        n_samples=record.N,
        n_degenerate=int(parts.degenerate.sum()),
        eq_error=integrate_costs(parts.eq_error, record.dt),
        rie_bar=integrate_costs(parts.rie_bar, record.dt),
        trie_bar=integrate_costs(parts.trie_bar, record.dt),
        trie_hat=integrate_costs(parts.trie_hat, record.dt),
        infinite_rie=int((~parts.rie_finite).sum()),
        infinite_trie=int((~parts.trie_finite).sum()),
        infinite_trie_hat=int((~parts.trie_hat_finite).sum()),
    )


@dataclass(frozen=True)
class FitResult:
    coefs: ModelCoefficients
    metric: Metric
    report: FitReport
    solution: ConicSolution
    frames: Optional[list] = None


def solver_summary(program: ConicProgram, solution: ConicSolution, assemble_seconds: float) -> SolverSummary:
    return SolverSummary(
        status=solution.status.value,
        backend=solution.backend,
        objective=solution.objective,
        solve_seconds=solution.info.get("solve_seconds"),
        assemble_seconds=assemble_seconds,
        min_block_eig=None if solution.block_min_eigs is None else float(solution.block_min_eigs.min()),
        equality_residual=solution.equality_residual,
        n_vars=program.n_vars,
        block_counts=program.block_counts(),
        diagnostics={k: v for k, v in solution.info.items() if k in ("failures", "worst_block", "backend_status")},
    )


def fit(record, spec: PolyModelSpec, options: FitOptions = None) -> FitResult:
    """
    Identify (e, f, g) and, for the stability-constrained kinds, the metric P = Q^-1.
    Raises SolverFailure (InfeasibleProgram when the program has no feasible point).
    """
    options = options or FitOptions()
    frames = frames_along(record, options.v_threshold) if options.kind == "trie" else None
    started = time.perf_counter()
    program = assemble(
        record, frames, spec,
        regularization=options.regularization,
        kind=options.kind,
        sample_stride=options.sample_stride,
        weighting=options.weighting,
        metric_floor=options.metric_floor,
    )
    assemble_seconds = time.perf_counter() - started
    solution = solve(program, options.solver)
    summary = solver_summary(program, solution, assemble_seconds)
    if solution.status is not SolutionStatus.OPTIMAL:
        report = FitReport(kind=options.kind, solver=summary, regularization=options.regularization)
        message = f"{options.kind} fit did not reach a verified optimum: {solution.status.value}"
        if solution.status is SolutionStatus.INFEASIBLE:
            raise InfeasibleProgram(message, solution=solution, report=report)
        raise SolverFailure(message, solution=solution, report=report)

    coefs, metric = extract(program, solution, spec)
    costs = cost_summary(record, frames if frames is not None else frames_along(record, options.v_threshold), spec, coefs, metric)
    report = FitReport(
        kind=options.kind,
        objective=solution.objective,
        regularization=options.regularization,
        solver=summary,
        costs=costs,
    )
    logger.info(f"{options.kind} fit objective {solution.objective:.6g}; integrated relaxed bound {costs.trie_hat:.6g}.")
    return FitResult(coefs=coefs, metric=metric, report=report, solution=solution, frames=frames)
