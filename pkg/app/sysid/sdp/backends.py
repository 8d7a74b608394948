import logging
import time
from typing import List

import cvxpy as cp
import numpy as np
import pydantic
import scipy.sparse as sp
import stamina

from app import settings
from app.services.errors import SolverNumericalError
from app.sysid.sdp.program import ConicProgram, ConicSolution, SolutionStatus


logger = logging.getLogger(__name__)


class SolverOptions(pydantic.BaseModel):
    backends: List[str] = pydantic.Field(default_factory=lambda: list(settings.SOLVER_BACKENDS))
    max_iters: int = pydantic.Field(settings.SOLVER_MAX_ITERS, ge=1)
    feas_tol: float = pydantic.Field(settings.SOLVER_FEAS_TOL, gt=0)
    verbose: bool = settings.SOLVER_VERBOSE

    @pydantic.validator("backends")
    def known_backends(cls, val):
        if not val:
            raise ValueError("at least one solver backend is required")
        return [name.upper() for name in val]


_INFEASIBLE = {cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE}
_UNBOUNDED = {cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE}
_CANDIDATE = {cp.OPTIMAL, cp.OPTIMAL_INACCURATE}


def _solver_kwargs(name: str, opts: SolverOptions) -> dict:
    if name == "SCS":
        return {"max_iters": opts.max_iters, "eps_abs": opts.feas_tol * 1e-2, "eps_rel": opts.feas_tol * 1e-2}
    if name == "CLARABEL":
        return {"max_iter": min(opts.max_iters, 500)}
    return {}


class CvxpyBackend:
    """Hands the block-affine program to a cvxpy conic solver."""

    def __init__(self, name: str):
        self.name = name

    def build(self, program: ConicProgram):
        x = cp.Variable(program.n_vars)
        constraints = []
        scalar_lin, scalar_const = [], []
        for block in program.blocks:
            d = block.size
            if d == 1:
                scalar_lin.append(block.matrix.lin)
                scalar_const.append(block.matrix.const.ravel())
                continue
            M = cp.reshape(block.matrix.const.ravel() + block.matrix.lin @ x, (d, d), order="C")
            constraints.append(0.5 * (M + M.T) >> 0)
        if scalar_lin:
            constraints.append(sp.vstack(scalar_lin, format="csr") @ x + np.concatenate(scalar_const) >= 0)
        if program.eq_matrix.shape[0]:
            constraints.append(program.eq_matrix @ x == program.eq_rhs)
        return x, cp.Problem(cp.Minimize(program.objective @ x), constraints)

    def solve(self, program: ConicProgram, opts: SolverOptions) -> ConicSolution:
        x, problem = self.build(program)
        started = time.perf_counter()
        try:
            problem.solve(solver=self.name, verbose=opts.verbose, **_solver_kwargs(self.name, opts))
        except (cp.error.SolverError, ValueError, ArithmeticError) as e:
            raise SolverNumericalError(f"{self.name} failed: {e}", backend=self.name)
        elapsed = time.perf_counter() - started
        info = {"backend_status": problem.status, "solve_seconds": elapsed}
        logger.info(f"{self.name} finished with status '{problem.status}' in {elapsed:.2f}s.")
        if problem.status in _INFEASIBLE:
            return ConicSolution(status=SolutionStatus.INFEASIBLE, backend=self.name, info=info)
        if problem.status in _UNBOUNDED:
            return ConicSolution(status=SolutionStatus.UNBOUNDED, backend=self.name, info=info)
        if problem.status not in _CANDIDATE or x.value is None:
            raise SolverNumericalError(f"{self.name} stopped with status '{problem.status}'", backend=self.name, info=info)
        return verify(program, np.asarray(x.value, dtype=float), opts.feas_tol, backend=self.name, info=info)


def verify(program: ConicProgram, x, feas_tol: float, backend: str = None, info: dict = None) -> ConicSolution:
    """Re-check a candidate point independently of what the backend reported."""
    min_eigs = program.block_min_eigs(x)
    scales = program.block_scales(x)
    residual = program.equality_residual(x)
    eq_scale = max(1.0, float(np.abs(program.eq_rhs).max())) if program.eq_rhs.size else 1.0
    worst = int(np.argmin(min_eigs / scales)) if len(min_eigs) else None
    info = dict(info or {}, worst_block=None if worst is None else program.blocks[worst].name)
    solution = ConicSolution(
        status=SolutionStatus.OPTIMAL,
        x=x,
        objective=program.objective_value(x),
        block_min_eigs=min_eigs,
        equality_residual=residual,
        backend=backend,
        info=info,
    )
    if np.any(min_eigs < -feas_tol * scales) or residual > feas_tol * eq_scale:
        raise SolverNumericalError(
            f"{backend} solution fails verification: min eig {min_eigs.min():.3g} "
            f"at {info['worst_block']}, equality residual {residual:.3g}",
            backend=backend,
            info=dict(info, candidate=solution),
        )
    return solution


def available_backends(names: List[str] = None) -> List[str]:
    """Configured backends that cvxpy can actually load, in fallback order."""
    installed = set(cp.installed_solvers())
    return [name for name in (names or SolverOptions().backends) if name in installed]


def solve(program: ConicProgram, opts: SolverOptions = None) -> ConicSolution:
    """Try each backend in turn; numerical trouble moves on to the next one."""
    opts = opts or SolverOptions()
    failures = []
    try:
        for attempt in stamina.retry_context(
            on=SolverNumericalError,
            attempts=len(opts.backends),
            timeout=None,
            wait_initial=0.0,
            wait_max=0.0,
            wait_jitter=0.0,
        ):
            with attempt:
                name = opts.backends[attempt.num - 1]
                try:
                    return CvxpyBackend(name).solve(program, opts)
                except SolverNumericalError as e:
                    logger.warning(f"Backend {name} gave up: {e}")
                    failures.append({"backend": name, "error": str(e)})
                    raise
    except SolverNumericalError as e:
        candidate = e.info.get("candidate")
        logger.error(f"All solver backends failed: {failures}")
        return ConicSolution(
            status=SolutionStatus.NUMERICAL_LIMIT,
            x=None if candidate is None else candidate.x,
            objective=None if candidate is None else candidate.objective,
            block_min_eigs=None if candidate is None else candidate.block_min_eigs,
            equality_residual=None if candidate is None else candidate.equality_residual,
            backend=e.backend,
            info={"failures": failures},
        )
