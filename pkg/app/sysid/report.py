from typing import Any, Dict, Optional

import pydantic


class SolverSummary(pydantic.BaseModel):
    status: str
    backend: Optional[str] = None
    objective: Optional[float] = None
    solve_seconds: Optional[float] = None
    assemble_seconds: Optional[float] = None
    min_block_eig: Optional[float] = None
    equality_residual: Optional[float] = None
    n_vars: int = 0
    block_counts: Dict[str, int] = {}
    diagnostics: Dict[str, Any] = {}


class CostSummary(pydantic.BaseModel):
    """Integrated local costs of the fitted model on its training record."""

    n_samples: int
    n_degenerate: int = 0
    eq_error: float
    rie_bar: float
    trie_bar: float
    trie_hat: float
    infinite_rie: int = 0
    infinite_trie: int = 0
    infinite_trie_hat: int = 0


class ErrorSummary(pydantic.BaseModel):
    horizon: float
    status: str
    status_time: Optional[float] = None
    sim_error: float
    orbital_sim_error: float
    output_energy: float


class BoundChain(pydantic.BaseModel):
    """
    (linearized orbital error, integral of the transverse bound, integral of its relaxation).
    The first link is only guaranteed when the tangential coupling integral is not positive;
    holds_with_coupling checks it with that integral added to the transverse bound.
    """

    linearized_orbital_error: float
    trie_bar_integral: float
    trie_hat_integral: float
    coupling_integral: float = 0.0
    slack: float = 1e-4
    holds: bool = False
    holds_with_coupling: bool = False

    @pydantic.root_validator(skip_on_failure=True)
    def weakly_increasing(cls, values):
        top = values["trie_hat_integral"]
        tol = values["slack"] * (max(1.0, abs(top)) if top != float("inf") else 1.0)
        relaxed = values["trie_bar_integral"] <= top + tol
        error = values["linearized_orbital_error"]
        values["holds"] = bool(error <= values["trie_bar_integral"] + tol and relaxed)
        values["holds_with_coupling"] = bool(
            error <= values["trie_bar_integral"] + values["coupling_integral"] + tol and relaxed
        )
        return values


class FitReport(pydantic.BaseModel):
    kind: str
    seed: Optional[int] = None
    config_hash: Optional[str] = None
    objective: Optional[float] = None
    regularization: float = 0.0
    solver: SolverSummary
    costs: Optional[CostSummary] = None
    training: Optional[ErrorSummary] = None
    validation: Optional[ErrorSummary] = None
    bound_chain: Optional[BoundChain] = None
    meta: Dict[str, Any] = {}

    @property
    def ok(self) -> bool:
        return self.solver.status == "optimal"


class EvalReport(pydantic.BaseModel):
    model_path: str
    seed: Optional[int] = None
    config_hash: Optional[str] = None
    training: ErrorSummary
    validation: Optional[ErrorSummary] = None
    meta: Dict[str, Any] = {}
