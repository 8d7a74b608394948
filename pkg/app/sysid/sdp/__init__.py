from .program import ConicProgram, ConicSolution, SolutionStatus, to_sdpa, to_standard_form
from .lmi import build_trie_lmi, min_feasible_slack
from .sos import SosCertificate, build_sos_block
from .backends import SolverOptions, solve
from .fit import FitOptions, FitResult, assemble, fit


__all__ = [
    "ConicProgram",
    "ConicSolution",
    "SolutionStatus",
    "to_sdpa",
    "to_standard_form",
    "build_trie_lmi",
    "min_feasible_slack",
    "SosCertificate",
    "build_sos_block",
    "SolverOptions",
    "solve",
    "FitOptions",
    "FitResult",
    "assemble",
    "fit",
]
