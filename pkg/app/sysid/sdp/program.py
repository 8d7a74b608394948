import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp


logger = logging.getLogger(__name__)


def vech_length(n: int) -> int:
    return n * (n + 1) // 2


def vech_index(n: int) -> np.ndarray:
    """(n, n) positions of each entry in the lower-triangular, column-stacked vector."""
    idx = np.empty((n, n), dtype=int)
    k = 0
    for j in range(n):
        for i in range(j, n):
            idx[i, j] = idx[j, i] = k
            k += 1
    return idx


def vech(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    return np.array([M[i, j] for j in range(n) for i in range(j, n)])


def unvech(v, n: int) -> np.ndarray:
    return np.asarray(v, dtype=float)[vech_index(n)]


def svec(M) -> np.ndarray:
    """vech with off-diagonal entries scaled by sqrt(2), so <A, B> = svec(A)'svec(B)."""
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    return np.array([M[i, j] * (1.0 if i == j else np.sqrt(2.0)) for j in range(n) for i in range(j, n)])


@dataclass(frozen=True)
class VariableLayout:
    """[coefficients | vech(P) | Gram entries | l1 bounds | slacks]"""

    n_coef: int
    n_metric: int = 0
    n_gram: int = 0
    n_l1: int = 0
    n_slack: int = 0

    @property
    def metric_offset(self):
        return self.n_coef

    @property
    def gram_offset(self):
        return self.metric_offset + vech_length(self.n_metric)

    @property
    def l1_offset(self):
        return self.gram_offset + self.n_gram

    @property
    def slack_offset(self):
        return self.l1_offset + self.n_l1

    @property
    def n_vars(self):
        return self.slack_offset + self.n_slack

    def metric_indices(self) -> np.ndarray:
        return self.metric_offset + vech_index(self.n_metric)

    def slack(self, k: int) -> int:
        if not 0 <= k < self.n_slack:
            raise IndexError(f"slack {k} outside 0..{self.n_slack - 1}")
        return self.slack_offset + k

    def coefficients(self, x) -> np.ndarray:
        return np.asarray(x)[: self.n_coef]

    def metric(self, x) -> Optional[np.ndarray]:
        if not self.n_metric:
            return None
        return np.asarray(x)[self.metric_indices()]

    def slacks(self, x) -> np.ndarray:
        return np.asarray(x)[self.slack_offset: self.slack_offset + self.n_slack]


@dataclass(frozen=True)
class AffineMatrix:
    """
    Matrix-valued affine map  x -> const + reshape(lin @ x).
    lin rows follow the row-major order of the matrix entries.
    """

    const: np.ndarray
    lin: sp.csr_matrix

    def __post_init__(self):
        const = np.atleast_2d(np.asarray(self.const, dtype=float))
        object.__setattr__(self, "const", const)
        object.__setattr__(self, "lin", sp.csr_matrix(self.lin))
        if self.lin.shape[0] != const.size:
            raise ValueError(f"lin has {self.lin.shape[0]} rows for a {const.shape} matrix")

    @property
    def shape(self):
        return self.const.shape

    @property
    def n_vars(self):
        return self.lin.shape[1]

    @classmethod
    def zeros(cls, rows, cols, n_vars) -> "AffineMatrix":
        return cls(const=np.zeros((rows, cols)), lin=sp.csr_matrix((rows * cols, n_vars)))

    @classmethod
    def constant(cls, value, n_vars) -> "AffineMatrix":
        value = np.atleast_2d(np.asarray(value, dtype=float))
        return cls(const=value, lin=sp.csr_matrix((value.size, n_vars)))

    @classmethod
    def variables(cls, index, n_vars, scale: float = 1.0) -> "AffineMatrix":
        """Entry (i, j) equals scale * x[index[i, j]]; negative indices are zero entries."""
        index = np.atleast_2d(np.asarray(index, dtype=int))
        rows = np.flatnonzero(index.ravel() >= 0)
        cols = index.ravel()[rows]
        lin = sp.csr_matrix((np.full(len(rows), scale), (rows, cols)), shape=(index.size, n_vars))
        return cls(const=np.zeros(index.shape), lin=lin)

    @classmethod
    def from_linear(cls, const, lin, offset: int, n_vars: int) -> "AffineMatrix":
        """Embed a dense (..., K) linear part acting on variables offset..offset+K."""
        const = np.atleast_2d(np.asarray(const, dtype=float))
        if const.shape[0] == 1 and np.ndim(lin) == 2:
            # vectors become columns
            const = const.T
        lin = np.asarray(lin, dtype=float).reshape(const.size, -1)
        block = sp.csr_matrix(lin)
        left = sp.csr_matrix((const.size, offset))
        right = sp.csr_matrix((const.size, n_vars - offset - lin.shape[1]))
        return cls(const=const, lin=sp.hstack([left, block, right], format="csr"))

    def _coerce(self, other) -> "AffineMatrix":
        if isinstance(other, AffineMatrix):
            return other
        value = np.broadcast_to(np.asarray(other, dtype=float), self.shape)
        return AffineMatrix.constant(value, self.n_vars)

    def __add__(self, other):
        other = self._coerce(other)
        if other.shape != self.shape:
            raise ValueError(f"shape mismatch {self.shape} + {other.shape}")
        return AffineMatrix(const=self.const + other.const, lin=self.lin + other.lin)

    __radd__ = __add__

    def __neg__(self):
        return AffineMatrix(const=-self.const, lin=-self.lin)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, scalar: float):
        return AffineMatrix(const=scalar * self.const, lin=scalar * self.lin)

    __rmul__ = __mul__

    def __truediv__(self, scalar: float):
        return self * (1.0 / scalar)

    def lmul(self, L) -> "AffineMatrix":
        L = np.atleast_2d(np.asarray(L, dtype=float))
        cols = self.shape[1]
        return AffineMatrix(const=L @ self.const, lin=(sp.kron(L, sp.identity(cols)) @ self.lin).tocsr())

    def rmul(self, R) -> "AffineMatrix":
        R = np.atleast_2d(np.asarray(R, dtype=float))
        rows = self.shape[0]
        return AffineMatrix(const=self.const @ R, lin=(sp.kron(sp.identity(rows), R.T) @ self.lin).tocsr())

    @property
    def T(self) -> "AffineMatrix":
        rows, cols = self.shape
        perm = (np.arange(rows)[None, :] * cols + np.arange(cols)[:, None]).ravel()
        return AffineMatrix(const=self.const.T.copy(), lin=self.lin[perm])

    def sym(self) -> "AffineMatrix":
        return 0.5 * (self + self.T)

    def evaluate(self, x) -> np.ndarray:
        return self.const + (self.lin @ np.asarray(x, dtype=float)).reshape(self.shape)

    def fix(self, x) -> "AffineMatrix":
        return AffineMatrix.constant(self.evaluate(x), self.n_vars)

    @staticmethod
    def bmat(blocks: Sequence[Sequence[Optional["AffineMatrix"]]]) -> "AffineMatrix":
        """Block assembly; None entries are zero blocks sized by their row and column neighbours."""
        heights = [next(b.shape[0] for b in row if b is not None) for row in blocks]
        widths = [next(blocks[i][j].shape[1] for i in range(len(blocks)) if blocks[i][j] is not None)
                  for j in range(len(blocks[0]))]
        n_vars = next(b.n_vars for row in blocks for b in row if b is not None)
        total_rows, total_cols = sum(heights), sum(widths)
        const = np.zeros((total_rows, total_cols))
        rows, cols, data = [], [], []
        row_offsets = np.concatenate([[0], np.cumsum(heights)])
        col_offsets = np.concatenate([[0], np.cumsum(widths)])
        for bi, row in enumerate(blocks):
            for bj, block in enumerate(row):
                if block is None:
                    continue
                if block.shape != (heights[bi], widths[bj]):
                    raise ValueError(f"block ({bi}, {bj}) has shape {block.shape}, expected {(heights[bi], widths[bj])}")
                r0, c0 = row_offsets[bi], col_offsets[bj]
                const[r0:r0 + block.shape[0], c0:c0 + block.shape[1]] = block.const
                coo = block.lin.tocoo()
                a, b = np.divmod(coo.row, block.shape[1])
                rows.append((r0 + a) * total_cols + c0 + b)
                cols.append(coo.col)
                data.append(coo.data)
        lin = sp.csr_matrix(
            (np.concatenate(data) if data else [], (np.concatenate(rows) if rows else [], np.concatenate(cols) if cols else [])),
            shape=(total_rows * total_cols, n_vars),
        )
        return AffineMatrix(const=const, lin=lin)


@dataclass(frozen=True)
class PsdBlock:
    name: str
    group: str  # trie | rie | eq | sos | metric | l1
    matrix: AffineMatrix

    @property
    def size(self):
        return self.matrix.shape[0]


@dataclass(frozen=True)
class ConicProgram:
    """min c'x  s.t.  every block matrix(x) >= 0 (PSD),  A x = b."""

    layout: VariableLayout
    objective: np.ndarray
    blocks: List[PsdBlock]
    eq_matrix: sp.csr_matrix = None
    eq_rhs: np.ndarray = None
    meta: Dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.layout.n_vars
        if self.objective.shape != (n,):
            raise ValueError(f"objective has shape {self.objective.shape}, expected ({n},)")
        if self.eq_matrix is None:
            object.__setattr__(self, "eq_matrix", sp.csr_matrix((0, n)))
            object.__setattr__(self, "eq_rhs", np.zeros(0))
        for block in self.blocks:
            if block.matrix.n_vars != n:
                raise ValueError(f"block {block.name} acts on {block.matrix.n_vars} variables, expected {n}")
            if block.matrix.shape[0] != block.matrix.shape[1]:
                raise ValueError(f"block {block.name} is not square")

    @property
    def n_vars(self):
        return self.layout.n_vars

    def block_counts(self) -> Dict[str, int]:
        counts = {}
        for block in self.blocks:
            counts[block.group] = counts.get(block.group, 0) + 1
        return counts

    def block_min_eigs(self, x) -> np.ndarray:
        out = np.empty(len(self.blocks))
        for k, block in enumerate(self.blocks):
            M = block.matrix.evaluate(x)
            out[k] = np.linalg.eigvalsh(0.5 * (M + M.T)).min()
        return out

    def block_scales(self, x) -> np.ndarray:
        return np.array([max(1.0, np.linalg.norm(b.matrix.evaluate(x), 2)) for b in self.blocks])

    def equality_residual(self, x) -> float:
        if self.eq_matrix.shape[0] == 0:
            return 0.0
        return float(np.abs(self.eq_matrix @ x - self.eq_rhs).max())

    def objective_value(self, x) -> float:
        return float(self.objective @ x)


class SolutionStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_LIMIT = "numerical_limit"


@dataclass(frozen=True)
class ConicSolution:
    status: SolutionStatus
    x: Optional[np.ndarray] = None
    objective: Optional[float] = None
    block_min_eigs: Optional[np.ndarray] = None
    equality_residual: Optional[float] = None
    backend: Optional[str] = None
    info: Dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.status is SolutionStatus.OPTIMAL


@dataclass(frozen=True)
class StandardForm:
    """svec(const_k) + A_k x in the PSD cone of size sizes[k]; stacked over blocks."""

    c: np.ndarray
    A: sp.csr_matrix
    b0: np.ndarray
    sizes: List[int]
    eq_matrix: sp.csr_matrix
    eq_rhs: np.ndarray


def _svec_selector(d: int) -> sp.csr_matrix:
    """Maps a row-major vec of a symmetric d x d matrix onto its svec."""
    rows, cols, data = [], [], []
    k = 0
    for j in range(d):
        for i in range(j, d):
            if i == j:
                rows.append(k); cols.append(i * d + j); data.append(1.0)
            else:
                # both triangles carry half the scaled entry
                rows += [k, k]; cols += [i * d + j, j * d + i]; data += [np.sqrt(0.5), np.sqrt(0.5)]
            k += 1
    return sp.csr_matrix((data, (rows, cols)), shape=(vech_length(d), d * d))


def to_standard_form(program: ConicProgram) -> StandardForm:
    A_parts, b_parts, sizes = [], [], []
    for block in program.blocks:
        d = block.size
        selector = _svec_selector(d)
        A_parts.append(selector @ block.matrix.lin)
        b_parts.append(svec(0.5 * (block.matrix.const + block.matrix.const.T)))
        sizes.append(d)
    return StandardForm(
        c=program.objective.copy(),
        A=sp.vstack(A_parts, format="csr") if A_parts else sp.csr_matrix((0, program.n_vars)),
        b0=np.concatenate(b_parts) if b_parts else np.zeros(0),
        sizes=sizes,
        eq_matrix=program.eq_matrix,
        eq_rhs=program.eq_rhs,
    )


def to_sdpa(program: ConicProgram, path) -> Path:
    """
    SDPA sparse format: minimize c'x s.t. sum_i F_i x_i - F_0 >= 0.
    Equalities become a trailing diagonal block of paired inequalities.
    """
    path = Path(path)
    n_eq = program.eq_matrix.shape[0]
    structure = [block.size for block in program.blocks]
    if n_eq:
        structure.append(-2 * n_eq)
    lines = [
        f"* conic identification program: {len(program.blocks)} PSD blocks, {n_eq} equalities",
        f"{program.n_vars}",
        f"{len(structure)}",
        " ".join(str(s) for s in structure),
        " ".join(f"{v:.17g}" for v in program.objective),
    ]
    for bno, block in enumerate(program.blocks, start=1):
        d = block.size
        C = 0.5 * (block.matrix.const + block.matrix.const.T)
        for i in range(d):
            for j in range(i, d):
                if C[i, j] != 0.0:
                    lines.append(f"0 {bno} {i + 1} {j + 1} {-C[i, j]:.17g}")
        coo = block.matrix.lin.tocoo()
        a, b = np.divmod(coo.row, d)
        for var, i, j, value in sorted(zip(coo.col, a, b, coo.data)):
            if i <= j and value != 0.0:
                lines.append(f"{var + 1} {bno} {i + 1} {j + 1} {value:.17g}")
    if n_eq:
        bno = len(program.blocks) + 1
        eq = program.eq_matrix.tocoo()
        for r, rhs in enumerate(program.eq_rhs):
            if rhs != 0.0:
                lines.append(f"0 {bno} {2 * r + 1} {2 * r + 1} {rhs:.17g}")
                lines.append(f"0 {bno} {2 * r + 2} {2 * r + 2} {-rhs:.17g}")
        for r, var, value in zip(eq.row, eq.col, eq.data):
            lines.append(f"{var + 1} {bno} {2 * r + 1} {2 * r + 1} {value:.17g}")
            lines.append(f"{var + 1} {bno} {2 * r + 2} {2 * r + 2} {-value:.17g}")
    path.write_text("\n".join(lines) + "\n")
    logger.info(f"Program exported in SDPA format to {path} ({program.n_vars} variables).")
    return path
