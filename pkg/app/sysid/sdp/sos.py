import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
import scipy.sparse as sp

from app.sysid.model import Monomial, PolyModelSpec, jacobian_e, monomials, unflatten
from app.sysid.sdp.program import AffineMatrix, PsdBlock, VariableLayout, vech_index, vech_length


logger = logging.getLogger(__name__)


def _jacobian_terms(spec: PolyModelSpec) -> Dict[Tuple[int, int, Monomial], List[Tuple[int, float]]]:
    """E_ij(x) = sum over (gamma) x^gamma * sum_k theta_k * weight, keyed by (i, j, gamma)."""
    terms = {}
    be = len(spec.basis_e)
    for i in range(spec.n):
        for b, alpha in enumerate(spec.basis_e):
            for j in range(spec.n):
                if alpha[j] == 0:
                    continue
                gamma = tuple(a - int(k == j) for k, a in enumerate(alpha))
                terms.setdefault((i, j, gamma), []).append((i * be + b, float(alpha[j])))
    return terms


@dataclass(frozen=True)
class SosCertificate:
    """
    Gram certificate for y'(E(x) + E(x)' - I)y >= 0, over the basis m_a(x) y_i
    (index a * n + i). A constant Jacobian needs no Gram matrix: the block is E + E' - I.
    """

    spec: PolyModelSpec
    basis: List[Monomial]

    @property
    def constant(self) -> bool:
        return self.spec.max_degree_e() <= 1

    @property
    def size(self) -> int:
        return len(self.basis) * self.spec.n

    @property
    def n_gram(self) -> int:
        return 0 if self.constant else vech_length(self.size)

    def block(self, layout: VariableLayout) -> PsdBlock:
        n_vars = layout.n_vars
        if self.constant:
            E = AffineMatrix.zeros(self.spec.n, self.spec.n, n_vars)
            for (i, j, gamma), entries in _jacobian_terms(self.spec).items():
                if any(gamma):
                    continue
                for k, weight in entries:
                    E = E + AffineMatrix.variables(_single(self.spec.n, i, j, k), n_vars, scale=weight)
            matrix = E + E.T - np.eye(self.spec.n)
            return PsdBlock(name="well_posedness", group="sos", matrix=matrix)
        gram = AffineMatrix.variables(layout.gram_offset + vech_index(self.size), n_vars)
        return PsdBlock(name="well_posedness_gram", group="sos", matrix=gram)

    def equalities(self, layout: VariableLayout) -> Tuple[sp.csr_matrix, np.ndarray]:
        """
        Coefficient matching, one row per (gamma, i <= j):
        gram side minus polynomial side equals the constant of -y'y.
        """
        n = self.spec.n
        if self.constant:
            return sp.csr_matrix((0, layout.n_vars)), np.zeros(0)
        rows: Dict[Tuple[Monomial, int, int], Dict[int, float]] = {}

        def add(key, var, value):
            row = rows.setdefault(key, {})
            row[var] = row.get(var, 0.0) + value

        gram_index = layout.gram_offset + vech_index(self.size)
        for a, ma in enumerate(self.basis):
            for b, mb in enumerate(self.basis):
                gamma = tuple(x + y for x, y in zip(ma, mb))
                for i in range(n):
                    for j in range(n):
                        lo, hi = min(i, j), max(i, j)
                        add((gamma, lo, hi), int(gram_index[a * n + i, b * n + j]), 1.0)
        for (i, j, gamma), entries in _jacobian_terms(self.spec).items():
            lo, hi = min(i, j), max(i, j)
            for k, weight in entries:
                # y'(E + E')y = 2 sum_ij E_ij y_i y_j
                add((gamma, lo, hi), k, -2.0 * weight)
        zero = tuple(0 for _ in range(n))
        for i in range(n):
            rows.setdefault((zero, i, i), {})
        keys = sorted(rows)
        data, row_idx, col_idx = [], [], []
        rhs = np.zeros(len(keys))
        for r, key in enumerate(keys):
            gamma, i, j = key
            if gamma == zero and i == j:
                rhs[r] = -1.0
            for var, value in rows[key].items():
                if value != 0.0:
                    row_idx.append(r); col_idx.append(var); data.append(value)
        A = sp.csr_matrix((data, (row_idx, col_idx)), shape=(len(keys), layout.n_vars))
        return A, rhs


def _single(n, i, j, k):
    index = -np.ones((n, n), dtype=int)
    index[i, j] = k
    return index


def build_sos_block(spec: PolyModelSpec) -> SosCertificate:
    degree = max(0, int(np.ceil((spec.max_degree_e() - 1) / 2)))
    basis = monomials(spec.n, degree)
    certificate = SosCertificate(spec=spec, basis=basis)
    logger.debug(
        f"Well-posedness certificate: {'constant Jacobian' if certificate.constant else f'Gram size {certificate.size}'}."
    )
    return certificate


def well_posedness_margin(spec: PolyModelSpec, coef_vector, points) -> float:
    """min over points of the smallest eigenvalue of E(x) + E(x)', expected >= 1."""
    coefs = unflatten(spec, coef_vector)
    E = jacobian_e(spec, coefs, np.atleast_2d(points))
    return float(np.linalg.eigvalsh(E + E.transpose(0, 2, 1)).min())


def grid_points(lower, upper, per_axis: int = 20, inflate: float = 0.25) -> np.ndarray:
    lower, upper = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
    pad = inflate * (upper - lower) / 2.0
    axes = [np.linspace(lo - d, hi + d, per_axis) for lo, hi, d in zip(lower, upper, pad)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
