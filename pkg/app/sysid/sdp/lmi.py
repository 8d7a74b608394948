import logging

import numpy as np

from app import settings
from app.sysid.model import SampleAffineMaps, SamplePointData
from app.sysid.sdp.program import AffineMatrix, PsdBlock, VariableLayout


logger = logging.getLogger(__name__)


def build_trie_lmi(
    E: AffineMatrix,
    F: AffineMatrix,
    G: AffineMatrix,
    eps_x: AffineMatrix,
    eps_y: AffineMatrix,
    Pi_r,
    Pi_dot,
    P: AffineMatrix,
    s: AffineMatrix,
    delta_minus_sign: float = 1.0,
) -> AffineMatrix:
    """
    Slack LMI for the relaxed transverse cost:

        [ s    t'   c+'  d' ]
        [ t    T2   C+'  D' ]
        [ c+   C+   P    0  ]  >= 0
        [ d    D    0    I  ]

    C+ = (E(I+Pi_dot)+F)Pi_r/sqrt2, c+ = eps_x/sqrt2, D = G Pi_r, d = eps_y,
    t = -Pi_r'eps_x/2, T2 = sym(Pi_r'(E(I-Pi_dot)-F)Pi_r) - Pi_r'P Pi_r/2.
    Its smallest feasible s is the closed-form supremum of the relaxed form.
    delta_minus_sign = -1 flips the Delta_e- terms (used to check the check).
    """
    W = np.asarray(Pi_r, dtype=float)
    Pd = np.asarray(Pi_dot, dtype=float)
    n = W.shape[0]
    I = np.eye(n)
    root2 = np.sqrt(2.0)

    A_plus = E.rmul((I + Pd) @ W) + F.rmul(W)
    A_minus = E.rmul((I - Pd) @ W) - F.rmul(W)
    C_plus = A_plus / root2
    c_plus = eps_x / root2
    D = G.rmul(W)
    t = eps_x.lmul(-0.5 * delta_minus_sign * W.T)
    T2 = A_minus.lmul(W.T).sym() * delta_minus_sign - P.lmul(W.T).rmul(W) * 0.5
    p = G.shape[0]
    ident = AffineMatrix.constant(np.eye(p), s.n_vars)
    return AffineMatrix.bmat(
        [
            [s, t.T, c_plus.T, eps_y.T],
            [t, T2, C_plus.T, D.T],
            [c_plus, C_plus, P, None],
            [eps_y, D, None, ident],
        ]
    )


def build_eq_lmi(eps_x: AffineMatrix, eps_y: AffineMatrix, s: AffineMatrix) -> AffineMatrix:
    """[[s, r'], [r, I]] >= 0 with r = [eps_x; eps_y], i.e. s >= |r|^2."""
    r = AffineMatrix.bmat([[eps_x], [eps_y]])
    ident = AffineMatrix.constant(np.eye(r.shape[0]), s.n_vars)
    return AffineMatrix.bmat([[s, r.T], [r, ident]])


def metric_matrix(layout: VariableLayout) -> AffineMatrix:
    return AffineMatrix.variables(layout.metric_indices(), layout.n_vars)


def metric_floor_block(layout: VariableLayout, floor: float = None) -> PsdBlock:
    floor = settings.METRIC_FLOOR if floor is None else floor
    P = metric_matrix(layout)
    return PsdBlock(name="metric_floor", group="metric", matrix=P - floor * np.eye(layout.n_metric))


def _sample_matrices(maps: SampleAffineMaps, layout: VariableLayout):
    n_vars = layout.n_vars
    return tuple(
        AffineMatrix.from_linear(amap.const, amap.lin, 0, n_vars)
        for amap in (maps.E, maps.F, maps.G, maps.eps_x, maps.eps_y)
    )


def sample_block(maps: SampleAffineMaps, frame, layout: VariableLayout, k: int, kind: str, delta_minus_sign: float = 1.0) -> PsdBlock:
    """PSD block for sample k. maps holds that sample's affine data only."""
    E, F, G, eps_x, eps_y = _sample_matrices(maps, layout)
    s = AffineMatrix.variables([[layout.slack(k)]], layout.n_vars)
    if kind == "eq":
        return PsdBlock(name=f"eq_{k}", group="eq", matrix=build_eq_lmi(eps_x, eps_y, s))
    n = E.shape[0]
    if kind == "rie" or frame is None or frame.degenerate:
        Pi_r, Pi_dot = np.eye(n), np.zeros((n, n))
    else:
        Pi_r, Pi_dot = frame.Pi_r, frame.Pi_dot
    group = "rie" if kind == "rie" else "trie"
    matrix = build_trie_lmi(E, F, G, eps_x, eps_y, Pi_r, Pi_dot, metric_matrix(layout), s, delta_minus_sign)
    return PsdBlock(name=f"{group}_{k}", group=group, matrix=matrix)


def numeric_trie_block(sample: SamplePointData, P, delta_minus_sign: float = 1.0) -> np.ndarray:
    """The slack LMI for fixed numbers, evaluated at s = 0."""
    n_vars = 1

    def const(value):
        value = np.asarray(value, dtype=float)
        return AffineMatrix.constant(value[:, None] if value.ndim == 1 else value, n_vars)

    if sample.degenerate:
        Pi_r, Pi_dot = np.eye(sample.n), np.zeros((sample.n, sample.n))
    else:
        Pi_r, Pi_dot = sample.Pi_r, sample.Pi_dot
    s = AffineMatrix.variables([[0]], n_vars)
    M = build_trie_lmi(
        const(sample.E), const(sample.F), const(sample.G), const(sample.eps_x), const(sample.eps_y),
        Pi_r, Pi_dot, const(P), s, delta_minus_sign,
    )
    return M.evaluate(np.zeros(n_vars))


def min_feasible_slack(M0) -> float:
    """
    Smallest s with M0 + s e1 e1' >= 0: b'K^+b - M0[0, 0] for K = M0[1:, 1:], b = M0[1:, 0],
    provided K >= 0 and b lies in range(K); +inf otherwise.
    """
    M0 = 0.5 * (np.asarray(M0, dtype=float) + np.asarray(M0, dtype=float).T)
    K, b = M0[1:, 1:], M0[1:, 0]
    w, V = np.linalg.eigh(K)
    tol = settings.PSD_TOL * max(1.0, float(np.abs(w).max()))
    if w.min() < -tol:
        return float("inf")
    g = V.T @ b
    null = w <= tol
    if np.any(np.abs(g[null]) > settings.RANGE_TOL * max(1.0, float(np.linalg.norm(b)))):
        return float("inf")
    return float(np.sum(g[~null] ** 2 / w[~null]) - M0[0, 0])
