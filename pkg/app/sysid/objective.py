import logging
from dataclasses import dataclass
from typing import List, Literal

import numpy as np
import pandas as pd

from app import settings
from app.services.errors import ModelSpecError
from app.sysid.model import SamplePointData, sample_points


logger = logging.getLogger(__name__)


CostKind = Literal["eq", "rie", "trie", "trie_hat", "rie_hat"]
PAIR_TOL = 1e-8


def _sym(X):
    return 0.5 * (X + X.T)


def _inverse(X):
    # one refinement step keeps |XY - I| under PAIR_TOL for moderately conditioned X
    Y = np.linalg.inv(X)
    return _sym(Y + Y @ (np.eye(len(X)) - X @ Y))


@dataclass(frozen=True)
class Metric:
    """Q and its inverse P, kept together."""

    Q: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        P = np.asarray(self.P, dtype=float)
        if not np.allclose(Q, Q.T, atol=1e-12 * max(1.0, np.abs(Q).max())):
            raise ModelSpecError("metric Q must be symmetric")
        if np.linalg.eigvalsh(_sym(Q)).min() <= 0:
            raise ModelSpecError("metric Q must be positive definite")
        residual = np.linalg.norm(Q @ P - np.eye(len(Q)))
        if residual >= PAIR_TOL:
            raise ModelSpecError(f"metric pair is inconsistent, |QP - I| = {residual:.3g}")
        object.__setattr__(self, "Q", _sym(Q))
        object.__setattr__(self, "P", _sym(P))

    @classmethod
    def from_Q(cls, Q) -> "Metric":
        Q = _sym(np.asarray(Q, dtype=float))
        return cls(Q=Q, P=_inverse(Q))

    @classmethod
    def from_P(cls, P) -> "Metric":
        P = _sym(np.asarray(P, dtype=float))
        return cls(Q=_inverse(P), P=P)

    @classmethod
    def identity(cls, n) -> "Metric":
        return cls(Q=np.eye(n), P=np.eye(n))

    @property
    def n(self):
        return self.Q.shape[0]


def sup_quadratic(H, h, c) -> float:
    """
    sup over d of d'Hd + 2h'd + c. Eigenvalues within PSD_TOL * max(|H|, 1) of zero
    count as null directions; h must then lie in range(H) up to RANGE_TOL.
    """
    H = _sym(np.atleast_2d(np.asarray(H, dtype=float)))
    h = np.atleast_1d(np.asarray(h, dtype=float))
    w, V = np.linalg.eigh(H)
    scale = max(float(np.abs(w).max()) if w.size else 0.0, 1.0)
    tol = settings.PSD_TOL * scale
    if w.size and w.max() > tol:
        return float("inf")
    g = V.T @ h
    null = np.abs(w) <= tol
    if np.any(np.abs(g[null]) > settings.RANGE_TOL * max(1.0, float(np.linalg.norm(h)))):
        return float("inf")
    active = ~null
    return float(c - np.sum(g[active] ** 2 / w[active]))


def rie_quadratic(sample: SamplePointData, metric: Metric):
    E, F, G, Q = sample.E, sample.F, sample.G, metric.Q
    H = E.T @ Q @ F + F.T @ Q @ E + G.T @ G
    h = E.T @ Q @ sample.eps_x + G.T @ sample.eps_y
    return H, h, float(sample.eps_y @ sample.eps_y)


def trie_quadratic(sample: SamplePointData, metric: Metric):
    E, F, G, Q, W = sample.E, sample.F, sample.G, metric.Q, sample.Pi_r
    A = F + E @ sample.Pi_dot
    H = W.T @ (E.T @ Q @ A + A.T @ Q @ E + G.T @ G) @ W
    h = W.T @ (E.T @ Q @ sample.eps_x + G.T @ sample.eps_y)
    return H, h, float(sample.eps_y @ sample.eps_y)


def relaxation_matrices(sample: SamplePointData):
    """A+ = (E(I+Pi_dot)+F)Pi_r,  A- = (E(I-Pi_dot)-F)Pi_r,  D = G Pi_r."""
    E, F, W, Pd = sample.E, sample.F, sample.Pi_r, sample.Pi_dot
    I = np.eye(sample.n)
    return (E @ (I + Pd) + F) @ W, (E @ (I - Pd) - F) @ W, sample.G @ W


def trie_hat_quadratic(sample: SamplePointData, metric: Metric):
    W, Q, P = sample.Pi_r, metric.Q, metric.P
    A_plus, A_minus, D = relaxation_matrices(sample)
    ex, ey = sample.eps_x, sample.eps_y
    H = 0.5 * A_plus.T @ Q @ A_plus + 0.5 * W.T @ P @ W - _sym(W.T @ A_minus) + D.T @ D
    h = 0.5 * A_plus.T @ Q @ ex + 0.5 * W.T @ ex + D.T @ ey
    c = 0.5 * float(ex @ Q @ ex) + float(ey @ ey)
    return H, h, c


def rie_local(sample: SamplePointData, metric: Metric) -> float:
    return sup_quadratic(*rie_quadratic(sample, metric))


def trie_local(sample: SamplePointData, metric: Metric) -> float:
    if sample.degenerate:
        return rie_local(sample, metric)
    return sup_quadratic(*trie_quadratic(sample, metric))


def rie_hat_local(sample: SamplePointData, metric: Metric) -> float:
    """Relaxed RIE: the relaxed transverse form with the full-space basis and no projector rate."""
    return sup_quadratic(*trie_hat_quadratic(sample.without_frame(), metric))


def trie_hat_local(sample: SamplePointData, metric: Metric) -> float:
    if sample.degenerate:
        return rie_hat_local(sample, metric)
    return sup_quadratic(*trie_hat_quadratic(sample, metric))


def eq_local(sample: SamplePointData, metric: Metric = None) -> float:
    return float(sample.eps_x @ sample.eps_x + sample.eps_y @ sample.eps_y)


LOCAL_COSTS = {
    "eq": eq_local,
    "rie": rie_local,
    "trie": trie_local,
    "trie_hat": trie_hat_local,
    "rie_hat": rie_hat_local,
}


def trie_form(sample: SamplePointData, metric: Metric, delta) -> float:
    """2(Pi_r d)'E'Q((F + E Pi_dot)Pi_r d + eps_x) + |G Pi_r d + eps_y|^2 at a given d."""
    z = sample.Pi_r @ np.asarray(delta, dtype=float)
    flow = (sample.F + sample.E @ sample.Pi_dot) @ z + sample.eps_x
    out = sample.G @ z + sample.eps_y
    return float(2.0 * (sample.E @ z) @ metric.Q @ flow + out @ out)


def relaxation_terms(sample: SamplePointData, delta):
    """(Delta_e+, Delta_e-, Delta_y) at a given reduced d."""
    A_plus, A_minus, D = relaxation_matrices(sample)
    delta = np.asarray(delta, dtype=float)
    return A_plus @ delta + sample.eps_x, A_minus @ delta - sample.eps_x, D @ delta + sample.eps_y


def trie_hat_form(sample: SamplePointData, metric: Metric, delta) -> float:
    e_plus, e_minus, e_y = relaxation_terms(sample, delta)
    z = sample.Pi_r @ np.asarray(delta, dtype=float)
    return float(
        0.5 * e_plus @ metric.Q @ e_plus + 0.5 * z @ metric.P @ z - z @ e_minus + e_y @ e_y
    )


def storage(sample: SamplePointData, metric: Metric, delta) -> float:
    """V(d, t) = |E Pi d|_Q^2 + |pi d|^2."""
    delta = np.asarray(delta, dtype=float)
    a = sample.E @ sample.Pi @ delta
    b = sample.pi @ delta
    return float(a @ metric.Q @ a + b @ b)


@dataclass(frozen=True)
class LocalCostBreakdown:
    eq_error: np.ndarray
    rie_bar: np.ndarray
    trie_bar: np.ndarray
    trie_hat: np.ndarray
    degenerate: np.ndarray

    @property
    def rie_finite(self):
        return np.isfinite(self.rie_bar)

    @property
    def trie_finite(self):
        return np.isfinite(self.trie_bar)

    @property
    def trie_hat_finite(self):
        return np.isfinite(self.trie_hat)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "sample": np.arange(len(self.eq_error)),
                "eq_error": self.eq_error,
                "rie_bar": self.rie_bar,
                "trie_bar": self.trie_bar,
                "trie_hat": self.trie_hat,
                "rie_finite": self.rie_finite,
                "trie_finite": self.trie_finite,
                "trie_hat_finite": self.trie_hat_finite,
                "degenerate": self.degenerate,
            }
        )


def breakdown(samples: List[SamplePointData], metric: Metric) -> LocalCostBreakdown:
    return LocalCostBreakdown(
        eq_error=np.array([eq_local(s) for s in samples]),
        rie_bar=np.array([rie_local(s, metric) for s in samples]),
        trie_bar=np.array([trie_local(s, metric) for s in samples]),
        trie_hat=np.array([trie_hat_local(s, metric) for s in samples]),
        degenerate=np.array([s.degenerate for s in samples], dtype=bool),
    )


def integrate_costs(values, dt: float, weighting: Literal["dt", "sum"] = "dt") -> float:
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        return float("inf")
    # numpy reduces with pairwise summation; fixed order for a given length
    total = float(np.sum(values))
    return total * dt if weighting == "dt" else total


def total_cost(record, frames, spec, coefs, metric: Metric, kind: CostKind, weighting: Literal["dt", "sum"] = "dt") -> float:
    if kind not in LOCAL_COSTS:
        raise ValueError(f"unknown cost kind '{kind}'")
    samples = sample_points(spec, coefs, record, frames if kind in ("trie", "trie_hat") else None)
    local = LOCAL_COSTS[kind]
    values = [local(sample, metric) for sample in samples]
    total = integrate_costs(values, record.dt, weighting)
    logger.debug(f"total {kind} cost over {record.N} samples: {total:.6g}")
    return total
