import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import pandas as pd
from scipy.linalg import orthogonal_procrustes

from app import settings
from app.services.errors import GeometryError


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TransverseFrame:
    pi: np.ndarray  # (n, n) tangential projector
    Pi: np.ndarray  # (n, n) transversal projector
    Pi_r: np.ndarray  # (n, n-1), or (n, n) identity when degenerate
    Pi_dot: np.ndarray  # (n, n)
    degenerate: bool = False

    @property
    def n(self):
        return self.pi.shape[0]

    def with_basis(self, Pi_r) -> "TransverseFrame":
        return TransverseFrame(pi=self.pi, Pi=self.Pi, Pi_r=Pi_r, Pi_dot=self.Pi_dot, degenerate=self.degenerate)


def degenerate_frame(n: int) -> TransverseFrame:
    return TransverseFrame(
        pi=np.zeros((n, n)), Pi=np.eye(n), Pi_r=np.eye(n), Pi_dot=np.zeros((n, n)), degenerate=True
    )


def householder_complement(direction) -> np.ndarray:
    """Columns 2..n of the reflector sending direction/|direction| onto the first axis."""
    v = np.asarray(direction, dtype=float)
    v = v / np.linalg.norm(v)
    w = v.copy()
    w[0] += 1.0 if v[0] >= 0 else -1.0
    H = np.eye(len(v)) - 2.0 * np.outer(w, w) / (w @ w)
    return H[:, 1:]


def frame_at(xdot, xddot, v_threshold: float = 0.0) -> TransverseFrame:
    xdot = np.asarray(xdot, dtype=float)
    xddot = np.asarray(xddot, dtype=float)
    n = xdot.shape[0]
    if n < 2:
        raise GeometryError(f"transverse frames need n >= 2, got n={n}")
    if xddot.shape != xdot.shape:
        raise GeometryError(f"xdot and xddot shapes differ: {xdot.shape} vs {xddot.shape}")
    if not (np.all(np.isfinite(xdot)) and np.all(np.isfinite(xddot))):
        raise GeometryError("non-finite velocity or acceleration")
    speed2 = float(xdot @ xdot)
    if speed2 == 0.0 or np.sqrt(speed2) < v_threshold:
        return degenerate_frame(n)
    pi = np.outer(xdot, xdot) / speed2
    pi_dot = (np.outer(xddot, xdot) + np.outer(xdot, xddot)) / speed2 \
        - 2.0 * float(xdot @ xddot) * np.outer(xdot, xdot) / speed2 ** 2
    return TransverseFrame(
        pi=pi,
        Pi=np.eye(n) - pi,
        Pi_r=householder_complement(xdot),
        Pi_dot=-pi_dot,
        degenerate=False,
    )


def default_threshold(xdot) -> float:
    speeds = np.linalg.norm(np.asarray(xdot, dtype=float), axis=1)
    return settings.VELOCITY_THRESHOLD_FACTOR * float(np.median(speeds))


def frames_along(record, v_threshold: Optional[float] = None) -> List[TransverseFrame]:
    """
    Frames at every sample. Each reduced basis is re-mixed by the orthogonal matrix
    closest to the previous non-degenerate basis, so Pi_r varies continuously.
    """
    if v_threshold is None:
        v_threshold = default_threshold(record.xdot)
    frames = []
    previous = None
    for k in range(record.N):
        frame = frame_at(record.xdot[k], record.xddot[k], v_threshold)
        if not frame.degenerate:
            if previous is not None:
                rotation, _ = orthogonal_procrustes(frame.Pi_r, previous)
                frame = frame.with_basis(frame.Pi_r @ rotation)
            previous = frame.Pi_r
        frames.append(frame)
    degenerate = sum(f.degenerate for f in frames)
    if degenerate:
        logger.warning(f"{degenerate} of {record.N} samples are below the velocity threshold {v_threshold:.3g}.")
    return frames


def numeric_pi_dot(record, frames: List[TransverseFrame]) -> np.ndarray:
    """Central-difference rate of the transversal projector, (N, n, n)."""
    Pi = np.stack([frame.Pi for frame in frames])
    return np.gradient(Pi, record.dt, axis=0)


def frames_to_frame(frames: List[TransverseFrame]) -> pd.DataFrame:
    rows = []
    for k, frame in enumerate(frames):
        row = {"sample": k, "degenerate": frame.degenerate}
        n = frame.n
        for i in range(n):
            for j in range(n):
                row[f"Pi_{i + 1}{j + 1}"] = frame.Pi[i, j]
                row[f"Pi_dot_{i + 1}{j + 1}"] = frame.Pi_dot[i, j]
        for i in range(n):
            for j in range(frame.Pi_r.shape[1]):
                row[f"Pi_r_{i + 1}{j + 1}"] = frame.Pi_r[i, j]
        rows.append(row)
    return pd.DataFrame(rows)
