import enum
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from app import settings
from app.services.errors import DataValidationError
from app.sysid import model as poly
from app.sysid.geometry import frames_along
from app.sysid.objective import Metric, storage, trie_form, trie_local
from app.sysid.report import ErrorSummary


logger = logging.getLogger(__name__)


class SimStatus(str, enum.Enum):
    completed = "completed"
    diverged = "diverged"
    singular_E = "singular_E"


@dataclass(frozen=True)
class SimResult:
    dt: float
    times: np.ndarray  # (K,)
    states: np.ndarray  # (K, n)
    outputs: np.ndarray  # (K, p)
    status: SimStatus = SimStatus.completed
    status_time: Optional[float] = None

    @property
    def N(self):
        return len(self.times)


class _Singular(Exception):
    pass


def _explicit_rate(spec, coefs, x, u, forcing, cond_limit):
    E = poly.jacobian_e(spec, coefs, x)
    if np.linalg.cond(E) > cond_limit:
        raise _Singular()
    rhs = poly.eval_f(spec, coefs, x, u)
    if forcing is not None:
        rhs = rhs + forcing
    return np.linalg.solve(E, rhs)


def simulate(
    spec,
    coefs,
    x0,
    u,
    dt: float,
    forcing=None,
    divergence_radius: float = None,
    singular_cond: float = None,
) -> SimResult:
    """
    Fixed-step RK4 on E(x) xdot = f(x, u) + forcing. u (and forcing) are sample
    series on the same grid, linearly interpolated inside a step.
    """
    divergence_radius = divergence_radius or settings.DIVERGENCE_RADIUS
    singular_cond = singular_cond or settings.SINGULAR_COND
    x0 = np.asarray(x0, dtype=float)
    steps = len(u)
    U = np.asarray(u, dtype=float).reshape(steps, spec.m)
    Fc = None if forcing is None else np.asarray(forcing, dtype=float).reshape(steps, spec.n)
    states = np.empty((steps, spec.n))
    states[0] = x0
    status, status_time, last = SimStatus.completed, None, steps

    def rate(x, uu, ff):
        return _explicit_rate(spec, coefs, x, uu, ff, singular_cond)

    k = 0
    try:
        E0 = poly.jacobian_e(spec, coefs, x0)
        if np.linalg.cond(E0) > singular_cond:
            raise _Singular()
        for k in range(steps - 1):
            x = states[k]
            u_mid = 0.5 * (U[k] + U[k + 1])
            f0 = None if Fc is None else Fc[k]
            f1 = None if Fc is None else Fc[k + 1]
            f_mid = None if Fc is None else 0.5 * (f0 + f1)
            k1 = rate(x, U[k], f0)
            k2 = rate(x + 0.5 * dt * k1, u_mid, f_mid)
            k3 = rate(x + 0.5 * dt * k2, u_mid, f_mid)
            k4 = rate(x + dt * k3, U[k + 1], f1)
            nxt = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(nxt)) or np.linalg.norm(nxt) > divergence_radius:
                status, status_time, last = SimStatus.diverged, (k + 1) * dt, k + 1
                break
            states[k + 1] = nxt
    except _Singular:
        status, status_time, last = SimStatus.singular_E, k * dt, k + 1

    states = states[:last]
    outputs = poly.eval_g(spec, coefs, states, U[:last])
    if status is not SimStatus.completed:
        logger.warning(f"Simulation stopped early: {status.value} at t={status_time:.4g}.")
    return SimResult(
        dt=dt,
        times=dt * np.arange(last),
        states=states,
        outputs=np.atleast_2d(outputs).reshape(last, spec.p),
        status=status,
        status_time=status_time,
    )


def simulate_record(spec, coefs, record, horizon: Optional[float] = None) -> SimResult:
    """Open-loop run from the record's initial state with its recorded input."""
    stop = record.N if horizon is None else min(record.N, int(round(horizon / record.dt)) + 1)
    return simulate(spec, coefs, record.x[0], record.u[:stop], record.dt)


def _check_pair(sim: SimResult, reference):
    if sim.outputs.shape[1] != reference.p:
        raise DataValidationError(f"simulation has {sim.outputs.shape[1]} outputs, reference has {reference.p}")


def _reference_outputs(sim: SimResult, reference) -> np.ndarray:
    """Reference outputs on the simulation grid."""
    if np.isclose(sim.dt, reference.dt, rtol=1e-9) and sim.N <= reference.N:
        return reference.y[: sim.N]
    ref_t = reference.times - reference.t0
    return np.column_stack([np.interp(sim.times, ref_t, reference.y[:, j]) for j in range(reference.p)])


def sim_error(sim: SimResult, reference) -> float:
    """Trapezoidal integral of |y - y_ref|^2; +inf when the run stopped before the reference horizon."""
    _check_pair(sim, reference)
    if sim.status is not SimStatus.completed and sim.N < reference.N:
        return float("inf")
    deviation = np.sum((sim.outputs - _reference_outputs(sim, reference)) ** 2, axis=1)
    return float(trapezoid(deviation, sim.times))


@dataclass(frozen=True)
class ErrorMetrics:
    sim_error: float
    orbital_sim_error: float
    times: np.ndarray
    y_model: np.ndarray
    y_ref: np.ndarray
    y_ref_tau: np.ndarray
    tau: np.ndarray

    @property
    def deviation(self):
        return np.sqrt(np.sum((self.y_model - self.y_ref) ** 2, axis=1))

    @property
    def orbital_deviation(self):
        return np.sqrt(np.sum((self.y_model - self.y_ref_tau) ** 2, axis=1))

    def to_frame(self) -> pd.DataFrame:
        columns = {"t": self.times}
        for j in range(self.y_model.shape[1]):
            columns[f"y_model{j + 1}"] = self.y_model[:, j]
            columns[f"y_ref{j + 1}"] = self.y_ref[:, j]
            columns[f"y_ref_tau{j + 1}"] = self.y_ref_tau[:, j]
        columns["deviation"] = self.deviation
        columns["orbital_deviation"] = self.orbital_deviation
        columns["tau"] = self.tau
        return pd.DataFrame(columns)


def nearest_times(states: np.ndarray, reference_states: np.ndarray, dt: float, chunk: int = 512) -> np.ndarray:
    """
    tau(t) = argmin over the whole reference of the state distance. Ties go to the
    earliest sample; a parabola through the neighbouring squared distances refines tau
    whenever that does not increase the distance to the interpolated reference.
    """
    N = len(reference_states)
    tau = np.empty(len(states))
    for start in range(0, len(states), chunk):
        block = states[start: start + chunk]
        d2 = np.sum((block[:, None, :] - reference_states[None, :, :]) ** 2, axis=2)
        idx = np.argmin(d2, axis=1)
        for r, j in enumerate(idx):
            t_j = j * dt
            best = d2[r, j]
            tau[start + r] = t_j
            if 0 < j < N - 1:
                lo, mid, hi = d2[r, j - 1], best, d2[r, j + 1]
                denom = lo - 2.0 * mid + hi
                if denom > 0:
                    offset = float(np.clip(0.5 * (lo - hi) / denom, -1.0, 1.0))
                    neighbour = j + (1 if offset > 0 else -1)
                    w = abs(offset)
                    point = (1 - w) * reference_states[j] + w * reference_states[neighbour]
                    if np.sum((block[r] - point) ** 2) <= best:
                        tau[start + r] = t_j + offset * dt
    return tau


def orbital_sim_error(sim: SimResult, reference) -> ErrorMetrics:
    _check_pair(sim, reference)
    ref_t = reference.times - reference.t0
    y_ref = _reference_outputs(sim, reference)
    tau = nearest_times(sim.states, reference.x, reference.dt)
    y_ref_tau = np.column_stack([np.interp(tau, ref_t, reference.y[:, j]) for j in range(reference.p)])
    orbital = np.sum((sim.outputs - y_ref_tau) ** 2, axis=1)
    return ErrorMetrics(
        sim_error=sim_error(sim, reference),
        orbital_sim_error=float(trapezoid(orbital, sim.times)) if sim.N > 1 else 0.0,
        times=sim.times,
        y_model=sim.outputs,
        y_ref=y_ref,
        y_ref_tau=y_ref_tau,
        tau=tau,
    )


@dataclass(frozen=True)
class VariationalResult:
    delta: np.ndarray  # (N, n)
    delta_bar: np.ndarray  # (N, n)
    storage: np.ndarray  # (N,)
    trie_bar: np.ndarray  # (N,) local transverse bound
    dissipation_residual: np.ndarray  # (N,) dV/dt + |G delta_bar + eps_y|^2 - trie_bar
    degenerate: np.ndarray  # (N,)
    linearized_error: float
    orbital_linearized_error: float
    trie_bar_integral: float
    form: np.ndarray  # (N,) the bounded quadratic form evaluated at delta_bar
    coupling: np.ndarray  # (N,) tangential coupling 2 v'Q (F pi Delta - d/dt(E pi Delta) - E Pi_dot Pi Delta)
    coupling_integral: float
    identity_residual: np.ndarray  # (N,) dV/dt + |G delta_bar + eps_y|^2 - form - coupling


def variational_run(spec, coefs, record, metric: Metric, frames=None) -> VariationalResult:
    """
    Integrates d/dt (E Delta) = F Delta + eps_x along the data, Delta(0) = 0, in the
    variable z = E Delta with RK4 and midpoint-averaged sample matrices.

    With v = E Pi Delta the storage obeys dV/dt + |G delta_bar + eps_y|^2 = form + coupling,
    where form is the quadratic the local transverse bound maximizes. The coupling term
    vanishes for constant E, Q a multiple of I and constant eps_x; otherwise nothing bounds
    it and the orbital error may exceed the integrated transverse bound.
    """
    frames = frames if frames is not None else frames_along(record)
    samples = poly.sample_points(spec, coefs, record, frames)
    N, n, dt = record.N, spec.n, record.dt
    E = np.stack([s.E for s in samples])
    conds = np.linalg.cond(E)
    if np.any(conds > settings.SINGULAR_COND):
        bad = int(np.argmax(conds > settings.SINGULAR_COND))
        raise DataValidationError(f"E(x) is singular along the record at sample {bad}", row=bad + 1)
    F = np.stack([s.F for s in samples])
    A = np.stack([s.F @ np.linalg.inv(s.E) for s in samples])
    eps_x = np.stack([s.eps_x for s in samples])

    z = np.zeros((N, n))
    for k in range(N - 1):
        A_mid = 0.5 * (A[k] + A[k + 1])
        e_mid = 0.5 * (eps_x[k] + eps_x[k + 1])
        k1 = A[k] @ z[k] + eps_x[k]
        k2 = A_mid @ (z[k] + 0.5 * dt * k1) + e_mid
        k3 = A_mid @ (z[k] + 0.5 * dt * k2) + e_mid
        k4 = A[k + 1] @ (z[k] + dt * k3) + eps_x[k + 1]
        z[k + 1] = z[k] + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    delta = np.linalg.solve(E, z[:, :, None])[:, :, 0]
    Pi = np.stack([s.Pi for s in samples])
    delta_bar = np.einsum("kij,kj->ki", Pi, delta)
    tangential = np.einsum("kij,kj->ki", np.stack([s.pi for s in samples]), delta)
    out = np.stack([s.G @ d + s.eps_y for s, d in zip(samples, delta)])
    out_bar = np.stack([s.G @ d + s.eps_y for s, d in zip(samples, delta_bar)])
    V = np.array([storage(s, metric, d) for s, d in zip(samples, delta_bar)])
    bound = np.array([trie_local(s, metric) for s in samples])
    form = np.array([trie_form(s, metric, s.Pi_r.T @ d) for s, d in zip(samples, delta)])
    supply = np.sum(out_bar ** 2, axis=1)
    rate = np.gradient(V, dt)
    residual = rate + supply - bound

    v = np.einsum("kij,kj->ki", E, delta_bar)
    w = np.einsum("kij,kj->ki", E, tangential)
    rate_term = np.einsum("kij,kj->ki", np.stack([s.E @ s.Pi_dot for s in samples]), delta_bar)
    leak = np.einsum("kij,kj->ki", F, tangential) - np.gradient(w, dt, axis=0) - rate_term
    coupling = 2.0 * np.einsum("ki,ij,kj->k", v, metric.Q, leak)

    times = dt * np.arange(N)
    return VariationalResult(
        delta=delta,
        delta_bar=delta_bar,
        storage=V,
        trie_bar=bound,
        dissipation_residual=residual,
        degenerate=np.array([s.degenerate for s in samples], dtype=bool),
        linearized_error=float(trapezoid(np.sum(out ** 2, axis=1), times)),
        orbital_linearized_error=float(trapezoid(supply, times)),
        trie_bar_integral=float(trapezoid(bound, times)) if np.all(np.isfinite(bound)) else float("inf"),
        form=form,
        coupling=coupling,
        coupling_integral=float(trapezoid(coupling, times)),
        identity_residual=rate + supply - form - coupling,
    )


@dataclass(frozen=True)
class PerturbationOracle:
    theta: float
    delta: np.ndarray  # (x_0 - x_theta) / theta
    delta_bar: np.ndarray  # from the nearest point on the unperturbed orbit
    projected: np.ndarray  # Pi(v) delta
    valid: np.ndarray

    @property
    def error(self) -> float:
        diff = self.delta_bar[self.valid] - self.projected[self.valid]
        return float(np.linalg.norm(diff, axis=1).max()) if diff.size else 0.0


def perturbation_oracle(spec, coefs, record, theta: float) -> PerturbationOracle:
    """
    Finite-theta reruns of the full nonlinear model: x_theta carries the equation
    error scaled by (1 - theta), x_0 the full one. The orbital correction is found by a
    local nearest-point search along x_0 (second-order in the time shift).
    """
    if not 0 < theta < 1:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    eps_x, _ = poly.equation_errors(spec, coefs, record)
    base = simulate(spec, coefs, record.x[0], record.u, record.dt, forcing=eps_x)
    pert = simulate(spec, coefs, record.x[0], record.u, record.dt, forcing=(1.0 - theta) * eps_x)
    count = min(base.N, pert.N)
    x0, xt = base.states[:count], pert.states[:count]
    E = poly.jacobian_e(spec, coefs, x0)
    v = np.linalg.solve(E, (poly.eval_f(spec, coefs, x0, record.u[:count]) + eps_x[:count])[:, :, None])[:, :, 0]
    a = np.gradient(v, record.dt, axis=0)
    delta = (x0 - xt) / theta
    delta_bar = np.full_like(delta, np.nan)
    projected = np.full_like(delta, np.nan)
    speeds = np.linalg.norm(v, axis=1)
    valid = speeds > settings.VELOCITY_THRESHOLD_FACTOR * max(float(np.median(speeds)), 1e-300)
    for k in np.flatnonzero(valid):
        r = xt[k] - x0[k]
        shift = float(r @ v[k] / (v[k] @ v[k]))
        for _ in range(8):
            rho = r - shift * v[k] - 0.5 * shift ** 2 * a[k]
            slope = v[k] + shift * a[k]
            grad = -2.0 * rho @ slope
            curv = 2.0 * slope @ slope - 2.0 * rho @ a[k]
            if curv <= 0:
                break
            shift -= grad / curv
        rho = r - shift * v[k] - 0.5 * shift ** 2 * a[k]
        delta_bar[k] = -rho / theta
        Pi = np.eye(spec.n) - np.outer(v[k], v[k]) / (v[k] @ v[k])
        projected[k] = Pi @ delta[k]
    return PerturbationOracle(theta=theta, delta=delta, delta_bar=delta_bar, projected=projected, valid=valid)


def oscillation_amplitude(sim: SimResult, window: float, channel: int = 0) -> Tuple[float, float]:
    """Peak-to-peak output amplitude over the leading and the trailing window."""
    count = max(2, int(round(window / sim.dt)))
    y = sim.outputs[:, channel]
    if len(y) < count:
        return float(np.ptp(y)), float(np.ptp(y))
    return float(np.ptp(y[:count])), float(np.ptp(y[-count:]))


def output_energy(reference) -> float:
    return float(trapezoid(np.sum(reference.y ** 2, axis=1), reference.times - reference.t0))


def error_summary(spec, coefs, record, horizon: Optional[float] = None) -> Tuple[ErrorSummary, ErrorMetrics]:
    """Open-loop run over [0, horizon] with simulation and orbital simulation errors."""
    sim = simulate_record(spec, coefs, record, horizon)
    reference = record if horizon is None else record.segment(0, min(record.N, int(round(horizon / record.dt)) + 1))
    metrics = orbital_sim_error(sim, reference)
    summary = ErrorSummary(
        horizon=reference.horizon,
        status=sim.status.value,
        status_time=sim.status_time,
        sim_error=metrics.sim_error,
        orbital_sim_error=metrics.orbital_sim_error,
        output_energy=output_energy(reference),
    )
    return summary, metrics
