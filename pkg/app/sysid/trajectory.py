import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
import pydantic
import scipy.linalg
from scipy.signal import savgol_filter

from app import settings
from app.services.errors import DataValidationError


logger = logging.getLogger(__name__)


INPUT_COLUMN = re.compile(r"^u(\d+)$")
OUTPUT_COLUMN = re.compile(r"^y(\d+)$")


@dataclass(frozen=True)
class RawSeries:
    times: np.ndarray  # (N,)
    inputs: np.ndarray  # (N, m)
    outputs: np.ndarray  # (N, p)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        inputs = np.asarray(self.inputs, dtype=float)
        outputs = np.asarray(self.outputs, dtype=float)
        inputs = inputs[:, None] if inputs.ndim == 1 else inputs
        outputs = outputs[:, None] if outputs.ndim == 1 else outputs
        if inputs.shape[0] != len(times) or outputs.shape[0] != len(times):
            raise DataValidationError(
                f"{len(times)} time stamps but {inputs.shape[0]} input and {outputs.shape[0]} output rows"
            )
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)
        steps = np.diff(times)
        if np.any(steps <= 0):
            row = int(np.argmax(steps <= 0)) + 2
            raise DataValidationError(f"non-monotone time at row {row}", row=row, column="t")
        for name, values in (("t", times[:, None]), ("u", inputs), ("y", outputs)):
            bad = ~np.isfinite(values)
            if bad.any():
                row, col = np.argwhere(bad)[0]
                column = name if name == "t" else f"{name}{col + 1}"
                raise DataValidationError(
                    f"non-finite value in column {column} at row {row + 1}", row=int(row) + 1, column=column
                )

    @property
    def N(self):
        return len(self.times)

    @property
    def m(self):
        return self.inputs.shape[1]

    @property
    def p(self):
        return self.outputs.shape[1]

    def is_uniform(self, rtol=1e-6):
        steps = np.diff(self.times)
        return bool(np.allclose(steps, steps[0], rtol=rtol, atol=0.0))


@dataclass(frozen=True)
class TrajectoryRecord:
    dt: float
    x: np.ndarray  # (N, n)
    xdot: np.ndarray  # (N, n)
    xddot: np.ndarray  # (N, n)
    u: np.ndarray  # (N, m)
    y: np.ndarray  # (N, p)
    t0: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise DataValidationError(f"record step must be positive, got dt={self.dt}")
        arrays = {}
        for name in ("x", "xdot", "xddot", "u", "y"):
            value = np.asarray(getattr(self, name), dtype=float)
            if value.ndim == 1:
                value = value[:, None]
            arrays[name] = value
            object.__setattr__(self, name, value)
        counts = {name: value.shape[0] for name, value in arrays.items()}
        if len(set(counts.values())) != 1:
            raise DataValidationError(f"sample counts differ across channels: {counts}")
        if self.N < 3:
            raise DataValidationError(f"a record needs at least 3 samples, got {self.N}")
        n = arrays["x"].shape[1]
        if arrays["xdot"].shape[1] != n or arrays["xddot"].shape[1] != n:
            raise DataValidationError("x, xdot and xddot must share the state dimension")

    @property
    def N(self):
        return self.x.shape[0]

    @property
    def n(self):
        return self.x.shape[1]

    @property
    def m(self):
        return self.u.shape[1]

    @property
    def p(self):
        return self.y.shape[1]

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.N)

    @property
    def horizon(self):
        return self.dt * (self.N - 1)

    def segment(self, start: int, stop: Optional[int] = None) -> "TrajectoryRecord":
        sl = slice(start, stop)
        return TrajectoryRecord(
            dt=self.dt,
            x=self.x[sl],
            xdot=self.xdot[sl],
            xddot=self.xddot[sl],
            u=self.u[sl],
            y=self.y[sl],
            t0=self.t0 + self.dt * start,
        )


class LaguerreBank(pydantic.BaseModel):
    pole: float = pydantic.Field(..., gt=0, description="Continuous-time pole a (1/s).")
    order: int = pydantic.Field(2, ge=1, description="Number of cascaded filters.")
    hold: Literal["foh", "zoh"] = pydantic.Field(
        "foh", description="Input model inside a sample step for the exact discretization."
    )


class SmootherConfig(pydantic.BaseModel):
    window: int = pydantic.Field(11, ge=5)
    poly_degree: int = pydantic.Field(3, ge=2)

    @pydantic.validator("window")
    def window_is_odd(cls, val):
        if val % 2 != 1:
            raise ValueError(f"window must be odd, got {val}")
        return val

    @pydantic.validator("poly_degree")
    def degree_below_window(cls, val, values):
        window = values.get("window")
        if window is not None and val >= window:
            raise ValueError(f"poly_degree ({val}) must be smaller than window ({window})")
        return val


class ForcingSpec(pydantic.BaseModel):
    kind: Literal["zero", "constant", "step", "steps", "sine", "multisine"] = "zero"
    level: float = 0.0
    at: float = 0.0
    amplitude: float = 0.0
    frequency: float = 0.0
    levels: List[float] = []
    durations: List[float] = []
    amplitudes: List[float] = []
    frequencies: List[float] = []
    phases: List[float] = []

    @pydantic.root_validator
    def lists_line_up(cls, values):
        if values.get("kind") == "multisine":
            amplitudes, frequencies = values.get("amplitudes", []), values.get("frequencies", [])
            phases = values.get("phases") or [0.0] * len(amplitudes)
            if not (len(amplitudes) == len(frequencies) == len(phases)):
                raise ValueError("multisine amplitudes, frequencies and phases must have equal length")
            values["phases"] = phases
        if values.get("kind") == "steps" and len(values.get("levels", [])) != len(values.get("durations", [])):
            raise ValueError("steps levels and durations must have equal length")
        return values

    def evaluate(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(t)
        if self.kind == "constant":
            return np.full_like(t, self.level)
        if self.kind == "step":
            return np.where(t >= self.at, self.level, 0.0)
        if self.kind == "steps":
            out = np.zeros_like(t)
            edges = np.cumsum([0.0] + list(self.durations))
            for level, start, stop in zip(self.levels, edges[:-1], edges[1:]):
                out = np.where((t >= start) & (t < stop), level, out)
            return out
        if self.kind == "sine":
            return self.amplitude * np.sin(2 * np.pi * self.frequency * t)
        out = np.zeros_like(t)
        for amp, freq, phase in zip(self.amplitudes, self.frequencies, self.phases):
            out = out + amp * np.sin(2 * np.pi * freq * t + phase)
        return out

    def rate(self, t) -> np.ndarray:
        """Time derivative away from the jump instants of step inputs."""
        t = np.asarray(t, dtype=float)
        if self.kind == "sine":
            w = 2 * np.pi * self.frequency
            return self.amplitude * w * np.cos(w * t)
        if self.kind == "multisine":
            out = np.zeros_like(t)
            for amp, freq, phase in zip(self.amplitudes, self.frequencies, self.phases):
                w = 2 * np.pi * freq
                out = out + amp * w * np.cos(w * t + phase)
            return out
        return np.zeros_like(t)


def load_csv(path) -> RawSeries:
    path = Path(path)
    if not path.exists():
        raise DataValidationError(f"data file not found: {path}")
    try:
        frame = pd.read_csv(path, skipinitialspace=True, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataValidationError(f"could not parse {path}: {e}")
    columns = [str(c).strip() for c in frame.columns]
    if not columns or columns[0] != "t":
        raise DataValidationError(f"{path}: first column must be 't', got {columns[:1]}")
    inputs = [c for c in columns[1:] if INPUT_COLUMN.match(c)]
    outputs = [c for c in columns[1:] if OUTPUT_COLUMN.match(c)]
    unknown = set(columns[1:]) - set(inputs) - set(outputs)
    if unknown:
        raise DataValidationError(f"{path}: unexpected columns {sorted(unknown)}")
    if not outputs:
        raise DataValidationError(f"{path}: at least one output column y1.. is required")
    frame.columns = columns
    values = frame.apply(pd.to_numeric, errors="coerce")
    for column in columns:
        bad = ~np.isfinite(values[column].to_numpy(dtype=float))
        if bad.any():
            row = int(np.argmax(bad)) + 1
            raise DataValidationError(
                f"{path}: non-finite value in column {column} at row {row}", row=row, column=column
            )
    logger.debug(f"Loaded {len(frame)} samples from {path} (m={len(inputs)}, p={len(outputs)}).")
    return RawSeries(
        times=values["t"].to_numpy(dtype=float),
        inputs=values[inputs].to_numpy(dtype=float).reshape(len(frame), len(inputs)),
        outputs=values[outputs].to_numpy(dtype=float),
    )


def save_raw_csv(raw: RawSeries, path):
    frame = pd.DataFrame({"t": raw.times})
    for j in range(raw.m):
        frame[f"u{j + 1}"] = raw.inputs[:, j]
    for j in range(raw.p):
        frame[f"y{j + 1}"] = raw.outputs[:, j]
    frame.to_csv(path, index=False, float_format="%.17g")
    return Path(path)


def record_to_frame(record: TrajectoryRecord) -> pd.DataFrame:
    columns = {"t": record.times}
    for name in ("x", "xdot", "xddot"):
        values = getattr(record, name)
        for j in range(record.n):
            columns[f"{name}{j + 1}"] = values[:, j]
    for j in range(record.m):
        columns[f"u{j + 1}"] = record.u[:, j]
    for j in range(record.p):
        columns[f"y{j + 1}"] = record.y[:, j]
    return pd.DataFrame(columns)


def save_record_csv(record: TrajectoryRecord, path):
    record_to_frame(record).to_csv(path, index=False, float_format="%.17g")
    return Path(path)


def load_record_csv(path) -> TrajectoryRecord:
    frame = pd.read_csv(path, float_precision="round_trip")

    def block(prefix):
        pattern = re.compile(rf"^{prefix}(\d+)$")
        cols = sorted((c for c in frame.columns if pattern.match(c)), key=lambda c: int(pattern.match(c).group(1)))
        return frame[cols].to_numpy(dtype=float).reshape(len(frame), len(cols))

    t = frame["t"].to_numpy(dtype=float)
    return TrajectoryRecord(
        dt=float(np.median(np.diff(t))),
        x=block("x"),
        xdot=block("xdot"),
        xddot=block("xddot"),
        u=block("u"),
        y=block("y"),
        t0=float(t[0]),
    )


def resample_uniform(raw: RawSeries, dt: Optional[float] = None) -> RawSeries:
    if dt is None:
        dt = float(np.median(np.diff(raw.times)))
    count = int(np.floor((raw.times[-1] - raw.times[0]) / dt + 1e-9)) + 1
    times = raw.times[0] + dt * np.arange(count)

    def interp(values):
        return np.column_stack([np.interp(times, raw.times, values[:, j]) for j in range(values.shape[1])]) \
            if values.shape[1] else np.zeros((count, 0))

    logger.info(f"Resampled {raw.N} irregular samples to {count} samples at dt={dt:g}.")
    return RawSeries(times=times, inputs=interp(raw.inputs), outputs=interp(raw.outputs))


def smooth_and_differentiate(channel, dt: float, cfg: SmootherConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    Local least-squares polynomial smoothing and its analytic derivative.
    Edge samples are taken from a polynomial fitted to the first/last full window,
    so the output has the same length as the input.
    """
    channel = np.asarray(channel, dtype=float)
    if cfg.window > len(channel):
        raise DataValidationError(
            f"smoothing window ({cfg.window}) is larger than the record ({len(channel)} samples)"
        )
    smoothed = savgol_filter(channel, cfg.window, cfg.poly_degree, deriv=0, mode="interp")
    derivative = savgol_filter(channel, cfg.window, cfg.poly_degree, deriv=1, delta=dt, mode="interp")
    return smoothed, derivative


def laguerre_matrices(bank: LaguerreBank) -> Tuple[np.ndarray, np.ndarray]:
    """
    State-space form of the unity-DC-gain Laguerre ladder: a first-order low-pass
    a/(s+a) followed by order-1 all-pass sections (a-s)/(s+a).
    """
    a, k = bank.pole, bank.order
    A = -a * np.eye(k)
    B = np.empty((k, 1))
    for i in range(k):
        B[i, 0] = a * (-1) ** i
        for j in range(i):
            A[i, j] = 2 * a * (-1) ** (i - j - 1)
    return A, B


def _discretize(A, B, dt, hold):
    k = A.shape[0]
    if hold == "zoh":
        block = np.zeros((k + 1, k + 1))
        block[:k, :k] = A
        block[:k, k:] = B
        expm = scipy.linalg.expm(block * dt)
        return expm[:k, :k], expm[:k, k:], np.zeros((k, 1))
    # first-order hold: input varies linearly across the step
    block = np.zeros((k + 2, k + 2))
    block[:k, :k] = A
    block[:k, k:k + 1] = B
    block[k, k + 1] = 1.0
    expm = scipy.linalg.expm(block * dt)
    return expm[:k, :k], expm[:k, k:k + 1], expm[:k, k + 1:k + 2] / dt


def laguerre_states(channel, dt: float, bank: LaguerreBank) -> Tuple[np.ndarray, np.ndarray]:
    """Return the (N, k) filter states and their rates from the state equation."""
    if not dt > 0:
        raise DataValidationError(f"dt must be positive, got {dt}")
    v = np.asarray(channel, dtype=float)
    A, B = laguerre_matrices(bank)
    Phi, Gamma0, Gamma1 = _discretize(A, B, dt, bank.hold)
    z = np.zeros((len(v), bank.order))
    for i in range(len(v) - 1):
        z[i + 1] = Phi @ z[i] + Gamma0[:, 0] * v[i] + Gamma1[:, 0] * (v[i + 1] - v[i])
    rates = z @ A.T + np.outer(v, B[:, 0])
    return z, rates


def build_state(raw: RawSeries, bank: LaguerreBank, cfg: SmootherConfig) -> TrajectoryRecord:
    """
    State = [smoothed outputs; Laguerre states of each smoothed output],
    so n = p + order * p.
    """
    if not raw.is_uniform():
        raw = resample_uniform(raw)
    dt = float(raw.times[1] - raw.times[0])
    smoothed, rates, filtered, filtered_rates = [], [], [], []
    for j in range(raw.p):
        ys, dys = smooth_and_differentiate(raw.outputs[:, j], dt, cfg)
        z, dz = laguerre_states(ys, dt, bank)
        smoothed.append(ys)
        rates.append(dys)
        filtered.append(z)
        filtered_rates.append(dz)
    x = np.column_stack(smoothed + filtered)
    xdot = np.column_stack(rates + filtered_rates)
    xddot = np.column_stack([smooth_and_differentiate(xdot[:, j], dt, cfg)[1] for j in range(xdot.shape[1])])
    logger.info(f"Built state record: N={raw.N}, n={x.shape[1]} (p={raw.p}, bank order={bank.order}).")
    return TrajectoryRecord(dt=dt, x=x, xdot=xdot, xddot=xddot, u=raw.inputs, y=raw.outputs, t0=float(raw.times[0]))


def split_record(record: TrajectoryRecord, train_fraction: float) -> Tuple[TrajectoryRecord, Optional[TrajectoryRecord]]:
    if not 0 < train_fraction <= 1:
        raise DataValidationError(f"train_fraction must lie in (0, 1], got {train_fraction}")
    cut = int(round(train_fraction * (record.N - 1))) + 1
    if cut >= record.N - 2:
        return record, None
    return record.segment(0, cut), record.segment(cut - 1)


def gen_synthetic(
    system,
    forcing: ForcingSpec,
    duration: float,
    dt: float,
    noise_std: float = 0.0,
    seed: int = 0,
    substeps: Optional[int] = None,
) -> Tuple[RawSeries, TrajectoryRecord]:
    """
    Integrate a reference oscillator and sample it every dt.
    The output is the first state coordinate; noise is added to the outputs only.
    """
    # the integrator lives with the model simulator, which itself consumes records
    from app.sysid import model as poly
    from app.sysid.simulate import SimStatus, simulate
    from app.sysid.systems import reference_model

    if not (duration > 0 and dt > 0):
        raise DataValidationError(f"duration and dt must be positive, got {duration}, {dt}")
    if noise_std < 0:
        raise DataValidationError(f"noise_std must be non-negative, got {noise_std}")
    substeps = substeps or settings.SYNTH_SUBSTEPS
    spec, coefs = reference_model(system)
    count = int(round(duration / dt)) + 1
    fine_dt = dt / substeps
    fine_times = fine_dt * np.arange((count - 1) * substeps + 1)
    u_fine = forcing.evaluate(fine_times)[:, None]
    sim = simulate(spec, coefs, np.asarray(system.initial_state(), dtype=float), u_fine, fine_dt)
    if sim.status is not SimStatus.completed:
        raise DataValidationError(f"reference system {system.kind} did not integrate cleanly: {sim.status.value}")

    x = sim.states[::substeps]
    times = dt * np.arange(count)
    u = forcing.evaluate(times)[:, None]
    udot = forcing.rate(times)[:, None]
    xdot = poly.eval_f(spec, coefs, x, u)
    xddot = np.einsum("kij,kj->ki", poly.jacobian_f_x(spec, coefs, x, u), xdot) \
        + np.einsum("kij,kj->ki", poly.jacobian_f_u(spec, coefs, x, u), udot)
    y_true = x[:, :1]
    truth = TrajectoryRecord(dt=dt, x=x, xdot=xdot, xddot=xddot, u=u, y=y_true)

    y = y_true.copy()
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        y = y + noise_std * rng.standard_normal(y.shape)
    raw = RawSeries(times=times, inputs=u, outputs=y)
    logger.info(f"Generated {system.kind} record: {count} samples, dt={dt:g}, noise_std={noise_std:g}.")
    return raw, truth
