import itertools
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pydantic

from app.services.errors import ModelSpecError


logger = logging.getLogger(__name__)


Monomial = Tuple[int, ...]


def monomials(nvars: int, max_degree: int, min_degree: int = 0) -> List[Monomial]:
    """All exponent tuples in nvars variables, graded by total degree."""
    out = []
    for degree in range(min_degree, max_degree + 1):
        for combo in itertools.combinations_with_replacement(range(nvars), degree):
            exps = [0] * nvars
            for var in combo:
                exps[var] += 1
            out.append(tuple(exps))
    return out


class PolyModelSpec(pydantic.BaseModel):
    """
    Implicit polynomial model  d/dt e(x) = f(x, u),  y = g(x, u).
    basis_e holds exponents over x; basis_f and basis_g over the stacked (x, u).
    """

    n: int = pydantic.Field(..., ge=1)
    m: int = pydantic.Field(0, ge=0)
    p: int = pydantic.Field(..., ge=1)
    deg_e: int = pydantic.Field(1, ge=1)
    deg_f_x: int = pydantic.Field(1, ge=0)
    deg_f_u: int = pydantic.Field(1, ge=0)
    deg_g: int = pydantic.Field(1, ge=0)
    basis_e: List[Monomial]
    basis_f: List[Monomial]
    basis_g: List[Monomial]

    class Config:
        allow_mutation = False

    @pydantic.validator("basis_e", "basis_f", "basis_g")
    def nonempty_unique(cls, val, field):
        if not val:
            raise ValueError(f"{field.name} must not be empty")
        if len(set(val)) != len(val):
            raise ValueError(f"{field.name} contains duplicate monomials")
        if any(min(mono) < 0 for mono in val):
            raise ValueError(f"{field.name} has negative exponents")
        return val

    @pydantic.root_validator(skip_on_failure=True)
    def exponent_lengths(cls, values):
        n, m = values["n"], values["m"]
        if any(len(mono) != n for mono in values["basis_e"]):
            raise ValueError(f"basis_e monomials must have {n} exponents (e depends on x only)")
        for name in ("basis_f", "basis_g"):
            if any(len(mono) != n + m for mono in values[name]):
                raise ValueError(f"{name} monomials must have n + m = {n + m} exponents")
        return values

    @property
    def sizes(self) -> Tuple[int, int, int]:
        return self.n * len(self.basis_e), self.n * len(self.basis_f), self.p * len(self.basis_g)

    @property
    def n_coef(self) -> int:
        return sum(self.sizes)

    def slices(self) -> Dict[str, slice]:
        ne, nf, ng = self.sizes
        return {"e": slice(0, ne), "f": slice(ne, ne + nf), "g": slice(ne + nf, ne + nf + ng)}

    def max_degree_e(self) -> int:
        return max(sum(mono) for mono in self.basis_e)


def default_spec(n: int, m: int, p: int, deg_e: int = 1, deg_f: int = 3, deg_g: int = 1, deg_f_u: int = 1) -> PolyModelSpec:
    """
    All-monomial bases. e omits the constant monomial (no effect on E or the
    equation errors); f allows x-degree up to deg_f and u-degree up to deg_f_u;
    g is a polynomial in x only.
    """
    basis_f = [
        xe + ue
        for xe in monomials(n, deg_f)
        for ue in monomials(m, deg_f_u)
    ]
    basis_f.sort(key=lambda mono: (sum(mono), tuple(-k for k in mono)))
    basis_g = [xe + (0,) * m for xe in monomials(n, deg_g)]
    return PolyModelSpec(
        n=n,
        m=m,
        p=p,
        deg_e=deg_e,
        deg_f_x=deg_f,
        deg_f_u=deg_f_u,
        deg_g=deg_g,
        basis_e=monomials(n, deg_e, min_degree=1),
        basis_f=basis_f,
        basis_g=basis_g,
    )


@dataclass(frozen=True)
class ModelCoefficients:
    coef_e: np.ndarray  # (n, |basis_e|)
    coef_f: np.ndarray  # (n, |basis_f|)
    coef_g: np.ndarray  # (p, |basis_g|)

    def __post_init__(self):
        for name in ("coef_e", "coef_f", "coef_g"):
            value = np.array(getattr(self, name), dtype=float, ndmin=2)
            if not np.all(np.isfinite(value)):
                raise ModelSpecError(f"{name} has non-finite entries")
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    def check(self, spec: PolyModelSpec):
        expected = {
            "coef_e": (spec.n, len(spec.basis_e)),
            "coef_f": (spec.n, len(spec.basis_f)),
            "coef_g": (spec.p, len(spec.basis_g)),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ModelSpecError(f"{name} has shape {getattr(self, name).shape}, spec requires {shape}")
        return self


def flatten(coefs: ModelCoefficients) -> np.ndarray:
    """Row-major over (output row, basis index); e then f then g."""
    return np.concatenate([coefs.coef_e.ravel(), coefs.coef_f.ravel(), coefs.coef_g.ravel()])


def unflatten(spec: PolyModelSpec, vector) -> ModelCoefficients:
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (spec.n_coef,):
        raise ModelSpecError(f"coefficient vector has shape {vector.shape}, expected ({spec.n_coef},)")
    sl = spec.slices()
    return ModelCoefficients(
        coef_e=vector[sl["e"]].reshape(spec.n, len(spec.basis_e)),
        coef_f=vector[sl["f"]].reshape(spec.n, len(spec.basis_f)),
        coef_g=vector[sl["g"]].reshape(spec.p, len(spec.basis_g)),
    ).check(spec)


def identity_coefficients(spec: PolyModelSpec) -> ModelCoefficients:
    """e(x) = x, f = 0, y_i = x_i for the first p states (where the basis allows it)."""
    coef_e = np.zeros((spec.n, len(spec.basis_e)))
    coef_g = np.zeros((spec.p, len(spec.basis_g)))
    for i in range(spec.n):
        unit = tuple(int(j == i) for j in range(spec.n))
        if unit not in spec.basis_e:
            raise ModelSpecError(f"basis_e lacks the linear monomial x{i + 1}")
        coef_e[i, spec.basis_e.index(unit)] = 1.0
    for i in range(min(spec.p, spec.n)):
        unit = tuple(int(j == i) for j in range(spec.n + spec.m))
        if unit in spec.basis_g:
            coef_g[i, spec.basis_g.index(unit)] = 1.0
    return ModelCoefficients(coef_e=coef_e, coef_f=np.zeros((spec.n, len(spec.basis_f))), coef_g=coef_g)


def _batch(values, width, name):
    arr = np.asarray(values, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != width:
        raise ModelSpecError(f"{name} has {arr.shape[1]} columns, expected {width}")
    return arr, single


def _stack(spec: PolyModelSpec, x, u):
    X, single = _batch(x, spec.n, "x")
    if spec.m == 0:
        return X, single
    if u is None:
        raise ModelSpecError("the model has inputs but u was not given")
    U, _ = _batch(u, spec.m, "u")
    if U.shape[0] != X.shape[0]:
        raise ModelSpecError(f"x has {X.shape[0]} samples but u has {U.shape[0]}")
    return np.hstack([X, U]), single


def monomial_values(Z: np.ndarray, basis: List[Monomial]) -> np.ndarray:
    """(N, |basis|) matrix of monomials evaluated at the rows of Z."""
    exps = np.asarray(basis, dtype=int)
    return np.prod(Z[:, None, :] ** exps[None, :, :], axis=2)


def monomial_gradients(Z: np.ndarray, basis: List[Monomial]) -> np.ndarray:
    """(N, |basis|, nvars) partial derivatives by the exponent-shift rule."""
    exps = np.asarray(basis, dtype=int)
    N, nvars = Z.shape
    out = np.empty((N, len(basis), nvars))
    for j in range(nvars):
        shifted = exps.copy()
        shifted[:, j] = np.maximum(shifted[:, j] - 1, 0)
        out[:, :, j] = exps[None, :, j] * np.prod(Z[:, None, :] ** shifted[None, :, :], axis=2)
    return out


def _unbatch(value, single):
    return value[0] if single else value


def eval_e(spec: PolyModelSpec, coefs: ModelCoefficients, x) -> np.ndarray:
    X, single = _batch(x, spec.n, "x")
    return _unbatch(monomial_values(X, spec.basis_e) @ coefs.coef_e.T, single)


def eval_f(spec: PolyModelSpec, coefs: ModelCoefficients, x, u=None) -> np.ndarray:
    Z, single = _stack(spec, x, u)
    return _unbatch(monomial_values(Z, spec.basis_f) @ coefs.coef_f.T, single)


def eval_g(spec: PolyModelSpec, coefs: ModelCoefficients, x, u=None) -> np.ndarray:
    Z, single = _stack(spec, x, u)
    return _unbatch(monomial_values(Z, spec.basis_g) @ coefs.coef_g.T, single)


def jacobian_e(spec: PolyModelSpec, coefs: ModelCoefficients, x) -> np.ndarray:
    X, single = _batch(x, spec.n, "x")
    return _unbatch(np.einsum("ib,kbj->kij", coefs.coef_e, monomial_gradients(X, spec.basis_e)), single)


def jacobian_f_x(spec: PolyModelSpec, coefs: ModelCoefficients, x, u=None) -> np.ndarray:
    Z, single = _stack(spec, x, u)
    grads = monomial_gradients(Z, spec.basis_f)[:, :, : spec.n]
    return _unbatch(np.einsum("ib,kbj->kij", coefs.coef_f, grads), single)


def jacobian_f_u(spec: PolyModelSpec, coefs: ModelCoefficients, x, u=None) -> np.ndarray:
    Z, single = _stack(spec, x, u)
    grads = monomial_gradients(Z, spec.basis_f)[:, :, spec.n:]
    return _unbatch(np.einsum("ib,kbj->kij", coefs.coef_f, grads), single)


def jacobian_g_x(spec: PolyModelSpec, coefs: ModelCoefficients, x, u=None) -> np.ndarray:
    Z, single = _stack(spec, x, u)
    grads = monomial_gradients(Z, spec.basis_g)[:, :, : spec.n]
    return _unbatch(np.einsum("ib,kbj->kij", coefs.coef_g, grads), single)


def _check_record(spec: PolyModelSpec, record):
    if (record.n, record.m, record.p) != (spec.n, spec.m, spec.p):
        raise ModelSpecError(
            f"record dimensions (n={record.n}, m={record.m}, p={record.p}) do not match "
            f"the model (n={spec.n}, m={spec.m}, p={spec.p})"
        )


def equation_errors(spec: PolyModelSpec, coefs: ModelCoefficients, record) -> Tuple[np.ndarray, np.ndarray]:
    """eps_x = E(x) xdot - f(x, u),  eps_y = y - g(x, u), per sample."""
    _check_record(spec, record)
    E = jacobian_e(spec, coefs, record.x)
    eps_x = np.einsum("kij,kj->ki", E, record.xdot) - eval_f(spec, coefs, record.x, record.u)
    eps_y = record.y - eval_g(spec, coefs, record.x, record.u)
    return eps_x, eps_y


@dataclass(frozen=True)
class AffineMap:
    """Per-sample value = const + lin @ theta, theta the flattened coefficient vector."""

    const: np.ndarray  # (N, *shape)
    lin: np.ndarray  # (N, *shape, n_coef)

    def evaluate(self, theta) -> np.ndarray:
        return self.const + self.lin @ np.asarray(theta, dtype=float)

    def __getitem__(self, k):
        return AffineMap(const=self.const[k], lin=self.lin[k])


@dataclass(frozen=True)
class SampleAffineMaps:
    E: AffineMap
    F: AffineMap
    G: AffineMap
    eps_x: AffineMap
    eps_y: AffineMap

    @property
    def N(self):
        return self.E.const.shape[0]

    def at(self, k) -> "SampleAffineMaps":
        return SampleAffineMaps(*(getattr(self, name)[k] for name in ("E", "F", "G", "eps_x", "eps_y")))


def affine_maps(spec: PolyModelSpec, record) -> SampleAffineMaps:
    _check_record(spec, record)
    N, n, p, K = record.N, spec.n, spec.p, spec.n_coef
    sl = spec.slices()
    Z, _ = _stack(spec, record.x, record.u)
    be, bf, bg = len(spec.basis_e), len(spec.basis_f), len(spec.basis_g)
    dphi_e = monomial_gradients(record.x, spec.basis_e)  # (N, be, n)
    phi_f = monomial_values(Z, spec.basis_f)
    dphi_f = monomial_gradients(Z, spec.basis_f)[:, :, :n]
    phi_g = monomial_values(Z, spec.basis_g)
    dphi_g = monomial_gradients(Z, spec.basis_g)[:, :, :n]

    E = np.zeros((N, n, n, K))
    F = np.zeros((N, n, n, K))
    G = np.zeros((N, p, n, K))
    eps_x = np.zeros((N, n, K))
    eps_y = np.zeros((N, p, K))
    e_rate = np.einsum("kbj,kj->kb", dphi_e, record.xdot)
    for i in range(n):
        cols_e = slice(sl["e"].start + i * be, sl["e"].start + (i + 1) * be)
        cols_f = slice(sl["f"].start + i * bf, sl["f"].start + (i + 1) * bf)
        E[:, i, :, cols_e] = dphi_e.transpose(0, 2, 1)
        F[:, i, :, cols_f] = dphi_f.transpose(0, 2, 1)
        eps_x[:, i, cols_e] = e_rate
        eps_x[:, i, cols_f] = -phi_f
    for i in range(p):
        cols_g = slice(sl["g"].start + i * bg, sl["g"].start + (i + 1) * bg)
        G[:, i, :, cols_g] = dphi_g.transpose(0, 2, 1)
        eps_y[:, i, cols_g] = -phi_g

    return SampleAffineMaps(
        E=AffineMap(const=np.zeros((N, n, n)), lin=E),
        F=AffineMap(const=np.zeros((N, n, n)), lin=F),
        G=AffineMap(const=np.zeros((N, p, n)), lin=G),
        eps_x=AffineMap(const=np.zeros((N, n)), lin=eps_x),
        eps_y=AffineMap(const=record.y.copy(), lin=eps_y),
    )


@dataclass(frozen=True)
class SamplePointData:
    """Frozen per-sample matrices for one data point, numeric coefficients."""

    E: np.ndarray
    F: np.ndarray
    G: np.ndarray
    eps_x: np.ndarray
    eps_y: np.ndarray
    pi: np.ndarray
    Pi: np.ndarray
    Pi_r: np.ndarray
    Pi_dot: np.ndarray
    degenerate: bool = False

    @property
    def n(self):
        return self.E.shape[0]

    def without_frame(self) -> "SamplePointData":
        n = self.n
        return SamplePointData(
            E=self.E, F=self.F, G=self.G, eps_x=self.eps_x, eps_y=self.eps_y,
            pi=np.zeros((n, n)), Pi=np.eye(n), Pi_r=np.eye(n), Pi_dot=np.zeros((n, n)), degenerate=True,
        )


def sample_points(spec: PolyModelSpec, coefs: ModelCoefficients, record, frames=None) -> List[SamplePointData]:
    """Numeric sample data; without frames every sample takes the full-space (degenerate) shape."""
    coefs.check(spec)
    E = jacobian_e(spec, coefs, record.x)
    F = jacobian_f_x(spec, coefs, record.x, record.u)
    G = jacobian_g_x(spec, coefs, record.x, record.u)
    eps_x, eps_y = equation_errors(spec, coefs, record)
    n = spec.n
    points = []
    for k in range(record.N):
        if frames is None:
            frame_fields = dict(pi=np.zeros((n, n)), Pi=np.eye(n), Pi_r=np.eye(n), Pi_dot=np.zeros((n, n)), degenerate=True)
        else:
            frame = frames[k]
            frame_fields = dict(pi=frame.pi, Pi=frame.Pi, Pi_r=frame.Pi_r, Pi_dot=frame.Pi_dot, degenerate=frame.degenerate)
        points.append(SamplePointData(E=E[k], F=F[k], G=G[k], eps_x=eps_x[k], eps_y=eps_y[k], **frame_fields))
    return points


class CoefficientDocument(pydantic.BaseModel):
    e: List[List[float]]
    f: List[List[float]]
    g: List[List[float]]


class ModelDocument(pydantic.BaseModel):
    spec: PolyModelSpec
    coefficients: CoefficientDocument
    metric: Optional[Dict[str, List[List[float]]]] = None
    meta: Dict[str, Any] = {}

    def to_coefficients(self) -> ModelCoefficients:
        return ModelCoefficients(
            coef_e=np.array(self.coefficients.e, dtype=float).reshape(self.spec.n, len(self.spec.basis_e)),
            coef_f=np.array(self.coefficients.f, dtype=float).reshape(self.spec.n, len(self.spec.basis_f)),
            coef_g=np.array(self.coefficients.g, dtype=float).reshape(self.spec.p, len(self.spec.basis_g)),
        ).check(self.spec)


def model_document(spec: PolyModelSpec, coefs: ModelCoefficients, P=None, meta=None) -> ModelDocument:
    return ModelDocument(
        spec=spec,
        coefficients=CoefficientDocument(e=coefs.coef_e.tolist(), f=coefs.coef_f.tolist(), g=coefs.coef_g.tolist()),
        metric=None if P is None else {"P": np.asarray(P, dtype=float).tolist()},
        meta=meta or {},
    )


def save_model(path, spec: PolyModelSpec, coefs: ModelCoefficients, P=None, meta=None) -> Path:
    # json floats are written with repr, which round-trips exactly
    path = Path(path)
    path.write_text(model_document(spec, coefs, P=P, meta=meta).json(indent=2))
    logger.info(f"Model saved to {path}.")
    return path


def load_model(path) -> ModelDocument:
    path = Path(path)
    if not path.exists():
        raise ModelSpecError(f"model file not found: {path}")
    try:
        return ModelDocument.parse_obj(json.loads(path.read_text()))
    except (json.JSONDecodeError, pydantic.ValidationError) as e:
        raise ModelSpecError(f"invalid model file {path}: {e}")
