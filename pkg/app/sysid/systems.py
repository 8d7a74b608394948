import logging
from typing import List, Literal, Optional, Tuple

import numpy as np
import pydantic

from app.sysid.model import ModelCoefficients, PolyModelSpec


logger = logging.getLogger(__name__)


class SyntheticSystem(pydantic.BaseModel):
    """
    Reference oscillators used to generate data. The scalar input enters additively
    in the velocity equation (van_der_pol, linear_osc) or the first one (fitzhugh_nagumo, hopf).
    """

    kind: Literal["van_der_pol", "fitzhugh_nagumo", "linear_osc", "hopf"] = "van_der_pol"
    mu: float = pydantic.Field(1.0, ge=0.0, description="Van der Pol damping parameter.")
    omega: float = pydantic.Field(1.0, gt=0.0, description="Angular frequency (linear_osc, hopf).")
    zeta: float = pydantic.Field(0.1, ge=0.0, description="Damping ratio (linear_osc).")
    growth: float = pydantic.Field(1.0, gt=0.0, description="Radial growth rate (hopf).")
    a: float = 0.7
    b: float = 0.8
    tau: float = pydantic.Field(12.5, gt=0.0)
    current: float = 0.5
    x0: Optional[List[float]] = pydantic.Field(None, description="Initial state; per-system default when empty.")

    @pydantic.validator("x0")
    def two_states(cls, val):
        if val is not None and len(val) != 2:
            raise ValueError(f"reference systems have two states, got x0 of length {len(val)}")
        return val

    def initial_state(self):
        if self.x0 is not None:
            return list(self.x0)
        return {
            "van_der_pol": [2.0, 0.0],
            "fitzhugh_nagumo": [-1.0, 1.0],
            "linear_osc": [1.0, 0.0],
            "hopf": [0.1, 0.0],
        }[self.kind]


# exponents over (x1, x2, u)
_X1, _X2, _U = (1, 0, 0), (0, 1, 0), (0, 0, 1)


def _terms_to_model(rows) -> Tuple[PolyModelSpec, ModelCoefficients]:
    basis_f = []
    for row in rows:
        for monomial in row:
            if monomial not in basis_f:
                basis_f.append(monomial)
    coef_f = np.zeros((2, len(basis_f)))
    for i, row in enumerate(rows):
        for monomial, value in row.items():
            coef_f[i, basis_f.index(monomial)] = value
    spec = PolyModelSpec(
        n=2,
        m=1,
        p=1,
        deg_e=1,
        deg_f_x=max(sum(mono[:2]) for mono in basis_f),
        deg_f_u=max(mono[2] for mono in basis_f),
        deg_g=1,
        basis_e=[(1, 0), (0, 1)],
        basis_f=basis_f,
        basis_g=[_X1],
    )
    coefs = ModelCoefficients(coef_e=np.eye(2), coef_f=coef_f, coef_g=np.array([[1.0]]))
    return spec, coefs


def reference_model(system: SyntheticSystem) -> Tuple[PolyModelSpec, ModelCoefficients]:
    """Return the system as an explicit polynomial model (e(x) = x, y = x1)."""
    if system.kind == "van_der_pol":
        rows = [
            {_X2: 1.0},
            {_X1: -1.0, _X2: system.mu, (2, 1, 0): -system.mu, _U: 1.0},
        ]
    elif system.kind == "fitzhugh_nagumo":
        rows = [
            {_X1: 1.0, (3, 0, 0): -1.0 / 3.0, _X2: -1.0, (0, 0, 0): system.current, _U: 1.0},
            {_X1: 1.0 / system.tau, _X2: -system.b / system.tau, (0, 0, 0): system.a / system.tau},
        ]
    elif system.kind == "linear_osc":
        w, z = system.omega, system.zeta
        rows = [
            {_X2: 1.0},
            {_X1: -w * w, _X2: -2.0 * z * w, _U: 1.0},
        ]
    elif system.kind == "hopf":
        lam, w = system.growth, system.omega
        rows = [
            {_X1: lam, _X2: -w, (3, 0, 0): -lam, (1, 2, 0): -lam, _U: 1.0},
            {_X1: w, _X2: lam, (2, 1, 0): -lam, (0, 3, 0): -lam},
        ]
    else:  # pragma: no cover
        raise ValueError(f"unknown reference system {system.kind}")
    logger.debug(f"Reference model for {system.kind}: {rows}")
    return _terms_to_model(rows)
