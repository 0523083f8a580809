"""Formation-keeping case study: relative motion in a circular low orbit.

State ``(rho, rho_dot)`` in the LVLH frame (m, m/s), impulsive velocity
increments as input (m/s), sampling period ``Ts``.  Three uncertainty
sources act on the follower:

* drag, an independent box ``|w|_inf <= w_max`` of accelerations;
* Gates thruster error, a fixed ball of radius ``sigma_fix`` plus a ball
  proportional to the commanded increment, ``sigma_rcs * |u|_2``;
* navigation error, a fixed box (``p_max``, ``v_max``) plus boxes that grow
  with the position and velocity norms (``sigma_pos``, ``sigma_vel``).

The 21 disturbance channels are ordered
``(w[3], e_fix[6], v_fix[3], v_prop[3], e_pos[3], e_vel[3])`` and enter
through ``D = [E, -A, B, B, -A [I;0], -A [0;I]]``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .controller import ControllerConfig
from .dynamics import ContinuousLTI, DiscreteLTI, discretize_impulsive
from .exceptions import InvalidParams
from .polytope import Polytope, box
from .uncertainty import DependencyTerm, NormKind, UncertaintyModel, conservative_model, zero_model

VARIANTS = ("nominal", "conservative", "dependent")

_POSITIVE = ("mu", "a", "Ts", "pos_bound", "vel_bound", "u_bound")
_NON_NEGATIVE = ("w_max", "sigma_fix", "sigma_rcs", "p_max", "v_max", "sigma_pos", "sigma_vel", "lam")


@dataclass(frozen=True)
class SatelliteParams:
    mu: float = 3.986e14            # m^3/s^2
    a: float = 6793.137e3           # m
    Ts: float = 100.0               # s
    pos_bound: float = 0.10         # m
    vel_bound: float = 1e-3         # m/s
    u_bound: float = 2e-3           # m/s
    w_max: float = 50e-9            # m/s^2
    sigma_fix: float = 1e-6         # m/s
    sigma_rcs: float = math.tan(math.pi / 180)
    p_max: float = 0.4e-2           # m
    v_max: float = 4e-6             # m/s
    sigma_pos: float = 0.02
    sigma_vel: float = 0.001
    N: int = 4
    lam: float = 0.003

    def __post_init__(self):
        errors = []
        for name in _POSITIVE:
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                errors.append(f"{name} must be positive, got {value}")
        for name in _NON_NEGATIVE:
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                errors.append(f"{name} must be non-negative, got {value}")
        if int(self.N) != self.N or self.N < 1:
            errors.append(f"N must be a positive integer, got {self.N}")
        if errors:
            raise InvalidParams("; ".join(errors))

    @property
    def omega(self) -> float:
        """Mean motion of the reference orbit (rad/s)."""
        return math.sqrt(self.mu / self.a ** 3)

    @property
    def period(self) -> float:
        return 2 * math.pi / self.omega

    def replace(self, **changes) -> "SatelliteParams":
        data = asdict(self)
        unknown = set(changes) - {f.name for f in fields(self)}
        if unknown:
            raise InvalidParams(f"unknown parameters {sorted(unknown)}")
        data.update(changes)
        return SatelliteParams(**data)

    def without_uncertainty(self) -> "SatelliteParams":
        return self.replace(**{k: 0.0 for k in _NON_NEGATIVE if k != "lam"})


def cw_dynamics(omega: float) -> ContinuousLTI:
    """Clohessy-Wiltshire relative dynamics with acceleration input."""
    Ac = np.zeros((6, 6))
    Ac[:3, 3:] = np.eye(3)
    Ac[3, 0] = 3 * omega ** 2
    Ac[3, 4] = 2 * omega
    Ac[4, 3] = -2 * omega
    Ac[5, 2] = -omega ** 2
    Bc = np.vstack([np.zeros((3, 3)), np.eye(3)])
    return ContinuousLTI(Ac, Bc)


@dataclass(frozen=True)
class SatelliteProblem:
    params: SatelliteParams
    continuous: ContinuousLTI
    plant: DiscreteLTI
    E: np.ndarray
    X: Polytope
    U: Polytope
    model: UncertaintyModel  # the true, state/input dependent uncertainty

    def model_for(self, variant: str) -> UncertaintyModel:
        if variant == "dependent":
            return self.model
        if variant == "conservative":
            return conservative_model(self.model, self.X, self.U)
        if variant == "nominal":
            return zero_model(self.model)
        raise InvalidParams(f"unknown controller variant {variant!r}; expected one of {VARIANTS}")

    def config(self, variant: str = "dependent", N: int | None = None) -> ControllerConfig:
        return ControllerConfig(
            system=self.plant, X=self.X, U=self.U, I=self.X,
            model=self.model_for(variant),
            N=int(self.params.N if N is None else N),
            lam=self.params.lam,
        )


def satellite_model(params: SatelliteParams) -> UncertaintyModel:
    """The 21-channel uncertainty model (9 independent, 4 dependent terms)."""
    d = 21
    # w is normalized to the unit box; W carries the physical bounds
    W = np.zeros((d, 9))
    W[:9, :9] = np.diag([params.w_max] * 3 + [params.p_max] * 3 + [params.v_max] * 3)
    Wpoly = box(-np.ones(9), np.ones(9))

    def channel(start):
        L = np.zeros((d, 3))
        L[start:start + 3] = np.eye(3)
        return L

    pos = np.hstack([np.eye(3), np.zeros((3, 3))])
    vel = np.hstack([np.zeros((3, 3)), np.eye(3)])
    terms = (
        DependencyTerm(channel(9), NormKind.L2, c0=params.sigma_fix),
        DependencyTerm(channel(12), NormKind.L2, Fu=np.eye(3), input_norm=NormKind.L2, cu=params.sigma_rcs),
        DependencyTerm(channel(15), NormKind.LINF, Fx=pos, state_norm=NormKind.L2, cx=params.sigma_pos),
        DependencyTerm(channel(18), NormKind.LINF, Fx=vel, state_norm=NormKind.L2, cx=params.sigma_vel),
    )
    return UncertaintyModel(W, Wpoly, terms)


def build_satellite(params: SatelliteParams | None = None) -> SatelliteProblem:
    params = SatelliteParams() if params is None else params
    cont = cw_dynamics(params.omega)
    A, B, E = discretize_impulsive(cont, params.Ts)
    pos_sel = np.vstack([np.eye(3), np.zeros((3, 3))])
    vel_sel = np.vstack([np.zeros((3, 3)), np.eye(3)])
    D = np.hstack([E, -A, B, B, -A @ pos_sel, -A @ vel_sel])
    plant = DiscreteLTI(A, B, D)
    bound = np.array([params.pos_bound] * 3 + [params.vel_bound] * 3)
    X = box(-bound, bound)
    U = box(-params.u_bound * np.ones(3), params.u_bound * np.ones(3))
    return SatelliteProblem(params, cont, plant, E, X, U, satellite_model(params))


def build_satellite_config(params: SatelliteParams | None = None, variant: str = "dependent"):
    """Controller configuration and plant for the case study."""
    problem = build_satellite(params)
    return problem.config(variant), problem.plant
