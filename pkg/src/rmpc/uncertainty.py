"""State- and input-dependent additive uncertainty.

The uncertainty set at ``(x, u)`` is the Minkowski sum of a polytopic part
``{W w : R w <= r}`` and ``n_q`` norm balls mapped through ``L_l``::

    P(x, u) = { W w + sum_l L_l q_l :  R w <= r,
                ||q_l|| <= phi_l(||Fx_l x||, ||Fu_l u||) }

Each ``phi_l`` is restricted to ``c0 + cx * ||Fx x|| + cu * ||Fu u||`` with
non-negative coefficients, which keeps it convex and non-decreasing.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import DimensionMismatch
from .polytope import Polytope


class NormKind(str, enum.Enum):
    L1 = "1"
    L2 = "2"
    LINF = "inf"

    @property
    def dual(self) -> "NormKind":
        return _DUAL[self]

    @property
    def ord(self):
        return {"1": 1, "2": 2, "inf": np.inf}[self.value]

    def of(self, v) -> float:
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.size == 0:
            return 0.0
        return float(np.linalg.norm(v, self.ord))

    @classmethod
    def parse(cls, value) -> "NormKind":
        if isinstance(value, NormKind):
            return value
        aliases = {"1": cls.L1, "l1": cls.L1, "2": cls.L2, "l2": cls.L2,
                   "inf": cls.LINF, "linf": cls.LINF, "infinity": cls.LINF}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown norm {value!r}") from None


_DUAL = {NormKind.L1: NormKind.LINF, NormKind.L2: NormKind.L2, NormKind.LINF: NormKind.L1}


def dual_norm(p: NormKind) -> NormKind:
    """Hoelder conjugate of ``p``."""
    return NormKind.parse(p).dual


def dependent_coefficient(v, L, ball_norm) -> float:
    """``max v @ (L q)`` over ``||q|| <= 1``, i.e. ``||L^T v||`` in the dual norm."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    L = np.atleast_2d(np.asarray(L, dtype=float))
    if L.shape[0] != v.shape[0]:
        raise DimensionMismatch(f"direction of length {v.shape[0]} for a map with {L.shape[0]} rows")
    return dual_norm(ball_norm).of(L.T @ v)


def _matrix(a, cols=None):
    if a is None:
        return None
    a = np.atleast_2d(np.array(a, dtype=float))
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DependencyTerm:
    """One norm-ball term ``L q`` with ``||q||_ball <= phi(x, u)``.

    ``Fx`` / ``Fu`` select the state / input components whose norms drive
    the radius; either may be ``None`` when the term does not depend on it.
    """

    L: np.ndarray
    ball_norm: NormKind = NormKind.L2
    c0: float = 0.0
    Fx: np.ndarray | None = None
    state_norm: NormKind = NormKind.L2
    cx: float = 0.0
    Fu: np.ndarray | None = None
    input_norm: NormKind = NormKind.L2
    cu: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "L", _matrix(self.L))
        object.__setattr__(self, "Fx", _matrix(self.Fx))
        object.__setattr__(self, "Fu", _matrix(self.Fu))
        for name in ("ball_norm", "state_norm", "input_norm"):
            object.__setattr__(self, name, NormKind.parse(getattr(self, name)))
        for name in ("c0", "cx", "cu"):
            value = float(getattr(self, name))
            if not (value >= 0 and np.isfinite(value)):
                raise ValueError(f"{name} must be finite and non-negative, got {value}")
            object.__setattr__(self, name, value)
        if self.cx > 0 and self.Fx is None:
            raise ValueError("cx > 0 needs a state selector Fx")
        if self.cu > 0 and self.Fu is None:
            raise ValueError("cu > 0 needs an input selector Fu")

    @property
    def depends_on_state(self) -> bool:
        return self.cx > 0

    @property
    def depends_on_input(self) -> bool:
        return self.cu > 0

    @property
    def is_zero(self) -> bool:
        return self.c0 == 0 and self.cx == 0 and self.cu == 0


def phi_eval(term: DependencyTerm, x, u) -> float:
    """Radius of the term's norm ball at ``(x, u)``."""
    value = term.c0
    if term.cx > 0:
        value += term.cx * term.state_norm.of(term.Fx @ np.asarray(x, dtype=float))
    if term.cu > 0:
        value += term.cu * term.input_norm.of(term.Fu @ np.asarray(u, dtype=float))
    return value


@dataclass(frozen=True)
class UncertaintyModel:
    W: np.ndarray
    Wpoly: Polytope
    terms: tuple = field(default_factory=tuple)

    def __post_init__(self):
        W = _matrix(self.W)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "terms", tuple(self.terms))
        if W.shape[1] != self.Wpoly.dim:
            raise DimensionMismatch(f"W has {W.shape[1]} columns but the w-polytope is {self.Wpoly.dim}-dimensional")
        for k, term in enumerate(self.terms):
            if term.L.shape[0] != self.d:
                raise DimensionMismatch(f"term {k}: L has {term.L.shape[0]} rows, expected {self.d}")

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def n_q(self) -> int:
        return len(self.terms)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.W) and all(t.is_zero for t in self.terms)

    def radii(self, x, u) -> np.ndarray:
        return np.array([phi_eval(t, x, u) for t in self.terms])


def independent_model(model: UncertaintyModel, radii) -> UncertaintyModel:
    """Replace each term's radius by a constant."""
    terms = [replace(t, c0=float(r), cx=0.0, cu=0.0, Fx=None, Fu=None) for t, r in zip(model.terms, radii)]
    return UncertaintyModel(model.W, model.Wpoly, tuple(terms))


def zero_model(model: UncertaintyModel) -> UncertaintyModel:
    """Same dimensions, no uncertainty at all."""
    return UncertaintyModel(np.zeros_like(model.W), model.Wpoly, ())


def hull_bound(model: UncertaintyModel, X: Polytope, U: Polytope) -> np.ndarray:
    """Largest radius of every term over ``X x U``.

    A convex ``phi`` attains its maximum at a vertex of the product; with the
    separable affine form the state and input parts are maximized apart.
    """
    VX, VU = None, None
    radii = []
    for term in model.terms:
        r = term.c0
        if term.cx > 0:
            VX = X.vertices() if VX is None else VX
            r += term.cx * max(term.state_norm.of(term.Fx @ v) for v in VX)
        if term.cu > 0:
            VU = U.vertices() if VU is None else VU
            r += term.cu * max(term.input_norm.of(term.Fu @ v) for v in VU)
        radii.append(r)
    return np.array(radii)


def conservative_model(model: UncertaintyModel, X: Polytope, U: Polytope) -> UncertaintyModel:
    return independent_model(model, hull_bound(model, X, U))


def _ball_sample(rng, dim, norm: NormKind, radius, extreme):
    if radius == 0 or dim == 0:
        return np.zeros(dim)
    if norm is NormKind.LINF:
        if extreme:
            g = rng.standard_normal(dim)
            return radius * g / np.abs(g).max()
        return rng.uniform(-radius, radius, dim)
    if norm is NormKind.L2:
        g = rng.standard_normal(dim)
        g /= np.linalg.norm(g)
        return radius * g if extreme else radius * rng.uniform() ** (1.0 / dim) * g
    # uniform on the l1 ball: Dirichlet with one slack coordinate, random signs
    signs = rng.choice([-1.0, 1.0], size=dim)
    if extreme:
        mags = rng.dirichlet(np.ones(dim))
    else:
        mags = rng.dirichlet(np.ones(dim + 1))[:dim]
    return radius * signs * mags


@dataclass(frozen=True)
class DisturbanceSample:
    p: np.ndarray
    w: np.ndarray
    q: tuple
    radii: np.ndarray


def sample(model: UncertaintyModel, x, u, seed=None, strategy: str = "uniform", *, parts: bool = False):
    """Draw one disturbance ``p`` from ``P(x, u)``.

    ``uniform`` draws ``w`` as a Dirichlet-weighted combination of the
    w-polytope vertices and each ``q_l`` uniformly in its ball; ``extreme``
    picks a random vertex and puts every ``q_l`` on its ball's boundary.

    ``seed`` may be an integer or a :class:`numpy.random.Generator`.  With
    ``parts=True`` a :class:`DisturbanceSample` carrying the components is
    returned instead of ``p``.
    """
    if strategy not in ("uniform", "extreme"):
        raise ValueError(f"unknown sampling strategy {strategy!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    extreme = strategy == "extreme"
    V = model.Wpoly.vertices()
    if extreme:
        w = V[rng.integers(len(V))].copy()
    else:
        w = rng.dirichlet(np.ones(len(V))) @ V
    radii = model.radii(x, u)
    qs = tuple(_ball_sample(rng, t.L.shape[1], t.ball_norm, r, extreme) for t, r in zip(model.terms, radii))
    p = model.W @ w
    for t, q in zip(model.terms, qs):
        p = p + t.L @ q
    if parts:
        return DisturbanceSample(p, w, qs, radii)
    return p
