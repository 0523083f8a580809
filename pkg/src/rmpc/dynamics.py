"""Linear time-invariant models and their impulse responses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .exceptions import DimensionMismatch, NonFiniteResult


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ContinuousLTI:
    """``xdot = Ac x + Bc (u + w)``."""

    Ac: np.ndarray
    Bc: np.ndarray

    def __post_init__(self):
        Ac, Bc = _frozen(np.atleast_2d(self.Ac)), _frozen(np.atleast_2d(self.Bc))
        if Ac.shape[0] != Ac.shape[1]:
            raise DimensionMismatch("Ac must be square")
        if Bc.shape[0] != Ac.shape[0]:
            raise DimensionMismatch("Bc must have as many rows as Ac")
        object.__setattr__(self, "Ac", Ac)
        object.__setattr__(self, "Bc", Bc)


@dataclass(frozen=True)
class DiscreteLTI:
    """``x[k+1] = A x[k] + B u[k] + D p[k]``."""

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A, B, D = (_frozen(np.atleast_2d(m)) for m in (self.A, self.B, self.D))
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[0] != n or D.shape[0] != n:
            raise DimensionMismatch(f"incommensurate shapes A{A.shape} B{B.shape} D{D.shape}")
        if not all(np.all(np.isfinite(m)) for m in (A, B, D)):
            raise NonFiniteResult("system matrices must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "D", D)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def d(self) -> int:
        return self.D.shape[1]

    def step(self, x, u, p) -> np.ndarray:
        return self.A @ x + self.B @ u + self.D @ p


def discretize_impulsive(sys: ContinuousLTI, Ts: float):
    """Discretize with an impulsive input at the start of each period.

    The input is a velocity increment applied at the beginning of the
    interval, the disturbance a constant acceleration held over it::

        A = exp(Ac Ts),  B = A Bc,  E = int_0^Ts exp(Ac (Ts - t)) Bc dt

    ``E`` is read off the augmented exponential ``exp([[Ac, Bc], [0, 0]] Ts)``.

    Returns
    -------
    A, B, E : ndarray
    """
    if not Ts > 0:
        raise ValueError(f"Ts must be positive, got {Ts}")
    n, m = sys.Bc.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = sys.Ac
    aug[:n, n:] = sys.Bc
    with np.errstate(over="raise", invalid="raise"):
        try:
            Phi = expm(aug * Ts)
        except FloatingPointError as exc:
            raise NonFiniteResult("matrix exponential overflowed") from exc
    if not np.all(np.isfinite(Phi)):
        raise NonFiniteResult("matrix exponential overflowed")
    A = Phi[:n, :n]
    E = Phi[:n, n:]
    return A, A @ sys.Bc, E


@dataclass(frozen=True)
class ImpulseStacks:
    """Impulse-response matrices over an ``N`` step horizon.

    ``BA[t][i] = A^(t-1-i) B`` and ``DA[t][i] = A^(t-1-i) D`` for
    ``t = 1..N`` and ``i = 0..t-1``; index ``0`` of the outer lists is unused
    so that ``t`` reads naturally.
    """

    N: int
    powers: tuple  # A^0 .. A^N
    BA: tuple
    DA: tuple

    def nominal_state(self, x, inputs, t: int) -> np.ndarray:
        """``A^t x + sum_i BA[t][i] u_i``."""
        out = self.powers[t] @ x
        for i in range(t):
            out = out + self.BA[t][i] @ inputs[i]
        return out

    def state(self, x, inputs, disturbances, t: int) -> np.ndarray:
        out = self.nominal_state(x, inputs, t)
        for i in range(t):
            out = out + self.DA[t][i] @ disturbances[i]
        return out


def impulse_stacks(sys: DiscreteLTI, N: int) -> ImpulseStacks:
    if N < 1:
        raise ValueError(f"horizon must be at least 1, got {N}")
    powers = [np.eye(sys.n)]
    for _ in range(N):
        powers.append(powers[-1] @ sys.A)
    BA, DA = [()], [()]
    for t in range(1, N + 1):
        BA.append(tuple(_frozen(powers[t - 1 - i] @ sys.B) for i in range(t)))
        DA.append(tuple(_frozen(powers[t - 1 - i] @ sys.D) for i in range(t)))
    return ImpulseStacks(N, tuple(_frozen(P) for P in powers), tuple(BA), tuple(DA))
