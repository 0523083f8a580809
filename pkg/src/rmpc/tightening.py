"""Offline constraint-tightening tables.

For every facet ``G_j`` of the invariant set and every pair ``(t, i)`` with
``0 <= i < t <= N`` the table holds

* ``sigma[j, t-1, i]`` -- support of the mapped independent set
  ``{DA[t][i] W w : R w <= r}`` along ``G_j``;
* ``kappa[j, t-1, i, l]`` -- ``||L_l^T DA[t][i]^T G_j||`` in the dual of the
  term's ball norm, the factor multiplying ``phi_l`` in the tightened row.

Both depend only on ``t - 1 - i`` so only ``n_g * N`` distinct supports are
solved.  Entries with ``i >= t`` are zero and never read.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import ImpulseStacks
from .exceptions import TableMismatch
from .polytope import Polytope
from .uncertainty import UncertaintyModel, dependent_coefficient

SCHEMA_VERSION = 1


def table_key(G, stacks: ImpulseStacks, model: UncertaintyModel) -> str:
    """Hash of everything a table depends on.

    Offsets of the invariant set do not enter the table, so shrinking the
    set keeps the key.
    """
    h = hashlib.sha256()

    def feed(a):
        a = np.ascontiguousarray(np.asarray(a, dtype=float))
        h.update(str(a.shape).encode())
        h.update(a.tobytes())

    feed(G)
    h.update(str(stacks.N).encode())
    feed(stacks.powers[1])
    for t in range(1, stacks.N + 1):
        feed(stacks.DA[t][0])
    feed(stacks.BA[1][0])
    feed(model.W)
    feed(model.Wpoly.normals)
    feed(model.Wpoly.offsets)
    for term in model.terms:
        feed(term.L)
        h.update(term.ball_norm.value.encode())
    return h.hexdigest()


@dataclass(frozen=True)
class TighteningTable:
    sigma: np.ndarray  # (n_g, N, N)
    kappa: np.ndarray  # (n_g, N, N, n_q)
    key: str

    @property
    def n_g(self) -> int:
        return self.sigma.shape[0]

    @property
    def N(self) -> int:
        return self.sigma.shape[1]

    @property
    def n_q(self) -> int:
        return self.kappa.shape[3]

    def check(self, key: str) -> None:
        if key != self.key:
            raise TableMismatch("tightening table was built for different set, dynamics or uncertainty data")

    def constant_tightening(self, radii=None) -> np.ndarray:
        """``(n_g, N)`` total tightening when every radius is a constant."""
        total = self.sigma.sum(axis=2)
        if radii is not None and self.n_q:
            total = total + np.einsum("jtil,l->jt", self.kappa, np.asarray(radii, dtype=float))
        return total

    def save(self, path) -> None:
        data = {
            "schema_version": SCHEMA_VERSION,
            "key": self.key,
            "shape": list(self.kappa.shape),
            "sigma": self.sigma.tolist(),
            "kappa": self.kappa.tolist(),
        }
        Path(path).write_text(json.dumps(data))

    @classmethod
    def load(cls, path) -> "TighteningTable":
        data = json.loads(Path(path).read_text())
        if data.get("schema_version") != SCHEMA_VERSION:
            raise TableMismatch(f"unsupported table schema {data.get('schema_version')}")
        n_g, N, _, n_q = data["shape"]
        sigma = np.array(data["sigma"], dtype=float).reshape(n_g, N, N)
        kappa = np.array(data["kappa"], dtype=float).reshape(n_g, N, N, n_q)
        return cls(sigma, kappa, data["key"])


def build_table(I: Polytope, stacks: ImpulseStacks, model: UncertaintyModel) -> TighteningTable:
    G = I.normals
    N = stacks.N
    if stacks.DA[1][0].shape != (I.dim, model.d):
        raise ValueError(f"impulse stacks map R^{stacks.DA[1][0].shape[1]} -> R^{stacks.DA[1][0].shape[0]}, "
                         f"set is {I.dim}-dimensional and uncertainty {model.d}-dimensional")
    n_g, n_q = G.shape[0], model.n_q
    # by lag k = t - 1 - i
    sig_lag = np.zeros((n_g, N))
    kap_lag = np.zeros((n_g, N, n_q))
    any_w = bool(np.any(model.W))
    for k in range(N):
        DA = stacks.DA[k + 1][0]  # A^k D
        for j in range(n_g):
            direction = DA.T @ G[j]
            if any_w:
                sig_lag[j, k] = model.Wpoly.support(model.W.T @ direction)
            for l, term in enumerate(model.terms):
                kap_lag[j, k, l] = dependent_coefficient(direction, term.L, term.ball_norm)

    sigma = np.zeros((n_g, N, N))
    kappa = np.zeros((n_g, N, N, n_q))
    for t in range(1, N + 1):
        for i in range(t):
            sigma[:, t - 1, i] = sig_lag[:, t - 1 - i]
            kappa[:, t - 1, i, :] = kap_lag[:, t - 1 - i, :]
    sigma.setflags(write=False)
    kappa.setflags(write=False)
    return TighteningTable(sigma, kappa, table_key(G, stacks, model))
