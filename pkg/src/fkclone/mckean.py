"""Selection-rate families for the nonlinear (McKean) part of the dynamics.

A selection rate ``W(x, y)`` replaces a particle at ``x`` by a copy of a
particle at ``y``.  Any family with ``W(y, x) - W(x, y) = V(x) - V(y)``
reproduces the normalized Feynman-Kac flow in the mean.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

KILLING_CLONING = "killing_cloning"
FITNESS_INCREASING = "fitness_increasing"
TABLE = "table"
FAMILIES = (KILLING_CLONING, FITNESS_INCREASING)

SUFFICIENT_TOL = 1e-12


def pos(a):
    return np.maximum(a, 0.0)


def neg(a):
    return np.maximum(-a, 0.0)


@dataclass(frozen=True, eq=False)
class SelectionRates:
    family: str
    potential: np.ndarray
    c: float = 0.0
    table: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.potential, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "potential", v)
        if self.family not in FAMILIES + (TABLE,):
            raise ValueError(f"unknown selection family {self.family!r}")
        if self.family == TABLE:
            t = np.array(self.table, dtype=float)
            if t.shape != (len(v), len(v)) or np.any(t < 0):
                raise ValueError("table must be a non-negative S x S matrix")
            t.setflags(write=False)
            object.__setattr__(self, "table", t)

    @classmethod
    def killing_cloning(cls, potential, c: float = 0.0) -> "SelectionRates":
        return cls(KILLING_CLONING, potential, float(c))

    @classmethod
    def fitness_increasing(cls, potential) -> "SelectionRates":
        return cls(FITNESS_INCREASING, potential)

    @classmethod
    def from_table(cls, table, potential) -> "SelectionRates":
        """Arbitrary fixed rates; only useful to probe the checker."""
        return cls(TABLE, potential, table=table)

    @cached_property
    def matrix(self) -> np.ndarray:
        v = self.potential
        if self.family == KILLING_CLONING:
            m = neg(v - self.c)[:, None] + pos(v - self.c)[None, :]
        elif self.family == FITNESS_INCREASING:
            m = pos(v[None, :] - v[:, None])
        else:
            m = self.table.copy()
        m.setflags(write=False)
        return m


def selection_rate(sr: SelectionRates, x: int, y: int) -> float:
    v, c = sr.potential, sr.c
    if sr.family == KILLING_CLONING:
        return max(c - v[x], 0.0) + max(v[y] - c, 0.0)
    if sr.family == FITNESS_INCREASING:
        return max(v[y] - v[x], 0.0)
    return float(sr.table[x, y])


def check_sufficient_condition(sr: SelectionRates) -> tuple[bool, float]:
    """Largest violation of ``W(y,x) - W(x,y) = V(x) - V(y)`` over all pairs."""
    w, v = sr.matrix, sr.potential
    viol = float(np.max(np.abs(w.T - w - (v[:, None] - v[None, :]))))
    return viol <= SUFFICIENT_TOL, viol


def total_selection_rate(sr: SelectionRates, states) -> float:
    """``(1/N) sum_{i,j} W(x_i, x_j)`` for a particle configuration."""
    states = np.asarray(getattr(states, "states", states), dtype=np.int64)
    counts = np.bincount(states, minlength=len(sr.potential)).astype(float)
    return float(counts @ sr.matrix @ counts) / len(states)


def mean_selection_drift(sr: SelectionRates, mu, f) -> float:
    """``sum_x mu(x) sum_y W(x,y)(f(y) - f(x)) mu(y)``."""
    mu, f = np.asarray(mu, float), np.asarray(f, float)
    return float(mu @ ((sr.matrix * (f[None, :] - f[:, None])) @ mu))
