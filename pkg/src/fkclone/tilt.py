"""Exponentially tilted generators.

For a tilt ``k`` the generator ``L_k f(x) = sum_y W(x,y)[e^{k g(x,y)} f(y) - f(x)] + k h(x) f(x)``
splits into a proper jump generator with rates ``W(x,y) e^{k g(x,y)}`` plus
the diagonal potential ``V_k = escape_k - escape + k h``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse

from .errors import NonFinite
from .model import JumpModel, row_cumulative, row_sums

# exp() overflows double precision just above 709
MAX_EXPONENT = 700.0


@dataclass(frozen=True, eq=False)
class TiltedDynamics:
    base: JumpModel
    k: float
    tilted_csr: sparse.csr_matrix = field(repr=False)
    tilted_escape: np.ndarray = field(repr=False)
    potential: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.base.size

    @cached_property
    def tilted_rate(self) -> np.ndarray:
        a = self.tilted_csr.toarray()
        a.setflags(write=False)
        return a

    @cached_property
    def jump_cumulative(self) -> np.ndarray:
        """Cumulative rows of the tilted jump kernel, aligned with ``tilted_csr``."""
        c = row_cumulative(self.tilted_csr.indptr, self.tilted_csr.data)
        c.setflags(write=False)
        return c

    def jump_generator(self) -> np.ndarray:
        """Dense generator of the modified jump process (zero row sums)."""
        m = self.tilted_rate.copy()
        m[np.diag_indices(self.size)] = -self.tilted_escape
        return m


def tilt(model: JumpModel, k: float) -> TiltedDynamics:
    k = float(k)
    expo = k * model.edge_g
    if not np.isfinite(k) or (expo.size and np.max(np.abs(expo)) > MAX_EXPONENT):
        raise NonFinite(f"tilt k={k} is numerically out of range for this observable")
    base = model.rate_csr
    data = base.data * np.exp(expo)
    csr = sparse.csr_matrix((data, base.indices.copy(), base.indptr.copy()), shape=base.shape)
    esc = row_sums(csr.indptr, csr.data)
    pot = esc - model.escape + k * model.stay_h
    if not (np.all(np.isfinite(esc)) and np.all(np.isfinite(pot))):
        raise NonFinite(f"tilt k={k} produced non-finite rates")
    for a in (esc, pot):
        a.setflags(write=False)
    return TiltedDynamics(model, k, csr, esc, pot)


def tilted_matrix(td: TiltedDynamics) -> np.ndarray:
    """Dense ``L_k``: tilted rates off the diagonal, ``-escape + k h`` on it."""
    m = td.tilted_rate.copy()
    m[np.diag_indices(td.size)] = -td.base.escape + td.k * td.base.stay_h
    return m
