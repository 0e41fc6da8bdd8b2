"""The cloning algorithm: mutation events carrying a random number of clones,
plus independent killing, with the cloning-factor counter."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from math import comb

import numpy as np

from . import _engine
from .errors import EnsembleTooSmall, MeanTooLarge
from .mckean import SelectionRates, mean_selection_drift, neg, pos
from .particles import (CloningFactor, EventLog, EventRecords, ParticleEnsemble, _outputs,
                        _prepend_start, checkpoint_grid, tilted_kernel_args)
from .streams import as_generator
from .tilt import TiltedDynamics


@dataclass(frozen=True, eq=False)
class CloneSizeDistribution:
    """Per-state clone-size law ``law[x, n]`` on ``{0, ..., K-1}``.

    ``mean[x] = (V(x) - c)^+ / escape_k(x)``; the law puts its mass on the two
    integers around the mean, which minimizes the second moment.
    """

    c: float
    potential: np.ndarray
    mean: np.ndarray
    law: np.ndarray
    second_moment: np.ndarray
    support_bound: int

    @property
    def kill_rate(self) -> np.ndarray:
        return neg(self.potential - self.c)


def binary_law(m: float, width: int) -> np.ndarray:
    """Two-point law on ``floor(m), floor(m)+1`` with mean ``m``."""
    lo = math.floor(m)
    frac = m - lo
    p = np.zeros(width)
    p[lo] = 1.0 - frac
    if frac > 0.0:
        p[lo + 1] = frac
    return p


def build_clone_law(td: TiltedDynamics, c: float = 0.0, n: int | None = None) -> CloneSizeDistribution:
    v = np.asarray(td.potential, dtype=float)
    mean = pos(v - c) / td.tilted_escape
    if not np.all(np.isfinite(mean)):
        raise MeanTooLarge("clone-size mean is not finite")
    k_bound = int(np.floor(mean).max()) + 2
    if n is not None and k_bound > n:
        raise MeanTooLarge(f"clone-size bound K={k_bound} exceeds N={n}")
    law = np.vstack([binary_law(m, k_bound) for m in mean])
    sizes = np.arange(k_bound)
    q = law @ sizes.astype(float) ** 2
    for a in (mean, law, q, v):
        a.setflags(write=False)
    return CloneSizeDistribution(float(c), v, mean, law, q, k_bound)


def run_cloning(td: TiltedDynamics, law: CloneSizeDistribution, ensemble: ParticleEnsemble, horizon: float,
                rng, checkpoints=None, record: bool = False, check: bool = False,
                factor: CloningFactor | None = None):
    """Exact simulation of the cloning generator.

    A particle at ``x`` fires at rate ``escape_k(x)``: a clone size ``n`` is
    drawn from ``law[x]``, a uniform ``n``-subset of all indices (possibly
    containing the firing particle) is set to ``x``, then the firing particle
    jumps with the tilted kernel.  Independently it is killed at rate
    ``(V(x) - c)^-`` and replaced by a uniformly chosen particle.

    Returns the final ensemble, the :class:`EventLog` and the cloning factor.
    """
    n = ensemble.n
    if n < law.support_bound:
        raise EnsembleTooSmall(f"N={n} is below the clone-size bound K={law.support_bound}")
    if np.any(ensemble.states >= td.size):
        raise ValueError("ensemble states out of range for this model")
    if len(law.mean) != td.size:
        raise ValueError("clone law and dynamics disagree on the state space")
    if np.any((law.mean == 0) != (law.potential <= law.c)):
        raise AssertionError("clone mean vanishes exactly where V <= c")
    obs = checkpoint_grid(ensemble.clock, float(horizon), checkpoints)
    out = _outputs(len(obs), td.size)
    out_logf = np.zeros(len(obs))
    logf0 = 0.0 if factor is None else float(factor.log_value)
    floor_m = np.floor(law.mean).astype(np.int64)
    frac_m = law.mean - floor_m
    states = ensemble.states.copy()
    recs = _engine.cloning_kernel(as_generator(rng), states, float(ensemble.clock), obs,
                                  *tilted_kernel_args(td), floor_m, frac_m, law.kill_rate.copy(),
                                  law.support_bound, logf0, bool(check), bool(record), *out, out_logf)
    times, integral, occ, cnt, nev = _prepend_start(ensemble, td.size, obs, *out)
    logf = np.concatenate(([logf0], out_logf))
    events = None
    if record:
        r_t, r_kind, r_actor, r_pre, r_post, r_size, r_logf, r_off, r_aff, _ = recs
        events = EventRecords(r_t, r_kind, r_actor, r_pre, r_post, r_off, r_aff, r_size, r_logf)
    log = EventLog("cloning", law.potential, law.c, ensemble.states, states, times, integral, occ, cnt,
                   nev, log_factor=logf, events=events)
    return ParticleEnsemble(states, float(horizon)), log, CloningFactor(float(recs[-1]), float(horizon))


def mckean_drift(td: TiltedDynamics, c: float, mu, f) -> float:
    """``mu(Lbar_{mu,c} f)`` for the killing/cloning McKean generator."""
    mu, f = np.asarray(mu, float), np.asarray(f, float)
    lf = td.tilted_rate @ f - td.tilted_escape * f
    return float(mu @ lf) + mean_selection_drift(SelectionRates.killing_cloning(td.potential, c), mu, f)


def enumerate_events(td: TiltedDynamics, law: CloneSizeDistribution, states):
    """Every transition of the cloning generator from ``states``.

    Yields ``(rate, new_states, log_factor_increment)``; clone sets are all
    ``n``-subsets of the indices, each with probability ``law[x, n] / C(N, n)``.
    """
    states = np.asarray(states, dtype=np.int64)
    n = len(states)
    rate = td.tilted_rate
    kill = law.kill_rate
    for i in range(n):
        x = int(states[i])
        for y in np.flatnonzero(rate[x]):
            for size in np.flatnonzero(law.law[x]):
                size = int(size)
                w = rate[x, y] * law.law[x, size] / comb(n, size)
                dlog = math.log1p(size / n)
                for subset in itertools.combinations(range(n), size):
                    new = states.copy()
                    new[list(subset)] = x
                    new[i] = y
                    yield w, new, dlog
        if kill[x] > 0:
            for j in range(n):
                new = states.copy()
                new[i] = states[j]
                yield kill[x] / n, new, math.log1p(-1.0 / n)


def brute_force_drift(td, law, states, f) -> float:
    """Exact ``sum_events rate * (F(new) - F(old))`` with ``F = m(.)(f)``."""
    f = np.asarray(f, float)
    f0 = float(f[states].mean())
    return float(sum(w * (f[new].mean() - f0) for w, new, _ in enumerate_events(td, law, states)))


def brute_force_carre(td, law, states, f) -> float:
    """Exact ``sum_events rate * (F(new) - F(old))^2``."""
    f = np.asarray(f, float)
    f0 = float(f[states].mean())
    return float(sum(w * (f[new].mean() - f0) ** 2 for w, new, _ in enumerate_events(td, law, states)))


def carre_density(td: TiltedDynamics, law: CloneSizeDistribution, mu, f) -> np.ndarray:
    """Per-state variance density ``G_mu(f, f)(x)``."""
    mu, f = np.asarray(mu, float), np.asarray(f, float)
    rate = td.tilted_rate
    esc = td.tilted_escape
    diff = f[None, :] - f[:, None]
    sel = SelectionRates.killing_cloning(td.potential, law.c).matrix
    gamma = (rate * diff ** 2).sum(axis=1) + (sel * diff ** 2) @ mu
    ell = mu @ f - f
    lf = rate @ f - esc * f
    return (gamma + esc * (law.second_moment - law.mean) * ell ** 2
            - 2.0 / esc * lf * pos(law.potential - law.c) * ell)


def predict_carre(td: TiltedDynamics, law: CloneSizeDistribution, ensemble, f) -> float:
    """Leading-order carre du champ ``(1/N) m(G_m(f, f))`` of ``F = m(.)(f)``."""
    states = np.asarray(getattr(ensemble, "states", ensemble), dtype=np.int64)
    mu = np.bincount(states, minlength=td.size) / len(states)
    return float(mu @ carre_density(td, law, mu, f)) / len(states)


def carre_remainder(td: TiltedDynamics, law: CloneSizeDistribution, states, f) -> float:
    """Exact gap between the brute-force carre du champ and :func:`predict_carre`.

    Only the pairwise clone term is approximated; it vanishes when ``Q = M``.
    """
    states = np.asarray(states, dtype=np.int64)
    f = np.asarray(f, float)
    n = len(states)
    fx = f[states]
    ell = fx.mean() - fx
    d2 = ((fx[:, None] - fx[None, :]) ** 2).sum(axis=1)
    esc = td.tilted_escape[states]
    excess = (law.second_moment - law.mean)[states]
    exact = (n * n * ell ** 2 - d2) / (n * (n - 1))
    return float(np.sum(esc / n ** 2 * excess * (exact - ell ** 2)))
