"""Exact reference values on finite chains.

Everything here is deterministic linear algebra except :func:`naive_scgf`,
which is a plain Monte-Carlo reweighting of independent paths and shares no
code with the particle engines.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numba
import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as splinalg
from scipy.special import logsumexp

from .errors import InsufficientReplicas, NoGap, NotIrreducible, Overflow, RangeError, StepTooCoarse
from .model import JumpModel, simulate_additive
from .streams import as_generator, map_replicas
from .tilt import TiltedDynamics, tilt, tilted_matrix

DENSE_EIG_LIMIT = 512
GAP_FLOOR = 1e-10


@dataclass(frozen=True, eq=False)
class SpectralSolution:
    k: float
    scgf: float
    right_eigvec: np.ndarray
    left_eigmeasure: np.ndarray
    gap: float

    def residuals(self, td: TiltedDynamics) -> dict:
        m = tilted_matrix(td)
        mu, r = self.left_eigmeasure, self.right_eigvec
        return {
            "left": float(np.max(np.abs(m.T @ mu - self.scgf * mu))),
            "right": float(np.max(np.abs(m @ r - self.scgf * r))),
            "potential": abs(float(mu @ td.potential) - self.scgf),
            "normalization": abs(float(mu.sum()) - 1.0),
        }


def is_irreducible(model: JumpModel) -> bool:
    n, _ = csgraph.connected_components(model.rate_csr, directed=True, connection="strong")
    return n == 1


def _perron(vec):
    v = np.real(vec)
    v = v * np.sign(v[np.argmax(np.abs(v))])
    return np.abs(v)


def _dense_spectrum(m):
    w, vl, vr = scipy.linalg.eig(m, left=True, right=True)
    order = np.argsort(-w.real)
    i = order[0]
    lam = float(w[i].real)
    gap = float(lam - w[order[1]].real) if len(w) > 1 else math.inf
    return lam, _perron(vl[:, i]), _perron(vr[:, i]), gap


def _sparse_spectrum(td, nearest=6):
    # the Perron root is bounded by max V (largest row sum of L_k), so shifting
    # just above that bound makes it the eigenvalue nearest the shift
    lk = (sparse.csr_matrix(td.tilted_csr) + sparse.diags(-td.base.escape + td.k * td.base.stay_h)).tocsc()
    top = float(np.max(td.potential))
    sigma = top + 1e-6 * (1.0 + abs(top))
    k = min(nearest, td.size - 2)
    w, vr = splinalg.eigs(lk, k=k, sigma=sigma, which="LM")
    i = int(np.argmax(w.real))
    lam = float(w[i].real)
    # gap from the eigenvalues nearest the principal one
    gap = float(lam - np.delete(w.real, i).max()) if k > 1 else math.inf
    _, vl = splinalg.eigs(lk.T.tocsc(), k=1, sigma=sigma, which="LM")
    return lam, _perron(vl[:, 0]), _perron(vr[:, i]), gap


def solve_spectral(td: TiltedDynamics) -> SpectralSolution:
    """Principal eigenvalue (the SCGF), eigenvectors and spectral gap of ``L_k``."""
    if not is_irreducible(td.base):
        raise NotIrreducible("the base chain is not irreducible")
    if td.size == 1:
        v = float(td.potential[0])
        return SpectralSolution(td.k, v, np.ones(1), np.ones(1), math.inf)
    if td.size <= DENSE_EIG_LIMIT:
        lam, mu, r, gap = _dense_spectrum(tilted_matrix(td))
    else:
        lam, mu, r, gap = _sparse_spectrum(td)
    if gap < GAP_FLOOR:
        raise NoGap(f"principal eigenvalue is numerically degenerate (gap={gap:.3g})")
    mu = mu / mu.sum()
    r = r / float(mu @ r)
    for a in (mu, r):
        a.setflags(write=False)
    return SpectralSolution(td.k, lam, r, mu, gap)


# --- Feynman-Kac marginals ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class MarginalTrajectory:
    times: np.ndarray
    mu: np.ndarray          # (len(times), S)
    log_nu1: np.ndarray
    potential: np.ndarray

    def mean_potential(self) -> np.ndarray:
        return self.mu @ self.potential

    def nu(self, i: int) -> np.ndarray:
        """Unnormalized marginal at grid index ``i``."""
        return math.exp(self.log_nu1[i]) * self.mu[i]

    def at(self, t: float) -> tuple[np.ndarray, float]:
        """(mu_t, log nu_t(1)) at a grid time."""
        i = int(np.searchsorted(self.times, t))
        if i >= len(self.times) or not math.isclose(self.times[i], t, rel_tol=1e-12, abs_tol=1e-12):
            raise RangeError(f"t={t} is not a grid time")
        return self.mu[i], float(self.log_nu1[i])


@numba.njit(cache=True)
def _rk4_dense(mu, lognu, h, steps, jump, v):
    for _ in range(steps):
        m1 = mu.copy()
        acc = np.zeros_like(mu)
        lacc = 0.0
        for stage in range(4):
            mv = m1 @ v
            k = m1 @ jump + m1 * v - m1 * mv
            w = 1.0 if stage in (0, 3) else 2.0
            acc += w * k
            lacc += w * mv
            if stage < 3:
                m1 = mu + (h if stage == 2 else 0.5 * h) * k
        mu = mu + h / 6.0 * acc
        lognu = lognu + h / 6.0 * lacc
    return mu, lognu


def _rk4(mu, lognu, h, steps, drift, v):
    def rhs(m):
        mv = m @ v
        return drift(m) + m * v - m * mv, mv
    for _ in range(steps):
        k1, l1 = rhs(mu)
        k2, l2 = rhs(mu + 0.5 * h * k1)
        k3, l3 = rhs(mu + 0.5 * h * k2)
        k4, l4 = rhs(mu + h * k3)
        mu = mu + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        lognu = lognu + h / 6.0 * (l1 + 2 * l2 + 2 * l3 + l4)
    return mu, lognu


def evolve_marginals(td: TiltedDynamics, mu0, horizon: float, grid_step: float | None = None,
                     tol: float = 1e-10, max_halvings: int = 20) -> MarginalTrajectory:
    """Integrate the normalized pair (mu_t, log nu_t(1)) on a uniform grid.

    Each grid interval is refined by step halving until two successive
    refinements agree to ``tol`` in sup norm.
    """
    mu0 = np.asarray(mu0, dtype=float)
    if mu0.shape != (td.size,) or np.any(mu0 < 0) or abs(mu0.sum() - 1.0) > 1e-12:
        raise ValueError("mu0 must be a probability vector over the model states")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    grid_step = horizon / 2000 if grid_step is None else float(grid_step)
    if not grid_step > 0:
        raise ValueError("grid_step must be positive")
    n = max(1, int(math.ceil(horizon / grid_step - 1e-9)))
    times = np.linspace(0.0, horizon, n + 1)
    v = np.array(td.potential, dtype=float)
    if td.size <= DENSE_EIG_LIMIT:
        jump = np.ascontiguousarray(td.jump_generator())

        def step(m, l, h, k):
            return _rk4_dense(m, l, h, k, jump, v)
    else:
        drift = (td.tilted_csr - sparse.diags(td.tilted_escape)).T.tocsr().__matmul__

        def step(m, l, h, k):
            return _rk4(m, l, h, k, drift, v)
    mus = np.empty((n + 1, td.size))
    logs = np.empty(n + 1)
    mus[0], logs[0] = mu0, 0.0
    mu, lognu = mu0.copy(), 0.0
    sub = 1
    for i in range(n):
        h = times[i + 1] - times[i]
        coarse = step(mu, lognu, h / sub, sub)
        for _ in range(max_halvings):
            fine = step(mu, lognu, h / (2 * sub), 2 * sub)
            err = max(np.max(np.abs(fine[0] - coarse[0])), abs(fine[1] - coarse[1]))
            if err < tol:
                break
            sub *= 2
            coarse = fine
        else:
            raise StepTooCoarse(f"no convergence on [{times[i]}, {times[i + 1]}]")
        mu, lognu = fine
        mu = mu / mu.sum()
        mus[i + 1], logs[i + 1] = mu, lognu
    for a in (times, mus, logs, v):
        a.setflags(write=False)
    return MarginalTrajectory(times, mus, logs, v)


def exact_finite_time_scgf(traj: MarginalTrajectory, t0: float, t1: float) -> float:
    """Time average of ``mu_s(V_k)`` over ``[t0, t1]`` (trapezoid on the grid)."""
    ts = traj.times
    if not (ts[0] - 1e-12 <= t0 < t1 <= ts[-1] + 1e-12):
        raise RangeError(f"window [{t0}, {t1}] outside trajectory range [{ts[0]}, {ts[-1]}]")
    mv = traj.mean_potential()
    inner = (ts > t0) & (ts < t1)
    xs = np.concatenate(([t0], ts[inner], [t1]))
    ys = np.concatenate(([np.interp(t0, ts, mv)], mv[inner], [np.interp(t1, ts, mv)]))
    return float(np.sum(0.5 * (ys[1:] + ys[:-1]) * np.diff(xs)) / (t1 - t0))


def relaxation_rate(traj: MarginalTrajectory, scgf: float, floor: float = 1e-9) -> float:
    """Fitted exponential rate of ``|mu_t(V) - scgf|``, to compare with the gap.

    Least squares on the log error over the part of the grid where the error
    is still above ``floor``; ``exp(-rate)`` is an empirical contraction factor.
    """
    err = np.abs(traj.mean_potential() - scgf)
    keep = err > floor
    if keep.sum() < 3:
        raise RangeError("the trajectory is already relaxed; nothing to fit")
    return -float(np.polyfit(traj.times[keep], np.log(err[keep]), 1)[0])


def write_trajectory_csv(traj: MarginalTrajectory, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    s = traj.mu.shape[1]
    w.writerow(["t"] + [f"mu_{x}" for x in range(s)] + ["log_nu1"])
    for t, m, l in zip(traj.times.tolist(), traj.mu.tolist(), traj.log_nu1.tolist()):
        w.writerow([repr(t)] + [repr(v) for v in m] + [repr(l)])


# --- naive Monte-Carlo reweighting --------------------------------------------

NAIVE_BLOCK = 4096


def naive_scgf(model: JumpModel, k: float, horizon: float, replicas: int, rng,
               mu0=None, threads: int | None = None):
    """``(1/T) log mean exp(k T A_T)`` over independent paths, jackknife error.

    Replicas are cut into fixed blocks of ``NAIVE_BLOCK`` paths, each with
    its own child stream, so the result does not depend on ``threads``.
    """
    from .estimators import ScgfEstimate

    if replicas < 2:
        raise InsufficientReplicas("naive_scgf needs at least 2 replicas")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    mu0 = np.full(model.size, 1.0 / model.size) if mu0 is None else np.asarray(mu0, float)
    tilt(model, k)  # range check on k
    root = rng if isinstance(rng, np.random.SeedSequence) else \
        np.random.SeedSequence(int(as_generator(rng).integers(2**63)))
    n_blocks = -(-replicas // NAIVE_BLOCK)
    children = root.spawn(n_blocks)

    def block(b):
        g = np.random.Generator(np.random.PCG64(children[b]))
        size = min(NAIVE_BLOCK, replicas - b * NAIVE_BLOCK)
        x0s = g.choice(model.size, size=size, p=mu0)
        return simulate_additive(model, x0s, horizon, g)

    values = np.concatenate(map_replicas(block, range(n_blocks), threads))
    a = k * values
    if not np.all(np.isfinite(a)):
        raise Overflow("k * T * A_T is not finite")
    total = logsumexp(a)
    if not np.isfinite(total):
        raise Overflow("log-sum-exp overflowed")
    est = (total - math.log(replicas)) / horizon
    with np.errstate(divide="ignore"):
        loo = total + np.log1p(-np.exp(a - total))
    loo = (loo - math.log(replicas - 1)) / horizon
    finite = np.isfinite(loo)
    if not np.all(finite):
        # a single path dominates the sum; the jackknife is meaningless
        se = math.inf
    else:
        se = math.sqrt((replicas - 1) / replicas * np.sum((loo - loo.mean()) ** 2))
    return ScgfEstimate(float(est), (0.0, float(horizon)), 1, "naive", float(se), replicas=replicas)
