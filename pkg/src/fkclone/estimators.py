"""SCGF estimators from particle runs, replica statistics and scaling sweeps."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .cloning import CloneSizeDistribution, build_clone_law, run_cloning
from .errors import EnsembleTooSmall, InsufficientReplicas, RangeError
from .mckean import SelectionRates
from .particles import CloningFactor, EventLog, init_ensemble, run_meanfield
from .streams import map_replicas, replica_stream
from .tilt import TiltedDynamics

ERGODIC = "ergodic"
CLONING_FACTOR = "cloning_factor"
NAIVE = "naive"
KINDS = (ERGODIC, CLONING_FACTOR, NAIVE)

ALGORITHMS = ("meanfield_kc", "meanfield_fit", "cloning")

MIN_SWEEP_SIZES = 4
MIN_SWEEP_REPLICAS = 50
MIN_DIAGNOSTIC_REPLICAS = 100


@dataclass(frozen=True)
class ScgfEstimate:
    value: float
    window: tuple[float, float]
    n: int
    kind: str
    stderr: float = 0.0
    replicas: int = 1

    def __post_init__(self):
        t0, t1 = self.window
        if not 0.0 <= t0 < t1:
            raise RangeError(f"invalid window {self.window}")
        if not self.stderr >= 0.0:
            raise ValueError("stderr must be non-negative")
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}")


def ergodic_estimator(log: EventLog, t0: float, t1: float) -> ScgfEstimate:
    """Time average of ``m(xi_s)(V_k)`` over ``[t0, t1]``, exact from the accumulator."""
    if not t0 < t1:
        raise RangeError(f"empty window [{t0}, {t1}]")
    value = (log.integral_at(t1) - log.integral_at(t0)) / (t1 - t0)
    return ScgfEstimate(value, (float(t0), float(t1)), log.n, ERGODIC)


def factor_estimator(factor_t0: CloningFactor, factor_t1: CloningFactor, c: float, n: int = 0) -> ScgfEstimate:
    t0, t1 = factor_t0.time, factor_t1.time
    if not t0 < t1:
        raise RangeError("cloning-factor snapshots must be increasing in time")
    value = (factor_t1.log_value - factor_t0.log_value) / (t1 - t0) + c
    return ScgfEstimate(value, (t0, t1), n, CLONING_FACTOR)


def unnormalized_estimator(log: EventLog, f, t: float) -> float:
    """``exp(int m(xi_s)(V_k) ds) m(xi_t)(f)``, integral taken from the run start."""
    return math.exp(log.integral_at(t)) * float(log.empirical_at(t) @ np.asarray(f, float))


def pool(estimates) -> ScgfEstimate:
    """Replica mean with the standard error over replicas (one batch per replica)."""
    est = list(estimates)
    if not est:
        raise InsufficientReplicas("nothing to pool")
    vals = np.array([e.value for e in est])
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    e0 = est[0]
    return ScgfEstimate(float(vals.mean()), e0.window, e0.n, e0.kind, se, replicas=len(vals))


@dataclass(frozen=True, eq=False)
class Simulation:
    """One particle scheme on one tilted model: what a replica runs."""

    td: TiltedDynamics
    algorithm: str
    n: int
    horizon: float
    c: float = 0.0
    mu0: np.ndarray | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.n < 1:
            raise ValueError("n must be at least 1")
        mu0 = np.full(self.td.size, 1.0 / self.td.size) if self.mu0 is None else np.asarray(self.mu0, float)
        object.__setattr__(self, "mu0", mu0)
        if self.algorithm == "cloning":
            # fail before any replica starts
            if self.n < self.law.support_bound:
                raise EnsembleTooSmall(f"N={self.n} is below the clone-size bound K={self.law.support_bound}")

    @cached_property
    def law(self) -> CloneSizeDistribution:
        return build_clone_law(self.td, self.c)

    @property
    def selection(self) -> SelectionRates:
        if self.algorithm == "meanfield_fit":
            return SelectionRates.fitness_increasing(self.td.potential)
        return SelectionRates.killing_cloning(self.td.potential, self.c)

    def run(self, rng, checkpoints=None, record: bool = False) -> EventLog:
        ens = init_ensemble(self.mu0, self.n, rng)
        if self.algorithm == "cloning":
            _, log, _ = run_cloning(self.td, self.law, ens, self.horizon, rng, checkpoints, record)
        else:
            _, log = run_meanfield(self.td, self.selection, ens, self.horizon, rng, checkpoints, record)
        return log


def run_replicas(sim: Simulation, fn, replicas: int, seed: int, tag=(), threads: int | None = None,
                 checkpoints=None) -> list:
    """``fn(log)`` for each replica; replica ``r`` uses ``replica_stream(seed, tag, r)``."""

    def one(r):
        return fn(sim.run(replica_stream(seed, tag, r), checkpoints))

    return map_replicas(one, range(replicas), threads)


def estimate_scgf(sim: Simulation, burn_in: float, replicas: int, seed: int, tag=(),
                  threads: int | None = None) -> dict[str, ScgfEstimate]:
    """Pooled ergodic (and, for cloning, cloning-factor) estimates over ``[aT, T]``."""
    if not 0.0 <= burn_in < 1.0:
        raise ValueError("burn-in fraction must lie in [0, 1)")
    t1 = sim.horizon
    t0 = burn_in * t1

    def both(log):
        out = [ergodic_estimator(log, t0, t1)]
        if sim.algorithm == "cloning":
            out.append(factor_estimator(log.factor_at(t0), log.factor_at(t1), sim.c, log.n))
        return out

    res = run_replicas(sim, both, replicas, seed, tag, threads, checkpoints=[t0, t1])
    kinds = [ERGODIC] + ([CLONING_FACTOR] if sim.algorithm == "cloning" else [])
    return {kind: pool(r[i] for r in res) for i, kind in enumerate(kinds)}


def loglog_slope(x, y) -> float:
    """Ordinary least-squares slope of ``log y`` on ``log x``."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(lx, ly, 1)[0])


@dataclass(frozen=True, eq=False)
class ScalingReport:
    ns: np.ndarray
    rmse: np.ndarray
    bias: np.ndarray
    stderr: np.ndarray
    fitted_rmse_slope: float
    fitted_bias_slope: float
    replica_count: np.ndarray
    target: float = float("nan")
    means: np.ndarray = field(default=None, repr=False)

    def write_csv(self, fh, header_comment: str | None = None) -> None:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["N", "rmse", "bias", "stderr"])
        for row in zip(self.ns, self.rmse, self.bias, self.stderr):
            w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


def scaling_sweep(td: TiltedDynamics, ns, replicas: int, horizon: float, seed: int, f=None,
                  algorithm: str = "meanfield_kc", c: float = 0.0, mu0=None,
                  threads: int | None = None) -> ScalingReport:
    """RMSE and bias of ``m(xi_T)(f)`` against the exact marginal ``mu_T(f)`` per ``N``."""
    from .oracle import evolve_marginals

    ns = np.asarray(sorted(set(int(n) for n in ns)))
    if len(ns) < MIN_SWEEP_SIZES:
        raise InsufficientReplicas(f"a sweep needs at least {MIN_SWEEP_SIZES} distinct N values")
    if replicas < MIN_SWEEP_REPLICAS:
        raise InsufficientReplicas(f"a sweep needs at least {MIN_SWEEP_REPLICAS} replicas per N")
    f = np.eye(td.size)[0] if f is None else np.asarray(f, float)
    mu0 = np.full(td.size, 1.0 / td.size) if mu0 is None else np.asarray(mu0, float)
    target = float(evolve_marginals(td, mu0, horizon).mu[-1] @ f)
    rmse, bias, se, means = [], [], [], []
    for n in ns:
        sim = Simulation(td, algorithm, int(n), float(horizon), c, mu0)
        vals = np.array(run_replicas(sim, lambda log: float(log.empirical_at(horizon) @ f), replicas, seed,
                                     (int(n),), threads, checkpoints=[horizon]))
        err = vals - target
        rmse.append(math.sqrt(float(np.mean(err ** 2))))
        bias.append(abs(float(err.mean())))
        se.append(float(vals.std(ddof=1) / math.sqrt(len(vals))))
        means.append(float(vals.mean()))
    rmse, bias = np.array(rmse), np.array(bias)
    return ScalingReport(ns, rmse, bias, np.array(se), loglog_slope(ns, rmse), loglog_slope(ns, bias),
                         np.full(len(ns), replicas), target, np.array(means))


@dataclass(frozen=True)
class MartingaleReport:
    t: float
    replicas: int
    empirical_variance: float
    predicted_variance: float

    @property
    def ratio(self) -> float:
        if self.predicted_variance == 0.0:
            return 1.0 if self.empirical_variance == 0.0 else math.inf
        return self.empirical_variance / self.predicted_variance


def martingale_parts(log: EventLog, t: float, td: TiltedDynamics, law: CloneSizeDistribution):
    """``(M*_t, (1/N) int m(escape Q + (V-c)^-) ds)`` for one cloning run."""
    m_star = log.factor_at(t).log_value - log.factor_at(log.start).log_value \
        - (log.integral_at(t) - law.c * (t - log.start))
    rate = td.tilted_escape * law.second_moment + law.kill_rate
    pred = float(log.occupation_at(t) @ rate) / log.n ** 2
    return m_star, pred


def martingale_diagnostic(parts, t: float) -> MartingaleReport:
    """Compare the replica variance of ``M*_t`` with its predictable quadratic variation.

    ``parts`` holds one :func:`martingale_parts` pair per replica.
    """
    parts = np.asarray(list(parts), dtype=float)
    if len(parts) < MIN_DIAGNOSTIC_REPLICAS:
        raise InsufficientReplicas(f"the diagnostic needs at least {MIN_DIAGNOSTIC_REPLICAS} replicas")
    return MartingaleReport(float(t), len(parts), float(parts[:, 0].var(ddof=1)), float(parts[:, 1].mean()))


ESTIMATE_FIELDS = ["kind", "k", "c", "N", "t0", "t1", "value", "stderr", "oracle", "abs_error"]


def estimate_row(est: ScgfEstimate, k: float, c: float, oracle: float | None) -> list:
    err = "" if oracle is None else repr(abs(est.value - oracle))
    return [est.kind, repr(float(k)), repr(float(c)), est.n, repr(est.window[0]), repr(est.window[1]),
            repr(est.value), repr(est.stderr), "" if oracle is None else repr(float(oracle)), err]
