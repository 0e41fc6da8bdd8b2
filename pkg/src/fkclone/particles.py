"""Particle ensembles, event logs and the mean-field particle scheme."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _engine
from .errors import RangeError
from .mckean import SelectionRates
from .streams import as_generator
from .tilt import TiltedDynamics

KIND_NAMES = {_engine.MUTATION: "mutation", _engine.SELECTION: "selection_replace", _engine.KILL: "kill"}


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    states: np.ndarray
    clock: float = 0.0

    def __post_init__(self):
        s = np.array(self.states, dtype=np.int64)
        if s.ndim != 1 or len(s) < 1:
            raise ValueError("an ensemble needs at least one particle")
        if np.any(s < 0):
            raise ValueError("states must be non-negative")
        s.setflags(write=False)
        object.__setattr__(self, "states", s)

    @property
    def n(self) -> int:
        return len(self.states)

    def counts(self, size: int) -> np.ndarray:
        return np.bincount(self.states, minlength=size)

    def empirical(self, size: int) -> np.ndarray:
        return self.counts(size) / self.n


def init_ensemble(mu0, n: int, rng, clock: float = 0.0) -> ParticleEnsemble:
    """``n`` i.i.d. particles drawn from ``mu0``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    mu0 = np.asarray(mu0, dtype=float)
    if np.any(mu0 < 0) or abs(mu0.sum() - 1.0) > 1e-12:
        raise ValueError("mu0 must be a probability vector")
    return ParticleEnsemble(as_generator(rng).choice(len(mu0), size=n, p=mu0), clock)


@dataclass(frozen=True, eq=False)
class EventRecords:
    """Per-event trace.  ``affected[offsets[e]:offsets[e+1]]`` lists the
    partner (selection, kill) or the clone set (cloning) of event ``e``."""

    time: np.ndarray
    kind: np.ndarray
    actor: np.ndarray
    pre: np.ndarray
    post: np.ndarray
    offsets: np.ndarray
    affected: np.ndarray
    clone_size: np.ndarray | None = None
    log_factor: np.ndarray | None = None

    def __len__(self):
        return len(self.time)

    def affected_of(self, e: int) -> np.ndarray:
        return self.affected[self.offsets[e]:self.offsets[e + 1]]

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        cloning = self.clone_size is not None
        head = ["t", "kind", "actor", "affected", "pre", "post"]
        w.writerow(head + (["clone_size", "log_factor"] if cloning else []))
        for e in range(len(self)):
            row = [repr(float(self.time[e])), KIND_NAMES[int(self.kind[e])], int(self.actor[e]),
                   ";".join(str(int(a)) for a in self.affected_of(e)), int(self.pre[e]), int(self.post[e])]
            if cloning:
                row += [int(self.clone_size[e]), repr(float(self.log_factor[e]))]
            w.writerow(row)


@dataclass(frozen=True, eq=False)
class CloningFactor:
    """Snapshot of ``log C_t`` (``C_0 = 1``)."""

    log_value: float
    time: float

    @property
    def value(self) -> float:
        return math.exp(self.log_value)


@dataclass(frozen=True, eq=False)
class EventLog:
    """Exact accumulators of one particle run, sampled at checkpoint times.

    ``integral[i]`` is the integral of ``m(xi_s)(V_k)`` from the run start to
    ``times[i]`` and ``occupation[i, x]`` that of the number of particles
    in ``x``; both are exact for the piecewise-constant configuration.
    """

    algorithm: str
    potential: np.ndarray
    c: float
    initial_states: np.ndarray
    final_states: np.ndarray
    times: np.ndarray
    integral: np.ndarray
    occupation: np.ndarray
    counts: np.ndarray
    n_events: np.ndarray
    log_factor: np.ndarray | None = None
    events: EventRecords | None = None
    extra: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.initial_states)

    @property
    def size(self) -> int:
        return len(self.potential)

    @property
    def start(self) -> float:
        return float(self.times[0])

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def index(self, t: float) -> int | None:
        i = int(np.searchsorted(self.times, t - 1e-12 * max(1.0, abs(t))))
        if i < len(self.times) and abs(self.times[i] - t) <= 1e-12 * max(1.0, abs(t)):
            return i
        return None

    def _lookup(self, t: float):
        if not (self.start - 1e-12 <= t <= self.horizon + 1e-12):
            raise RangeError(f"t={t} outside run [{self.start}, {self.horizon}]")
        i = self.index(t)
        if i is not None:
            return {"integral": float(self.integral[i]), "counts": self.counts[i],
                    "occupation": self.occupation[i],
                    "log_factor": float(self.log_factor[i]) if self.log_factor is not None else 0.0}
        if self.events is None:
            raise RangeError(f"t={t} is not a checkpoint and events were not recorded")
        return self.replay(t)

    def integral_at(self, t: float) -> float:
        return self._lookup(t)["integral"]

    def counts_at(self, t: float) -> np.ndarray:
        return np.asarray(self._lookup(t)["counts"])

    def empirical_at(self, t: float) -> np.ndarray:
        return self.counts_at(t) / self.n

    def occupation_at(self, t: float) -> np.ndarray:
        return np.asarray(self._lookup(t)["occupation"])

    def factor_at(self, t: float) -> CloningFactor:
        if self.log_factor is None:
            raise RangeError("this run carries no cloning factor")
        return CloningFactor(self._lookup(t)["log_factor"], float(t))

    def replay(self, t: float | None = None) -> dict:
        """Rebuild the accumulators at time ``t`` from the raw event trace."""
        ev = self.events
        if ev is None:
            raise RangeError("events were not recorded for this run")
        t = self.horizon if t is None else float(t)
        v = self.potential
        n = self.n
        states = self.initial_states.copy()
        counts = np.bincount(states, minlength=self.size).astype(float)
        integral = 0.0
        occ = np.zeros(self.size)
        logf = float(self.log_factor[0]) if self.log_factor is not None else 0.0
        last = self.start
        for e in range(len(ev)):
            te = float(ev.time[e])
            if te > t:
                break
            integral += (te - last) * float(counts @ v) / n
            occ += (te - last) * counts
            last = te
            kind = int(ev.kind[e])
            actor = int(ev.actor[e])
            if self.algorithm == "cloning" and kind == _engine.MUTATION:
                src = int(ev.pre[e])
                for j in ev.affected_of(e):
                    if j != actor:
                        counts[states[j]] -= 1
                        counts[src] += 1
                        states[j] = src
                n_clone = int(ev.clone_size[e])
                if n_clone > 0:
                    logf += math.log1p(n_clone / n)
            elif kind == _engine.KILL:
                logf += math.log1p(-1.0 / n)
            counts[states[actor]] -= 1
            counts[int(ev.post[e])] += 1
            states[actor] = int(ev.post[e])
        integral += (t - last) * float(counts @ v) / n
        occ += (t - last) * counts
        return {"integral": integral, "counts": counts.astype(np.int64), "occupation": occ,
                "log_factor": logf, "states": states}

    def relabeled(self, perm) -> "EventLog":
        """Same run with particle ``i`` renamed ``perm[i]``."""
        perm = np.asarray(perm)
        inv_states = np.empty_like(self.initial_states)
        inv_states[perm] = self.initial_states
        fin = np.empty_like(self.final_states)
        fin[perm] = self.final_states
        ev = self.events
        if ev is not None:
            ev = replace(ev, actor=perm[ev.actor], affected=perm[ev.affected])
        return replace(self, initial_states=inv_states, final_states=fin, events=ev)


def checkpoint_grid(clock: float, horizon: float, checkpoints=None, default_points: int = 100) -> np.ndarray:
    if not horizon > clock:
        raise ValueError(f"horizon {horizon} must exceed the ensemble clock {clock}")
    if checkpoints is None:
        pts = np.linspace(clock, horizon, default_points + 1)[1:]
    else:
        pts = np.asarray(checkpoints, dtype=float)
        if np.any(pts < clock) or np.any(pts > horizon):
            raise RangeError("checkpoints must lie within [clock, horizon]")
        pts = pts[pts > clock]
    pts = np.unique(np.concatenate((pts, [horizon])))
    return pts


def _outputs(n_obs, size):
    return (np.zeros(n_obs), np.zeros((n_obs, size)), np.zeros((n_obs, size), np.int64),
            np.zeros(n_obs, np.int64))


def _prepend_start(ensemble, size, obs, integral, occ, cnt, nev):
    c0 = ensemble.counts(size)
    return (np.concatenate(([ensemble.clock], obs)), np.concatenate(([0.0], integral)),
            np.vstack((np.zeros(size), occ)), np.vstack((c0, cnt)), np.concatenate(([0], nev)))


def tilted_kernel_args(td: TiltedDynamics):
    csr = td.tilted_csr
    return (csr.indptr.astype(np.int64), csr.indices.astype(np.int64), np.asarray(td.jump_cumulative),
            np.asarray(td.tilted_escape), np.asarray(td.potential, dtype=float))


def run_meanfield(td: TiltedDynamics, sr: SelectionRates, ensemble: ParticleEnsemble, horizon: float,
                  rng, checkpoints=None, record: bool = False, check: bool = False):
    """Exact simulation of independent tilted mutations plus pairwise selection.

    Particle ``i`` mutates at rate ``escape_k(x_i)`` and takes the state of a
    uniformly chosen ``j`` (``j = i`` allowed) at rate ``W(x_i, x_j)``.
    Returns the final ensemble and the :class:`EventLog`.
    """
    if np.any(ensemble.states >= td.size):
        raise ValueError("ensemble states out of range for this model")
    if len(sr.potential) != td.size:
        raise ValueError("selection rates and dynamics disagree on the state space")
    obs = checkpoint_grid(ensemble.clock, float(horizon), checkpoints)
    out = _outputs(len(obs), td.size)
    states = ensemble.states.copy()
    recs = _engine.meanfield_kernel(as_generator(rng), states, float(ensemble.clock), obs,
                                    *tilted_kernel_args(td), np.ascontiguousarray(sr.matrix),
                                    bool(check), bool(record), *out)
    times, integral, occ, cnt, nev = _prepend_start(ensemble, td.size, obs, *out)
    events = None
    if record:
        r_t, r_kind, r_actor, r_partner, r_pre, r_post = recs
        has = r_partner >= 0
        offsets = np.concatenate(([0], np.cumsum(has)))
        events = EventRecords(r_t, r_kind, r_actor, r_pre, r_post, offsets, r_partner[has])
    log = EventLog(f"meanfield_{sr.family}", np.asarray(td.potential, float), float(sr.c),
                   ensemble.states, states, times, integral, occ, cnt, nev, events=events)
    return ParticleEnsemble(states, float(horizon)), log
