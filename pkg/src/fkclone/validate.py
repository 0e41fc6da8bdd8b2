"""Fast invariant checks on one model, used by ``fkclone validate``."""
from __future__ import annotations

import itertools

import numpy as np

from .cloning import brute_force_drift, build_clone_law, mckean_drift, run_cloning
from .errors import FkcloneError
from .estimators import ergodic_estimator, factor_estimator, unnormalized_estimator
from .mckean import SelectionRates, check_sufficient_condition, mean_selection_drift
from .oracle import evolve_marginals, solve_spectral
from .particles import init_ensemble, run_meanfield
from .streams import replica_stream
from .tilt import tilt

SEED = 20240601


def _spectral(model, k):
    td = tilt(model, k)
    sol = solve_spectral(td)
    res = max(sol.residuals(td).values())
    return res < 1e-8 * max(1.0, abs(sol.scgf)), f"k={k:g} scgf={sol.scgf:.10g} residual={res:.2e}"


def _zero_tilt(model):
    td = tilt(model, 0.0)
    sol = solve_spectral(td)
    rng = replica_stream(SEED, (0,), 0)
    mu0 = np.full(model.size, 1.0 / model.size)
    law = build_clone_law(td, 0.0)
    _, log, _ = run_cloning(td, law, init_ensemble(mu0, 20, rng), 2.0, rng, checkpoints=[1.0])
    _, mlog = run_meanfield(td, SelectionRates.killing_cloning(td.potential), init_ensemble(mu0, 20, rng), 2.0, rng)
    vals = [ergodic_estimator(log, 1.0, 2.0).value, ergodic_estimator(mlog, 1.0, 2.0).value,
            factor_estimator(log.factor_at(1.0), log.factor_at(2.0), 0.0).value,
            unnormalized_estimator(log, np.ones(model.size), 2.0) - 1.0]
    ok = abs(sol.scgf) <= 1e-10 and all(v == 0.0 for v in vals)
    return ok, f"oracle={sol.scgf:.2e} estimators={vals}"


def _relaxation(model, k):
    td = tilt(model, k)
    sol = solve_spectral(td)
    horizon = min(50.0, 30.0 / sol.gap)
    traj = evolve_marginals(td, np.full(model.size, 1.0 / model.size), horizon)
    err = abs(traj.mean_potential()[-1] - sol.scgf)
    return err < 1e-6 * max(1.0, abs(sol.scgf)), f"k={k:g} |mu_T(V) - scgf|={err:.2e} at T={horizon:.3g}"


def _selection(model, k, c):
    td = tilt(model, k)
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for sr in (SelectionRates.killing_cloning(td.potential, c), SelectionRates.fitness_increasing(td.potential)):
        ok, viol = check_sufficient_condition(sr)
        mu = rng.dirichlet(np.ones(model.size))
        f = rng.normal(size=model.size)
        drift = mean_selection_drift(sr, mu, f)
        target = float(mu @ (td.potential * f) - (mu @ td.potential) * (mu @ f))
        worst = max(worst, viol, abs(drift - target))
    return worst <= 1e-10, f"k={k:g} max violation={worst:.2e}"


def _clone_law(model, k, c):
    law = build_clone_law(tilt(model, k), c)
    sizes = np.arange(law.support_bound)
    err = max(float(np.max(np.abs(law.law.sum(axis=1) - 1))), float(np.max(np.abs(law.law @ sizes - law.mean))))
    return err <= 1e-12, f"k={k:g} K={law.support_bound} moment error={err:.2e}"


def _generator(model, k, c):
    td = tilt(model, k)
    law = build_clone_law(td, c)
    n = max(2, law.support_bound)
    if model.size ** n > 4096:
        return True, f"k={k:g} skipped (too many configurations)"
    f = np.random.default_rng(SEED).normal(size=model.size)
    worst = 0.0
    for states in itertools.product(range(model.size), repeat=n):
        states = np.array(states)
        mu = np.bincount(states, minlength=model.size) / n
        worst = max(worst, abs(brute_force_drift(td, law, states, f) - mckean_drift(td, c, mu, f)))
    return worst <= 1e-10, f"k={k:g} N={n} max deviation={worst:.2e}"


def _replay(model, k, c):
    td = tilt(model, k)
    law = build_clone_law(td, c)
    rng = replica_stream(SEED, (1,), 0)
    n = max(4, law.support_bound)
    mu0 = np.full(model.size, 1.0 / model.size)
    _, log, fac = run_cloning(td, law, init_ensemble(mu0, n, rng), 3.0, rng, record=True, check=True)
    r = log.replay()
    _, mlog = run_meanfield(td, SelectionRates.killing_cloning(td.potential, c), init_ensemble(mu0, n, rng), 3.0,
                            rng, record=True, check=True)
    mr = mlog.replay()
    err = max(abs(r["integral"] - log.integral[-1]), abs(r["log_factor"] - fac.log_value),
              abs(mr["integral"] - mlog.integral[-1]))
    same = np.array_equal(r["states"], log.final_states) and np.array_equal(mr["states"], mlog.final_states)
    return same and err <= 1e-10, f"k={k:g} replay error={err:.2e}"


def run_checks(model, ks=(1.0,), c: float = 0.0) -> list[tuple[str, bool, str]]:
    checks = [("zero tilt", lambda: _zero_tilt(model))]
    for k in ks:
        checks += [
            ("spectral residuals", lambda k=k: _spectral(model, k)),
            ("marginal relaxation", lambda k=k: _relaxation(model, k)),
            ("selection identity", lambda k=k: _selection(model, k, c)),
            ("clone law moments", lambda k=k: _clone_law(model, k, c)),
            ("cloning generator", lambda k=k: _generator(model, k, c)),
            ("event replay", lambda k=k: _replay(model, k, c)),
        ]
    out = []
    for name, fn in checks:
        try:
            ok, detail = fn()
        except FkcloneError as exc:
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))
    return out
