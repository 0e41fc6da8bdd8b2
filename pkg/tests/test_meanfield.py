import io
import math

import numpy as np
import pytest

from fkclone.errors import RangeError
from fkclone.mckean import SelectionRates, total_selection_rate
from fkclone.model import registry_model
from fkclone.oracle import evolve_marginals
from fkclone.particles import KIND_NAMES, ParticleEnsemble, init_ensemble, run_meanfield
from fkclone.tilt import tilt


def test_init_point_mass(rng):
    ens = init_ensemble([1.0, 0.0, 0.0], 50, rng)
    assert np.all(ens.states == 0) and ens.clock == 0.0 and ens.n == 50


def test_init_uniform_concentration(rng):
    n = 10_000
    ens = init_ensemble([0.5, 0.5], n, rng)
    assert abs(ens.empirical(2)[0] - 0.5) < 3 * 0.5 / math.sqrt(n)


def test_singleton_and_validation(rng):
    assert init_ensemble([0.2, 0.8], 1, rng).n == 1
    with pytest.raises(ValueError):
        init_ensemble([0.2, 0.7], 3, rng)
    with pytest.raises(ValueError):
        init_ensemble([1.0], 0, rng)
    with pytest.raises(ValueError):
        ParticleEnsemble([])


def test_zero_tilt_never_selects(rng):
    td = tilt(registry_model("ring_current", S=5, p=1.0, q=0.3), 0.0)
    for sr in (SelectionRates.killing_cloning(td.potential), SelectionRates.fitness_increasing(td.potential)):
        _, log = run_meanfield(td, sr, init_ensemble(np.full(5, 0.2), 30, rng), 5.0, rng, record=True)
        assert np.all(log.events.kind == 0)
        assert log.integral[-1] == 0.0


def test_zero_tilt_matches_base_marginals():
    td = tilt(registry_model("two_state", a=0.5, b=1.5), 0.0)
    sr = SelectionRates.killing_cloning(td.potential)
    t = 0.7
    exact = evolve_marginals(td, [1.0, 0.0], t).mu[-1][0]
    vals = []
    for r in range(400):
        g = np.random.default_rng(r)
        _, log = run_meanfield(td, sr, init_ensemble([1.0, 0.0], 50, g), t, g)
        vals.append(log.empirical_at(t)[0])
    vals = np.array(vals)
    assert abs(vals.mean() - exact) < 4 * vals.std() / math.sqrt(len(vals))


def test_single_particle_fitness_is_pure_mutation(rng):
    td = tilt(registry_model("two_state", a=1.0, b=3.0), 1.0)
    sr = SelectionRates.fitness_increasing(td.potential)
    _, log = run_meanfield(td, sr, init_ensemble([0.5, 0.5], 1, rng), 20.0, rng, record=True)
    assert len(log.events) > 0 and np.all(log.events.kind == 0)


def test_constant_potential_gives_exact_scgf(rng):
    td = tilt(registry_model("two_state"), 1.0)
    sr = SelectionRates.killing_cloning(td.potential)
    _, log = run_meanfield(td, sr, init_ensemble([0.5, 0.5], 200, rng), 10.0, rng)
    assert (log.integral_at(10.0) - log.integral_at(5.0)) / 5.0 == math.e - 1


@pytest.mark.parametrize("family", ["kc", "fit"])
def test_replay_and_bookkeeping(skewed, rng, family):
    td = tilt(skewed, 0.8)
    sr = SelectionRates.killing_cloning(td.potential, 2.0) if family == "kc" else \
        SelectionRates.fitness_increasing(td.potential)
    ens = init_ensemble([0.5, 0.5], 12, rng)
    out, log = run_meanfield(td, sr, ens, 6.0, rng, record=True, check=True)
    ev = log.events
    assert np.all(np.diff(ev.time) >= 0)
    assert set(np.unique(ev.kind)) <= {0, 1}
    r = log.replay()
    assert abs(r["integral"] - log.integral[-1]) < 1e-12
    np.testing.assert_array_equal(r["states"], out.states)
    np.testing.assert_allclose(r["occupation"], log.occupation[-1], atol=1e-10)
    # at most one particle changes per event
    states = log.initial_states.copy()
    for e in range(len(ev)):
        assert states[ev.actor[e]] == ev.pre[e]
        states[ev.actor[e]] = ev.post[e]
    np.testing.assert_array_equal(states, out.states)
    # any mid-run time is reachable through the event trace
    mid = log.replay(3.3)
    assert log.integral_at(3.3) == mid["integral"]
    assert 0.0 < mid["integral"] < log.integral[-1]


def test_checkpoint_lookup_without_events(skewed, rng):
    td = tilt(skewed, 0.5)
    sr = SelectionRates.killing_cloning(td.potential)
    _, log = run_meanfield(td, sr, init_ensemble([0.5, 0.5], 10, rng), 4.0, rng, checkpoints=[1.0, 2.5])
    np.testing.assert_array_equal(log.times, [0.0, 1.0, 2.5, 4.0])
    log.integral_at(2.5)
    with pytest.raises(RangeError):
        log.integral_at(2.0)
    with pytest.raises(RangeError):
        log.integral_at(5.0)


def test_continuation_from_a_clock(skewed):
    td = tilt(skewed, 0.5)
    sr = SelectionRates.killing_cloning(td.potential)
    g = np.random.default_rng(3)
    mid, log1 = run_meanfield(td, sr, init_ensemble([0.5, 0.5], 10, g), 2.0, g)
    end, log2 = run_meanfield(td, sr, mid, 5.0, g)
    assert log2.start == 2.0 and end.clock == 5.0
    np.testing.assert_array_equal(log2.initial_states, log1.final_states)


def test_relabeling_does_not_change_estimates(skewed, rng):
    td = tilt(skewed, 0.8)
    sr = SelectionRates.killing_cloning(td.potential)
    _, log = run_meanfield(td, sr, init_ensemble([0.5, 0.5], 9, rng), 3.0, rng, record=True)
    perm = rng.permutation(9)
    rel = log.relabeled(perm)
    a, b = log.replay(), rel.replay()
    assert a["integral"] == b["integral"]
    np.testing.assert_array_equal(a["counts"], b["counts"])


def test_event_csv(skewed, rng):
    td = tilt(skewed, 0.8)
    sr = SelectionRates.killing_cloning(td.potential)
    _, log = run_meanfield(td, sr, init_ensemble([0.5, 0.5], 5, rng), 1.0, rng, record=True)
    buf = io.StringIO()
    log.events.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,kind,actor,affected,pre,post"
    assert len(lines) == len(log.events) + 1
    kinds = {line.split(",")[1] for line in lines[1:]}
    assert kinds <= set(KIND_NAMES.values())


@pytest.mark.parametrize("family", ["kc", "fit"])
def test_unnormalized_measure_is_unbiased(skewed, family):
    td = tilt(skewed, 0.6)
    sr = SelectionRates.killing_cloning(td.potential, 1.0) if family == "kc" else \
        SelectionRates.fitness_increasing(td.potential)
    t, f = 0.8, np.array([1.0, 0.0])
    traj = evolve_marginals(td, [0.5, 0.5], t)
    target = float(traj.nu(len(traj.times) - 1) @ f)
    vals = []
    for r in range(3000):
        g = np.random.default_rng(r)
        _, log = run_meanfield(td, sr, init_ensemble([0.5, 0.5], 8, g), t, g, checkpoints=[t])
        vals.append(math.exp(log.integral_at(t)) * (log.empirical_at(t) @ f))
    vals = np.array(vals)
    assert abs(vals.mean() - target) < 3.5 * vals.std() / math.sqrt(len(vals))


def test_cached_rate_matches_pair_sum(skewed, rng):
    # check=True recomputes the total rate particle by particle after every event
    td = tilt(skewed, 1.2)
    sr = SelectionRates.killing_cloning(td.potential, 0.5)
    out, _ = run_meanfield(td, sr, init_ensemble([0.3, 0.7], 40, rng), 3.0, rng, check=True)
    assert total_selection_rate(sr, out) >= 0
