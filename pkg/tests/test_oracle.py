import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fkclone.errors import InsufficientReplicas, NotIrreducible, RangeError
from fkclone.model import build_model, model_from_dense, registry_model
from fkclone.oracle import (evolve_marginals, exact_finite_time_scgf, naive_scgf, relaxation_rate,
                            solve_spectral, write_trajectory_csv)
from fkclone.tilt import tilt, tilted_matrix

from conftest import all_registry_models


@pytest.mark.parametrize("k", [-1.0, 0.5, 1.0, 2.0])
def test_two_state_closed_form(k):
    sol = solve_spectral(tilt(registry_model("two_state"), k))
    assert abs(sol.scgf - (math.exp(k) - 1)) < 1e-12
    assert abs(sol.gap - 2 * math.exp(k)) < 1e-9


def test_asymmetric_two_state_closed_form():
    a, b, k = 0.3, 2.0, 0.8
    sol = solve_spectral(tilt(registry_model("two_state", a=a, b=b), k))
    expect = (-(a + b) + math.sqrt((a - b) ** 2 + 4 * a * b * math.exp(2 * k))) / 2
    assert abs(sol.scgf - expect) < 1e-12


@pytest.mark.parametrize("k", [-0.7, 0.0, 0.4, 1.5])
def test_ring_cosh(k):
    sol = solve_spectral(tilt(registry_model("ring_current", S=6, p=0.5, q=0.5), k))
    assert abs(sol.scgf - (math.cosh(k) - 1)) < 1e-12


@pytest.mark.parametrize("model", all_registry_models(), ids=lambda m: m.name)
def test_zero_tilt_scgf(model):
    assert abs(solve_spectral(tilt(model, 0.0)).scgf) < 1e-10


@pytest.mark.parametrize("model", all_registry_models(), ids=lambda m: m.name)
def test_residuals_and_normalization(model):
    td = tilt(model, 0.6)
    sol = solve_spectral(td)
    assert max(sol.residuals(td).values()) < 1e-10
    assert np.all(sol.left_eigmeasure > 0) and np.all(sol.right_eigvec > 0)
    assert abs(sol.left_eigmeasure @ sol.right_eigvec - 1) < 1e-12
    assert abs(sol.left_eigmeasure @ td.potential - sol.scgf) < 1e-10


def test_reducible_rejected():
    m = build_model([(0, 1, 1.0), (1, 0, 1.0), (2, 0, 1.0)])
    with pytest.raises(NotIrreducible):
        solve_spectral(tilt(m, 0.3))


def test_large_sparse_path_matches_closed_form():
    m = registry_model("ring_current", S=600, p=0.5, q=0.5)
    sol = solve_spectral(tilt(m, 0.5))
    assert abs(sol.scgf - (math.cosh(0.5) - 1)) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.1, 4), min_size=12, max_size=12), st.floats(-1.5, 1.5))
def test_scgf_is_convex_and_passes_zero(r, k):
    rate = np.zeros((4, 4))
    rate[~np.eye(4, dtype=bool)] = r
    g = np.triu(np.ones((4, 4)), 1) - np.tril(np.ones((4, 4)), -1)
    m = model_from_dense(rate, g)
    lam = lambda kk: solve_spectral(tilt(m, kk)).scgf
    assert abs(lam(0.0)) < 1e-10
    d = 0.25
    assert lam(k + d) + lam(k - d) - 2 * lam(k) >= -1e-9


def test_relaxation_at_zero_tilt():
    # two_state(1,1) at k=0: mu_t(0) = 1/2 + (mu_0(0) - 1/2) e^{-2t}
    traj = evolve_marginals(tilt(registry_model("two_state"), 0.0), [0.9, 0.1], 3.0)
    expect = 0.5 + 0.4 * np.exp(-2 * traj.times)
    np.testing.assert_allclose(traj.mu[:, 0], expect, atol=1e-11)
    np.testing.assert_allclose(traj.log_nu1, 0.0, atol=1e-12)


def test_constant_potential_nu():
    traj = evolve_marginals(tilt(registry_model("two_state"), 1.0), [1.0, 0.0], 2.0)
    assert abs(traj.log_nu1[-1] - 2 * (math.e - 1)) < 1e-10


def test_marginals_match_matrix_exponential():
    from scipy.linalg import expm

    m = model_from_dense([[0, 1, 0.5], [0.2, 0, 2], [1, 1, 0]], g=[[0, 1, -2], [0.5, 0, 1], [3, 0, 0]],
                         h=[0.1, -0.4, 0.3])
    td = tilt(m, 0.7)
    mu0 = np.array([0.2, 0.5, 0.3])
    traj = evolve_marginals(td, mu0, 1.5)
    nu = mu0 @ expm(1.5 * tilted_matrix(td))
    np.testing.assert_allclose(traj.nu(len(traj.times) - 1), nu, rtol=1e-9)


def test_finite_time_scgf_converges():
    td = tilt(registry_model("two_state", a=0.3, b=1.7), 1.0)
    lam = solve_spectral(td).scgf
    traj = evolve_marginals(td, [1.0, 0.0], 40.0)
    assert abs(exact_finite_time_scgf(traj, 20.0, 40.0) - lam) < 1e-8
    with pytest.raises(RangeError):
        exact_finite_time_scgf(traj, 10.0, 50.0)


@pytest.mark.parametrize("a,b,k", [(0.1, 0.2, 1.0), (1.0, 3.0, 0.5), (0.3, 2.0, -0.5)])
def test_relaxation_rate_matches_gap(a, b, k):
    td = tilt(registry_model("two_state", a=a, b=b), k)
    sol = solve_spectral(td)
    traj = evolve_marginals(td, np.array([1.0, 0.0]), 8.0 / sol.gap)
    assert relaxation_rate(traj, sol.scgf) == pytest.approx(sol.gap, rel=0.02)


def test_relaxation_rate_needs_transient():
    td = tilt(registry_model("two_state"), 1.0)
    traj = evolve_marginals(td, np.array([1.0, 0.0]), 5.0)
    with pytest.raises(RangeError):
        relaxation_rate(traj, solve_spectral(td).scgf)


def test_trajectory_csv():
    traj = evolve_marginals(tilt(registry_model("two_state"), 0.5), [0.5, 0.5], 1.0, grid_step=0.25)
    buf = io.StringIO()
    write_trajectory_csv(traj, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,mu_0,mu_1,log_nu1" and len(lines) == 6


def test_naive_scgf_small_k():
    m = registry_model("two_state")
    est = naive_scgf(m, 0.3, 5.0, 20000, np.random.default_rng(1))
    assert est.kind == "naive"
    # finite-T target: two_state(1,1) jump count is Poisson(T) whatever the start
    target = math.exp(0.3) - 1
    assert abs(est.value - target) < 4 * est.stderr + 1e-3


def test_naive_zero_tilt_exact():
    est = naive_scgf(registry_model("ring_current"), 0.0, 3.0, 100, np.random.default_rng(0))
    assert est.value == 0.0


def test_naive_thread_invariance():
    m = registry_model("two_state", a=0.4, b=1.0)
    a = naive_scgf(m, 0.5, 2.0, 9000, np.random.SeedSequence(7), threads=1)
    b = naive_scgf(m, 0.5, 2.0, 9000, np.random.SeedSequence(7), threads=4)
    assert a == b
    with pytest.raises(InsufficientReplicas):
        naive_scgf(m, 0.5, 2.0, 1, np.random.default_rng(0))
