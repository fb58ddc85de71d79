import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from splap.control import BrownianPath, Control, ensemble_paths, sample_brownian
from splap.errors import ConfigError, SolverError
from splap.grid import build_grid, l2_norm, p_laplacian, flux_divergence_f
from splap.solver import NewtonSettings, jacobian_bands, residual, solve, solve_tridiagonal
from splap.stepper import (
    LEDGER_COLUMNS,
    ModelParams,
    implicit_step,
    regularize_initial,
    run_ensemble,
    run_girsanov,
    run_sde,
    run_skeleton,
    stability_envelope,
)
from splap.families import flux_family
from splap.config import random_smooth_field

G1 = build_grid(1.0, 2)


def single_node_oracle(u_prev, tau):
    # h = 1/2: the discrete p-Laplacian (p = 3) at the node is -16 u|u|, so
    # u + 16 tau u|u| = u_prev; positive root of the quadratic
    a = 16 * tau
    return (-1 + math.sqrt(1 + 4 * a * u_prev)) / (2 * a)


def test_single_node_oracle():
    assert single_node_oracle(1.0, 0.1) == pytest.approx(0.537592, abs=1e-6)
    params = ModelParams(3.0, horizon_T=0.1, n_steps=1)
    u = implicit_step([1.0], [0.0], params, G1)
    assert u[0] == pytest.approx(single_node_oracle(1.0, 0.1), abs=1e-9)
    ur = regularize_initial([1.0], 0.1, 3.0, G1)
    assert ur[0] == pytest.approx(single_node_oracle(1.0, 0.1), abs=1e-9)


def test_heat_step_by_hand():
    u = implicit_step([1.0], [0.0], ModelParams(2.0, horizon_T=0.1, n_steps=1), G1)
    assert u[0] == pytest.approx(1 / 1.8, abs=1e-14)


def test_zero_in_zero_out(grid32):
    params = ModelParams(3.0, "sine(1)", "linear(1)", 0.1, 10)
    z = np.zeros(grid32.n_interior)
    assert np.all(implicit_step(z, z, params, grid32) == 0)
    assert np.all(regularize_initial(z, 0.1, 3.0, grid32) == 0)


def test_regularization_small_tau(grid32, sine32):
    u = regularize_initial(sine32, 1e-8, 3.0, grid32)
    assert l2_norm(u - sine32, grid32) <= 1e-6


@pytest.mark.parametrize("p", [2.0, 2.5, 3.0, 4.0])
@pytest.mark.parametrize("f", ["zero", "linear(1.5)", "sine(2)"])
def test_step_solves_the_residual(grid32, sine32, p, f):
    params = ModelParams(p, f, "zero", 0.1, 10)
    forcing = 0.3 * np.cos(3 * grid32.nodes)
    u = implicit_step(sine32, forcing, params, grid32)
    ff = flux_family(f)
    r = u - params.tau * (p_laplacian(u, p, grid32) + flux_divergence_f(u, ff, grid32)) - sine32 - forcing
    assert np.max(np.abs(r)) < 1e-9


def test_jacobian_matches_finite_differences(grid32, sine32):
    f = flux_family("sine(1.3)")
    tau, p = 0.05, 3.0
    lo, di, up = jacobian_bands(sine32, tau, p, f, grid32)
    n = grid32.n_interior
    J = np.diag(di) + np.diag(up, 1) + np.diag(lo, -1)
    Jfd = np.empty((n, n))
    rhs = np.zeros(n)
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1e-6
        Jfd[:, j] = (residual(sine32 + e, rhs, tau, p, f, grid32) - residual(sine32 - e, rhs, tau, p, f, grid32)) / 2e-6
    np.testing.assert_allclose(J, Jfd, atol=1e-6 * np.max(np.abs(J)))


def test_tridiagonal_against_dense():
    r = np.random.default_rng(0)
    n = 7
    lo, up = r.normal(size=n - 1), r.normal(size=n - 1)
    di = 4 + r.random(n)
    b = r.normal(size=n)
    A = np.diag(di) + np.diag(up, 1) + np.diag(lo, -1)
    np.testing.assert_allclose(solve_tridiagonal(lo, di, up, b), np.linalg.solve(A, b))
    np.testing.assert_allclose(solve_tridiagonal(lo, di, up, b, transpose=True), np.linalg.solve(A.T, b))


def test_newton_settings_validation():
    with pytest.raises(ConfigError) as e:
        NewtonSettings(residual_tol=0)
    assert e.value.key.startswith("newton.")


def test_solver_failure_names_residual(grid32, sine32):
    with pytest.raises(SolverError) as e:
        solve(sine32, sine32 * np.nan, 0.1, 3.0, flux_family("zero"), grid32, NewtonSettings())
    assert "did not converge" in str(e.value) or "finite" in str(e.value)


def test_sde_failure_carries_seed_and_step(grid32, sine32):
    params = ModelParams(3.0, "zero", "linear(1)", 0.1, 5, 1.0)
    w = BrownianPath(np.array([0.1, 0.2, np.inf, 0.0, 0.0]), 99, params.tau)
    with pytest.raises(SolverError) as e:
        run_sde(params, w, sine32, grid32)
    assert e.value.seed == 99 and e.value.step == 3
    assert "seed=99" in str(e.value) and "step=3" in str(e.value)


def test_model_params_validation():
    for kw, key in [({"p": 1.5}, "model.p"), ({"n_steps": 0}, "model.n_steps"), ({"epsilon": -1}, "model.epsilon")]:
        args = {"p": 3.0, **kw}
        with pytest.raises(ConfigError) as e:
            ModelParams(**args)
        assert e.value.key == key


def test_skeleton_zero_data(grid32):
    params = ModelParams(3.0, "linear(1)", "linear(2)", 0.1, 20)
    tr = run_skeleton(params, Control(np.ones(20), params.tau), np.zeros(grid32.n_interior), grid32)
    assert np.all(tr.fields == 0)


def test_skeleton_unforced_norm_decreases(grid32, sine32):
    params = ModelParams(3.0, "sine(1)", "linear(1)", 0.2, 40)
    tr = run_skeleton(params, Control.zeros(40, params.tau), sine32, grid32)
    norms = l2_norm(tr.fields, grid32)
    assert np.all(np.diff(norms) <= 1e-12)
    again = run_skeleton(params, Control.zeros(40, params.tau), sine32, grid32)
    np.testing.assert_array_equal(tr.fields, again.fields)


def test_eps_zero_reduction_is_bit_exact(grid32, sine32):
    params = ModelParams(3.0, "linear(1)", "linear(2)", 0.1, 30, epsilon=0.0)
    w = sample_brownian(30, params.tau, 3)
    a = run_sde(params, w, sine32, grid32)
    b = run_skeleton(params, Control.zeros(30, params.tau), sine32, grid32)
    np.testing.assert_array_equal(a.fields, b.fields)


def test_zero_h_is_deterministic(grid32, sine32):
    params = ModelParams(3.0, "zero", "zero", 0.1, 30)
    a = run_sde(params, sample_brownian(30, params.tau, 1), sine32, grid32)
    b = run_sde(params, sample_brownian(30, params.tau, 2), sine32, grid32)
    np.testing.assert_array_equal(a.fields, b.fields)
    c = run_girsanov(params, Control(np.ones(30), params.tau), sample_brownian(30, params.tau, 1), sine32, grid32)
    np.testing.assert_array_equal(a.fields, c.fields)


def test_girsanov_reductions(grid32, sine32):
    params = ModelParams(3.0, "zero", "bounded_sine(1)", 0.1, 30)
    w = sample_brownian(30, params.tau, 8)
    a = run_sde(params, w, sine32, grid32)
    b = run_girsanov(params, Control.zeros(30, params.tau), w, sine32, grid32)
    np.testing.assert_array_equal(a.fields, b.fields)
    z = run_girsanov(params, Control(np.ones(30), params.tau), w, np.zeros(grid32.n_interior), grid32)
    assert np.all(z.fields == 0)


def test_girsanov_equals_skeleton_plus_noise(grid32, sine32):
    # with W* = 0 the shifted equation is the skeleton driven by g
    params = ModelParams(3.0, "zero", "bounded_sine(1)", 0.1, 20)
    g = Control(np.linspace(-1, 1, 20), params.tau)
    w = BrownianPath(np.zeros(20), 0, params.tau)
    a = run_girsanov(params, g, w, sine32, grid32)
    b = run_skeleton(params, g, sine32, grid32)
    np.testing.assert_allclose(a.fields, b.fields, rtol=0, atol=1e-14)


def test_ensemble_rows_bit_identical(grid32, sine32):
    params = ModelParams(3.0, "linear(0.5)", "linear(1)", 0.1, 25, 0.7)
    paths = [sample_brownian(25, params.tau, s) for s in (4, 5, 6)]
    ens = run_ensemble(params, [p.increments for p in paths], sine32, grid32, keep_fields=True)
    for i, p in enumerate(paths):
        np.testing.assert_array_equal(ens[i], run_sde(params, p, sine32, grid32).fields)
    g = Control(np.ones(25), params.tau)
    ens = run_ensemble(params, [p.increments for p in paths], sine32, grid32, drift=g)
    np.testing.assert_array_equal(ens[1], run_girsanov(params, g, paths[1], sine32, grid32).terminal)


def test_forcing_mean_single_step():
    # one step from u = 1 on the single-node grid: forcing = eps * a * dW, mean zero
    params = ModelParams(3.0, "zero", "linear(1)", 0.01, 1, 1.0)
    M = 10_000
    dw = np.array([p.increments for p in ensemble_paths(1, params.tau, 12, M)])
    ubar0 = regularize_initial([1.0], params.tau, params.p, G1)
    forcing = params.h_family(ubar0[0]) * params.epsilon * dw[:, 0]
    sigma = ubar0[0] * np.sqrt(params.tau / M)
    assert abs(forcing.mean()) <= 3 * sigma


def test_ledger_csv(grid32, sine32):
    params = ModelParams(2.5, "zero", "linear(1)", 0.1, 4, 0.5)
    tr = run_sde(params, sample_brownian(4, params.tau, 0), sine32, grid32)
    lines = tr.ledger.to_csv().splitlines()
    assert lines[0] == ",".join(LEDGER_COLUMNS)
    assert len(lines) == 5
    first = lines[1].split(",")
    assert first[0] == "1" and float(first[1]) == pytest.approx(params.tau)
    assert float(first[2]) == pytest.approx(float(l2_norm(tr.fields[0], grid32)))


@given(st.integers(0, 10**6), st.sampled_from([2.5, 3.0, 4.0]), st.floats(0.2, 2.0))
def test_stability_envelope_holds(seed, p, a):
    grid = build_grid(1.0, 16)
    params = ModelParams(p, "zero", f"linear({a})", 0.2, 20)
    rng_ = np.random.default_rng(seed)
    h = Control(3 * rng_.normal(size=20), params.tau)
    u0 = random_smooth_field(grid, seed, 4, 1.0)
    tr = run_skeleton(params, h, u0, grid)
    sq = l2_norm(tr.fields, grid) ** 2
    env = stability_envelope(h, a) * sq[0]
    assert np.all(sq <= env * (1 + 1e-9) + 1e-12)
