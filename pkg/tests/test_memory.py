"""Memory ingredients, kernels, propagators, and the four integrators."""

import numpy as np
import pytest
from scipy.linalg import expm
from scipy.optimize import brentq

from zmred import (
    zoo,
    memory_ingredients,
    memory_zmn,
    propagator,
    flow_qss,
    random_force_approx,
    integrate_full,
    integrate_qss,
    integrate_zms,
    integrate_zmn,
    trajectory_to_csv,
)


def _bistable_symmetric_root():
    return brentq(lambda x: x * (1 + x**2) - 4.0, 0.1, 4.0)


def test_ingredient_shapes_and_identities():
    spec = zoo("neuraltube", params={"p": 0.5})
    ing = memory_ingredients(spec, np.array([0.3, 0.4]))
    nb, ns = spec.n_bulk, spec.n_sub
    assert ing.l.shape == (nb, nb)
    assert ing.c.shape == (nb,)
    assert ing.f0.shape == (nb, ns)
    # l = J^T - f0 S^T and c = -S R_s, rebuilt from the raw blocks
    full = spec.join(ing.evaluated_at, ing.x_bulk_star)
    blocks = spec.jac_blocks(full)
    S = ing.sensitivity
    assert np.allclose(ing.f0, blocks["sb"].T)
    assert np.allclose(ing.l, blocks["bb"].T - ing.f0 @ S.T)
    assert np.allclose(ing.c, -S @ ing.v)


def test_zero_lag_kernel_is_c_dot_f0():
    spec = zoo("bistable")
    xs = np.array([0.9])
    ing = memory_ingredients(spec, xs)
    assert np.allclose(memory_zmn(spec, xs, 0.0), ing.c @ ing.f0, atol=1e-14)


def test_kernel_array_lag_matches_scalar_calls():
    spec = zoo("bistable")
    xs = np.array([2.1])
    taus = np.array([0.0, 0.3, 0.7, 1.5])
    batch = memory_zmn(spec, xs, taus)
    for i, t in enumerate(taus):
        assert np.allclose(batch[i], memory_zmn(spec, xs, float(t)), atol=1e-8)


def test_kernel_vanishes_at_reduced_fixed_points():
    spec = zoo("bistable")
    x_star = _bistable_symmetric_root()
    for tau in [0.0, 0.5, 1.0, 5.0]:
        assert np.max(np.abs(memory_zmn(spec, np.array([x_star]), tau))) < 1e-8


def test_kernel_sign_delays_relaxation():
    # between the fixed points the memory opposes the reduced drift,
    # which is what slows the transient relative to the memoryless flow
    spec = zoo("bistable")
    from zmred import qss_drift

    for x1 in [0.5, 1.0, 1.8, 2.5]:
        v = qss_drift(spec, np.array([x1]))[0]
        M0 = memory_zmn(spec, np.array([x1]), 0.0)[0]
        if abs(v) > 1e-3:
            assert np.sign(M0) == -np.sign(v)


def test_flow_reaches_attractor():
    spec = zoo("bistable")
    phi = flow_qss(spec, np.array([1.5]), 40.0)
    assert abs(phi[0] - 3.7321) < 1e-2  # high branch of x(1+x^2)=4 pair


def test_propagator_composition():
    spec = zoo("tetrastable")
    x0 = np.array([0.6, 1.4])
    t1, t2 = 0.8, 1.3
    E_full = propagator(spec, x0, t1 + t2).E
    E1 = propagator(spec, x0, t1).E
    phi1 = flow_qss(spec, x0, t1)
    E2 = propagator(spec, phi1, t2).E
    assert np.max(np.abs(E_full - E1 @ E2)) < 1e-7


def test_propagator_constant_coefficient_limit():
    # at a reduced fixed point the flow is stationary, so the ordered
    # exponential collapses to a plain matrix exponential
    spec = zoo("bistable")
    x_star = np.array([_bistable_symmetric_root()])
    ing = memory_ingredients(spec, x_star)
    for tau in [0.4, 1.1]:
        E = propagator(spec, x_star, tau).E
        assert np.max(np.abs(E - expm(ing.l * tau))) < 1e-7


def test_random_force_vanishes_at_qss_bulk():
    spec = zoo("tetrastable")
    xs = np.array([0.9, 1.1])
    from zmred import solve_qss

    xb = solve_qss(spec, xs, check_unique=False).x_bulk_star
    for tau in [0.0, 0.5, 2.0]:
        assert np.max(np.abs(random_force_approx(spec, xs, xb, tau))) < 1e-12
    off = random_force_approx(spec, xs, xb + 0.2, 0.5)
    assert np.max(np.abs(off)) > 1e-6


def test_full_integrator_conserves_fixed_point():
    spec = zoo("brusselator")
    traj = integrate_full(spec, np.array([1.0]), 5.0, n_out=11)
    assert np.max(np.abs(traj.states_sub - 1.0)) < 1e-6


def test_qss_integrator_tracks_reduced_flow():
    spec = zoo("bistable")
    traj = integrate_qss(spec, np.array([2.0]), 30.0, n_out=101)
    assert abs(traj.states_sub[-1, 0] - 3.7321) < 1e-2
    # bulk column holds the algebraic slave state
    assert np.allclose(
        traj.states_bulk[:, 0], 4.0 / (1 + traj.states_sub[:, 0] ** 2), atol=1e-6
    )


def test_zms_exact_for_bulk_linear_model():
    spec = zoo("wilhelm")
    full = integrate_full(spec, np.array([1.4]), 30.0, n_out=301)
    zms = integrate_zms(spec, np.array([1.4]), 30.0, n_out=301)
    assert np.max(np.abs(full.states_sub - zms.states_sub)) < 1e-6


def test_zms_aux_variables_start_at_zero():
    spec = zoo("bistable")
    traj = integrate_zms(spec, np.array([1.2]), 5.0, n_out=21)
    assert np.allclose(traj.aux_m[0], 0.0)
    assert traj.aux_m.shape == (21, spec.n_bulk)


def test_zmn_step_halving_convergence():
    spec = zoo("bistable")
    x0 = np.array([1.2])
    # Richardson-style self-convergence: the change caused by halving the
    # step must itself shrink under halving (second-order scheme)
    grid = np.linspace(0.0, 4.0, 101)
    sols = {
        step: integrate_zmn(spec, x0, 4.0, step=step).sub_at(grid)
        for step in [0.08, 0.04, 0.02]
    }
    d1 = float(np.max(np.abs(sols[0.04] - sols[0.08])))
    d2 = float(np.max(np.abs(sols[0.02] - sols[0.04])))
    assert d2 < 0.5 * d1


def test_zmn_check_tol_flags_coarse_steps():
    spec = zoo("bistable")
    with pytest.raises(RuntimeError):
        integrate_zmn(spec, np.array([1.2]), 4.0, step=1.0, check_tol=1e-12)


def test_trajectory_dense_eval_matches_grid():
    spec = zoo("bistable")
    traj = integrate_full(spec, np.array([0.6]), 10.0, n_out=101)
    mid = traj.sub_at(traj.times[40])
    assert np.allclose(mid, traj.states_sub[40], atol=1e-9)


def test_trajectory_csv_round_trip(tmp_path):
    spec = zoo("bistable")
    traj = integrate_zms(spec, np.array([1.2]), 2.0, n_out=5)
    path = tmp_path / "traj.csv"
    trajectory_to_csv(traj, str(path))
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "t,x1,x2,m_x2"
    assert len(lines) == 6
    row = np.array([float(v) for v in lines[1].split(",")])
    assert row[0] == 0.0 and abs(row[1] - 1.2) < 1e-15
