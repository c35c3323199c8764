"""Core container and finite-difference helper tests."""

import numpy as np
import pytest

from zmred import SystemSpec, NonFiniteError, fd_jacobian
from zmred.system import check_finite


def _toy_spec():
    def drift(x):
        x = np.asarray(x, dtype=float)
        return np.stack(
            [x[..., 1] - x[..., 0], x[..., 0] ** 2 - x[..., 1]], axis=-1
        )

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1] + (2, 2)
        J = np.zeros(shape)
        J[..., 0, 0] = -1.0
        J[..., 0, 1] = 1.0
        J[..., 1, 0] = 2.0 * x[..., 0]
        J[..., 1, 1] = -1.0
        return J

    return SystemSpec(
        species=("u", "w"),
        sub=np.array([0]),
        bulk=np.array([1]),
        drift=drift,
        jacobian=jacobian,
    )


def test_partition_must_cover_all_species():
    spec = _toy_spec()
    with pytest.raises(ValueError):
        SystemSpec(
            species=("u", "w"),
            sub=np.array([0]),
            bulk=np.array([0]),
            drift=spec.drift,
            jacobian=spec.jacobian,
        )
    with pytest.raises(ValueError):
        SystemSpec(
            species=("u", "w", "z"),
            sub=np.array([0]),
            bulk=np.array([1]),
            drift=spec.drift,
            jacobian=spec.jacobian,
        )


def test_split_join_round_trip():
    spec = _toy_spec()
    state = np.array([1.5, -0.25])
    xs, xb = spec.split(state)
    assert np.array_equal(spec.join(xs, xb), state)
    # batched join
    xs_b = np.array([[1.0], [2.0]])
    xb_b = np.array([[3.0], [4.0]])
    joined = spec.join(xs_b, xb_b)
    assert joined.shape == (2, 2)
    assert np.array_equal(joined[:, 0], [1.0, 2.0])


def test_jac_blocks_layout():
    spec = _toy_spec()
    blocks = spec.jac_blocks(np.array([2.0, 0.5]))
    assert blocks["ss"].shape == (1, 1)
    assert blocks["sb"][0, 0] == 1.0
    assert blocks["bs"][0, 0] == 4.0
    assert blocks["bb"][0, 0] == -1.0


def test_fd_jacobian_matches_analytic():
    spec = _toy_spec()
    rng = np.random.default_rng(7)
    for _ in range(20):
        x = rng.uniform(-2.0, 2.0, size=2)
        J_fd = fd_jacobian(spec.drift, x)
        assert np.allclose(J_fd, spec.jacobian(x), atol=1e-6)


def test_fd_jacobian_nonvectorized_callable():
    # fd_jacobian must cope with functions defined for single states only
    def f(x):
        return np.array([np.exp(x[0]) * x[1], x[0] - x[1] ** 3])

    x = np.array([0.3, 1.2])
    expected = np.array(
        [[np.exp(0.3) * 1.2, np.exp(0.3)], [1.0, -3 * 1.2 ** 2]]
    )
    assert np.allclose(fd_jacobian(f, x), expected, atol=1e-6)


def test_check_finite_raises():
    with pytest.raises(NonFiniteError):
        check_finite(np.array([1.0, np.nan]))
    with pytest.raises(NonFiniteError):
        check_finite(np.array([np.inf]))
    check_finite(np.array([0.0, -1e300]))  # no raise


def test_drift_full_masks_and_boxes():
    spec = _toy_spec()
    state = np.array([1.0, 2.0])
    r = spec.drift_full(state)
    assert np.allclose(r, [1.0, -1.0])
    assert spec.n == 2 and spec.n_sub == 1 and spec.n_bulk == 1


def test_with_partition_swaps_roles():
    spec = _toy_spec()
    flipped = spec.with_partition([1], [0])
    assert flipped.species == spec.species
    assert flipped.sub.tolist() == [1]
    assert flipped.bulk.tolist() == [0]
    state = np.array([1.0, 2.0])
    assert np.allclose(flipped.drift_full(state), spec.drift_full(state))
