"""Partitioned dynamical systems dx/dt = R(x) with subnetwork/bulk split.

States are plain dense vectors with a species order fixed at build time.
The partition is stored as index arrays into the full state, never as a
reordering, so full and reduced views always agree on indexing.

Drift and Jacobian callables are vectorized: they accept arrays of shape
(..., n) and return (..., n) and (..., n, n) respectively.  All the heavy
machinery (kernel banks, basin sweeps) relies on this batching.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SystemSpec",
    "NonFiniteError",
    "fd_jacobian",
    "check_finite",
]

_SQRT_EPS = np.sqrt(np.finfo(float).eps)


class NonFiniteError(ValueError):
    """A drift or Jacobian evaluation produced NaN/Inf."""


def check_finite(arr, what="value"):
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite {what} encountered")
    return arr


def fd_jacobian(fun, x):
    """Central finite-difference Jacobian of a batched vector field.

    Step per coordinate is sqrt(eps)*max(1, |x_j|), which keeps second
    order accuracy and stays robust near zero concentrations.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    cols = []
    for j in range(n):
        h = _SQRT_EPS * np.maximum(1.0, np.abs(x[..., j]))
        xp = x.copy()
        xm = x.copy()
        xp[..., j] = x[..., j] + h
        xm[..., j] = x[..., j] - h
        cols.append((fun(xp) - fun(xm)) / (2.0 * h)[..., None])
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class SystemSpec:
    """Full network: species, drift, Jacobian, subnetwork/bulk partition.

    ``drift`` maps (..., n) states to (..., n) rates; ``jacobian`` maps
    (..., n) states to (..., n, n) matrices d R_i / d x_j.  Both close over
    the resolved parameters.  Instances are immutable and freely shareable.
    """

    species: tuple
    sub: np.ndarray
    bulk: np.ndarray
    drift: callable
    jacobian: callable
    params: dict = field(default_factory=dict)
    model_id: str = "custom"
    bulk_linear: bool = False
    # per-species (lo, hi) bounds used for sampling and uniqueness restarts
    box: np.ndarray | None = None
    # a representative interior state, used as the default Newton seed
    default_state: np.ndarray | None = None

    def __post_init__(self):
        sub = np.asarray(self.sub, dtype=int)
        bulk = np.asarray(self.bulk, dtype=int)
        n = len(self.species)
        all_idx = np.concatenate([sub, bulk])
        if len(np.unique(all_idx)) != len(all_idx):
            raise ValueError("overlapping subnetwork/bulk partition")
        if sorted(all_idx.tolist()) != list(range(n)):
            raise ValueError("partition must cover all species exactly once")
        object.__setattr__(self, "sub", sub)
        object.__setattr__(self, "bulk", bulk)
        if self.box is not None:
            object.__setattr__(self, "box", np.asarray(self.box, dtype=float))
        if self.default_state is not None:
            object.__setattr__(
                self, "default_state", np.asarray(self.default_state, dtype=float)
            )

    # -- dimensions ----------------------------------------------------
    @property
    def n(self):
        return len(self.species)

    @property
    def n_sub(self):
        return len(self.sub)

    @property
    def n_bulk(self):
        return len(self.bulk)

    # -- partition views -----------------------------------------------
    def split(self, state):
        state = np.asarray(state, dtype=float)
        return state[..., self.sub], state[..., self.bulk]

    def join(self, x_sub, x_bulk):
        """Scatter subnetwork and bulk blocks back into a full state."""
        x_sub = np.asarray(x_sub, dtype=float)
        x_bulk = np.asarray(x_bulk, dtype=float)
        shape = np.broadcast_shapes(x_sub.shape[:-1], x_bulk.shape[:-1])
        full = np.empty(shape + (self.n,))
        full[..., self.sub] = x_sub
        full[..., self.bulk] = x_bulk
        return full

    # -- evaluation ----------------------------------------------------
    def drift_full(self, state):
        state = np.asarray(state, dtype=float)
        if state.shape[-1] != self.n:
            raise ValueError(
                f"state dimension {state.shape[-1]} != {self.n} species"
            )
        return check_finite(self.drift(state), "drift")

    def jacobian_full(self, state):
        state = np.asarray(state, dtype=float)
        if state.shape[-1] != self.n:
            raise ValueError(
                f"state dimension {state.shape[-1]} != {self.n} species"
            )
        return check_finite(self.jacobian(state), "jacobian")

    def drift_sub(self, x_sub, x_bulk):
        return self.drift_full(self.join(x_sub, x_bulk))[..., self.sub]

    def drift_bulk(self, x_sub, x_bulk):
        return self.drift_full(self.join(x_sub, x_bulk))[..., self.bulk]

    # Jacobian blocks at a full state; names follow d R_row / d x_col.
    def jac_blocks(self, state):
        J = self.jacobian_full(state)
        s, b = self.sub, self.bulk
        return {
            "ss": J[..., s[:, None], s[None, :]],
            "sb": J[..., s[:, None], b[None, :]],
            "bs": J[..., b[:, None], s[None, :]],
            "bb": J[..., b[:, None], b[None, :]],
        }

    def sub_box(self):
        if self.box is None:
            raise ValueError("model has no physiological box")
        return self.box[self.sub]

    def bulk_box(self):
        if self.box is None:
            raise ValueError("model has no physiological box")
        return self.box[self.bulk]

    def with_partition(self, sub, bulk):
        """Same model, different subnetwork/bulk split."""
        return SystemSpec(
            species=self.species,
            sub=np.asarray(sub, dtype=int),
            bulk=np.asarray(bulk, dtype=int),
            drift=self.drift,
            jacobian=self.jacobian,
            params=self.params,
            model_id=self.model_id,
            bulk_linear=self.bulk_linear,
            box=self.box,
            default_state=self.default_state,
        )
