"""Hard-coded, parameterized constructors with analytic Jacobians.

Six systems: the cross-repressive Hill switches (bistable, tetrastable),
the repressilator ring, the Brusselator, the minimal mass-action bistable
system of Wilhelm, and the four-gene neural tube network.

Hill-type production terms clip species at zero, so drifts stay finite
when an adaptive integrator transiently undershoots zero concentration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .system import SystemSpec

__all__ = ["zoo", "build_system", "list_models", "ZooEntry"]


def _pos(x):
    return np.maximum(x, 0.0)


# ---------------------------------------------------------------------------
# cross-repressive Hill family: dx_j/dt = a / (1 + sum_{i != j} x_i^n) - x_j
# ---------------------------------------------------------------------------

def _hill_or_system(n_species, a, n):
    def drift(x):
        xc = _pos(x)
        xn = xc ** n
        tot = np.sum(xn, axis=-1, keepdims=True)
        denom = 1.0 + tot - xn  # 1 + sum_{i != j} x_i^n
        return a / denom - x

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        xc = _pos(x)
        xn = xc ** n
        tot = np.sum(xn, axis=-1, keepdims=True)
        denom = 1.0 + tot - xn
        # d denom_j / d x_i = n x_i^{n-1} for i != j
        dpow = np.where(x > 0, n * xc ** (n - 1.0), 0.0)
        J = -a / denom[..., :, None] ** 2 * dpow[..., None, :]
        idx = np.arange(n_species)
        J[..., idx, idx] = -1.0
        return J

    return drift, jacobian


def _repressilator_system(a, n):
    def drift(x):
        xr = _pos(np.roll(x, 1, axis=-1))  # repressor of j is j-1, x_0 = x_3
        return a / (1.0 + xr ** n) - x

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        J = np.zeros(shape + (3, 3))
        idx = np.arange(3)
        J[..., idx, idx] = -1.0
        for j in range(3):
            i = (j - 1) % 3
            xi = _pos(x[..., i])
            dpow = np.where(x[..., i] > 0, n * xi ** (n - 1.0), 0.0)
            J[..., j, i] = -a * dpow / (1.0 + xi ** n) ** 2
        return J

    return drift, jacobian


def _brusselator_system(A, B):
    def drift(x):
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack(
            [A - (B + 1.0) * x1 + x1 ** 2 * x2, B * x1 - x1 ** 2 * x2], axis=-1
        )

    def jacobian(x):
        x1, x2 = x[..., 0], x[..., 1]
        J = np.empty(x.shape[:-1] + (2, 2))
        J[..., 0, 0] = -(B + 1.0) + 2.0 * x1 * x2
        J[..., 0, 1] = x1 ** 2
        J[..., 1, 0] = B - 2.0 * x1 * x2
        J[..., 1, 1] = -(x1 ** 2)
        return J

    return drift, jacobian


def _wilhelm_system(k1, k2, k3, k4):
    # Minimal mass-action bistable system; x2 enters both drifts linearly.
    def drift(x):
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack(
            [
                2.0 * k1 * x2 - k2 * x1 ** 2 - k3 * x1 * x2 - k4 * x1,
                k2 * x1 ** 2 - k1 * x2,
            ],
            axis=-1,
        )

    def jacobian(x):
        x1, x2 = x[..., 0], x[..., 1]
        J = np.empty(x.shape[:-1] + (2, 2))
        J[..., 0, 0] = -2.0 * k2 * x1 - k3 * x2 - k4
        J[..., 0, 1] = 2.0 * k1 - k3 * x1
        J[..., 1, 0] = 2.0 * k2 * x1
        J[..., 1, 1] = -k1
        return J

    return drift, jacobian


# ---------------------------------------------------------------------------
# neural tube network: Nkx2.2, Olig2, Irx3, Pax6 (indices 0..3)
# ---------------------------------------------------------------------------

_NT_DEFAULTS = {
    "alpha": 2.0,
    "beta": 2.0,
    "k_PO": 1.9,
    "k_PN": 26.7,
    "k_ON": 60.6,
    "k_OI": 28.4,
    "k_NP": 4.8,
    "k_NO": 27.1,
    "k_NI": 47.1,
    "k_IO": 58.8,
    "k_IN": 76.2,
    "w_P": 3.84,
    "w_O": 2.01263,
    "w_N": 0.572324,
    "w_I": 18.72,
    "k_O_in": 180.0,
    "k_N_in": 373.0,
    "p": 0.5,
}


def _neuraltube_system(prm):
    alpha, beta = prm["alpha"], prm["beta"]
    x_in = np.exp(-prm["p"] / 0.15)
    # activated polymerase weights (constant at fixed position)
    a_N = prm["w_N"] * (1.0 + prm["k_N_in"] * x_in)
    a_O = prm["w_O"] * (1.0 + prm["k_O_in"] * x_in)
    a_I = prm["w_I"]
    a_P = prm["w_P"]
    # repressor binding constants per gene, indexed by species N,O,I,P
    K = np.zeros((4, 4))
    K[0, 1], K[0, 2], K[0, 3] = prm["k_NO"], prm["k_NI"], prm["k_NP"]
    K[1, 0], K[1, 2] = prm["k_ON"], prm["k_OI"]
    K[2, 0], K[2, 1] = prm["k_IN"], prm["k_IO"]
    K[3, 0], K[3, 1] = prm["k_PN"], prm["k_PO"]
    A = np.array([a_N, a_O, a_I, a_P])

    def _gates(x):
        xc = _pos(x)
        fac = 1.0 + K * xc[..., None, :]  # (..., gene, species)
        B = np.prod(fac ** 2, axis=-1)  # (..., gene)
        return xc, fac, B

    def drift(x):
        _, _, B = _gates(x)
        return alpha * A / (A + B) - beta * x

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        _, fac, B = _gates(x)
        # d R_g / d x_j = -alpha A_g B_g / (A_g+B_g)^2 * 2 K_gj / (1+K_gj x_j)
        dlnB = 2.0 * K / fac * (x[..., None, :] > 0)
        J = -alpha * (A * B / (A + B) ** 2)[..., :, None] * dlnB
        idx = np.arange(4)
        J[..., idx, idx] -= beta
        return J

    return drift, jacobian


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ZooEntry:
    id: str
    description: str
    species: tuple
    default_params: dict
    default_sub: tuple
    default_bulk: tuple
    box: tuple  # per-species (lo, hi)
    default_state: tuple
    bulk_linear: bool
    factory: callable


def _make_bistable(prm):
    return _hill_or_system(2, prm["a"], prm["n"])


def _make_tetrastable(prm):
    return _hill_or_system(3, prm["a"], prm["n"])


def _make_repressilator(prm):
    return _repressilator_system(prm["a"], prm["n"])


def _make_brusselator(prm):
    return _brusselator_system(prm["A"], prm["B"])


def _make_wilhelm(prm):
    return _wilhelm_system(prm["k1"], prm["k2"], prm["k3"], prm["k4"])


_ZOO = {
    "bistable": ZooEntry(
        id="bistable",
        description="two-species cross-repressive Hill switch",
        species=("x1", "x2"),
        default_params={"a": 4.0, "n": 2.0},
        default_sub=(0,),
        default_bulk=(1,),
        box=((0.0, 5.0), (0.0, 5.0)),
        default_state=(1.0, 1.0),
        bulk_linear=False,
        factory=_make_bistable,
    ),
    "tetrastable": ZooEntry(
        id="tetrastable",
        description="three-species cross-repressive switch, four attractors",
        species=("x1", "x2", "x3"),
        default_params={"a": 4.0, "n": 2.0},
        default_sub=(0, 1),
        default_bulk=(2,),
        box=((0.0, 5.0),) * 3,
        default_state=(1.0, 1.0, 1.0),
        bulk_linear=False,
        factory=_make_tetrastable,
    ),
    "repressilator": ZooEntry(
        id="repressilator",
        description="three-species repression ring, delay-driven oscillations",
        species=("x1", "x2", "x3"),
        default_params={"a": 4.0, "n": 2.0},
        default_sub=(0, 1),
        default_bulk=(2,),
        box=((0.0, 6.0),) * 3,
        default_state=(1.0, 1.5, 0.5),
        bulk_linear=False,
        factory=_make_repressilator,
    ),
    "brusselator": ZooEntry(
        id="brusselator",
        description="Brusselator limit-cycle oscillator",
        species=("x1", "x2"),
        default_params={"A": 1.0, "B": 3.0},
        default_sub=(0,),
        default_bulk=(1,),
        box=((0.2, 4.5), (0.4, 6.0)),
        default_state=(1.0, 3.0),
        bulk_linear=True,
        factory=_make_brusselator,
    ),
    "wilhelm": ZooEntry(
        id="wilhelm",
        description="minimal mass-action bistable system (bulk-linear)",
        species=("x1", "x2"),
        default_params={"k1": 10.0, "k2": 1.0, "k3": 2.0, "k4": 1.0},
        default_sub=(0,),
        default_bulk=(1,),
        box=((0.0, 13.0), (0.0, 18.0)),
        default_state=(1.4, 0.196),
        bulk_linear=True,
        factory=_make_wilhelm,
    ),
    "neuraltube": ZooEntry(
        id="neuraltube",
        description="four-gene neural tube patterning network (Nkx2.2, Olig2, Irx3, Pax6)",
        species=("Nkx2.2", "Olig2", "Irx3", "Pax6"),
        default_params=dict(_NT_DEFAULTS),
        default_sub=(0, 1),
        default_bulk=(2, 3),
        box=((0.0, 1.1),) * 4,
        default_state=(0.1, 0.1, 0.5, 0.5),
        bulk_linear=False,
        factory=_neuraltube_system,
    ),
}


def list_models():
    """Registry snapshot: one ZooEntry per model id."""
    return [_ZOO[k] for k in sorted(_ZOO)]


def zoo(model_id, params=None, partition=None):
    """Construct a zoo SystemSpec, optionally overriding parameters/partition."""
    if model_id not in _ZOO:
        raise KeyError(f"unknown model id {model_id!r}")
    entry = _ZOO[model_id]
    prm = dict(entry.default_params)
    if params:
        for k, v in params.items():
            if k not in prm:
                raise KeyError(f"parameter {k!r} not in model {model_id!r}")
            prm[k] = float(v)
    drift, jac = entry.factory(prm)
    sub = entry.default_sub if partition is None else partition[0]
    bulk = entry.default_bulk if partition is None else partition[1]
    if len(bulk) == 0:
        raise ValueError("bulk must be non-empty for reduction operations")
    return SystemSpec(
        species=entry.species,
        sub=np.asarray(sub, dtype=int),
        bulk=np.asarray(bulk, dtype=int),
        drift=drift,
        jacobian=jac,
        params=prm,
        model_id=model_id,
        bulk_linear=entry.bulk_linear,
        box=np.asarray(entry.box, dtype=float),
        default_state=np.asarray(entry.default_state, dtype=float),
    )


def build_system(model, partition=None, params=None):
    """Build a SystemSpec from a zoo id or a parsed DSL ModelConfig."""
    if isinstance(model, str):
        return zoo(model, params=params, partition=partition)
    from .dsl import config_to_spec

    return config_to_spec(model, partition=partition, params=params)
