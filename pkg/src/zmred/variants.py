"""Approximate memory kernels used for comparison.

Three simplifications of the full nonlinear kernel:

* a bulk-vacuum kernel that linearizes around the empty-bulk state and
  propagates with a constant matrix exponential,
* a frozen-anchor kernel that keeps the self-consistent anchor point but
  drops the flow of the anchor during the lag,
* the fully linearized kernel at a fixed point of the reduced dynamics,
  a matrix-valued function of the lag only.

The linearized kernel also powers a positional sweep of channel
amplitudes for the spatially parameterized gene network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .channels import ChannelKey, enumerate_channels, _bulk_index, _sub_index
from .memory import integrate_qss, memory_ingredients
from .qss import solve_qss
from .zoo import zoo

__all__ = [
    "memory_gouasmi",
    "memory_gqss",
    "LinearKernel",
    "linearize_memory",
    "linear_amplitude_sweep",
]


def memory_gouasmi(spec, x_sub, tau):
    """Bulk-vacuum kernel: susceptibility and source at x^b = 0, constant
    propagator exp(k tau) with k the bulk-bulk Jacobian at x^b = 0."""
    x_sub = np.asarray(x_sub, dtype=float)
    zero_b = np.zeros(spec.n_bulk)
    full = spec.join(x_sub, zero_b)
    blocks = spec.jac_blocks(full)
    Jsb = blocks["sb"]
    k = blocks["bb"]
    Rb = spec.drift_bulk(x_sub, zero_b)
    tau_arr = np.atleast_1d(np.asarray(tau, dtype=float))
    out = np.stack([Jsb @ expm(k * t) @ Rb for t in tau_arr])
    return out[0] if np.ndim(tau) == 0 else out


def memory_gqss(spec, x_sub, tau):
    """Frozen-anchor kernel c exp(l tau) f0; matches the nonlinear kernel
    exactly at tau = 0 and whenever the anchor does not move."""
    x_sub = np.asarray(x_sub, dtype=float)
    ing = memory_ingredients(spec, x_sub)
    tau_arr = np.atleast_1d(np.asarray(tau, dtype=float))
    out = np.stack([ing.c @ expm(ing.l * t) @ ing.f0 for t in tau_arr])
    return out[0] if np.ndim(tau) == 0 else out


@dataclass
class LinearKernel:
    """Matrix kernel K(tau) of the memory linearized at a reduced fixed point.

    K(tau)[s, s'] couples a past subnetwork displacement along s' into the
    present drift of s.  ``channel_amplitudes`` splits K(0) by channel.
    """

    x_sub_star: np.ndarray
    x_bulk_star: np.ndarray
    l: np.ndarray
    f0: np.ndarray
    c1: np.ndarray  # d c / d x^s at the fixed point, shape (n_bulk, n_sub)
    spec: object

    def __call__(self, tau):
        tau_arr = np.atleast_1d(np.asarray(tau, dtype=float))
        out = np.stack(
            [(self.c1.T @ expm(self.l * t) @ self.f0).T for t in tau_arr]
        )
        return out[0] if np.ndim(tau) == 0 else out

    def channel_amplitudes(self):
        """K(0) split over channels: at zero lag the propagator is the
        identity, so a channel carries C1[b', s'] f0[b, s] when b = b' and
        zero otherwise; the dict sums to K(0)."""
        spec = self.spec
        out = {}
        for key in enumerate_channels(spec):
            si = _sub_index(spec, key.receiver_s)
            bi = _bulk_index(spec, key.incoming_b)
            bpi = _bulk_index(spec, key.outgoing_b_prime)
            spi = _sub_index(spec, key.sender_s_prime)
            out[key] = float(
                self.c1[bpi, spi] * (bi == bpi) * self.f0[bi, si]
            )
        return out


def linearize_memory(spec, x_sub_star):
    """Linear memory kernel at a reduced fixed point.

    The source coefficient is the state derivative of c = -S R_s; the
    product-rule term through R_s survives only via its derivative since
    R_s itself vanishes at the fixed point, giving
    c1 = -S (J_ss + J_sb S) analytically.
    """
    x_sub_star = np.asarray(x_sub_star, dtype=float)
    ing = memory_ingredients(spec, x_sub_star)
    v_norm = float(np.max(np.abs(ing.v)))
    if v_norm > 1e-8:
        raise ValueError(
            f"not a fixed point of the reduced dynamics (|v| = {v_norm:.3e})"
        )
    full = spec.join(x_sub_star, ing.x_bulk_star)
    blocks = spec.jac_blocks(full)
    S = ing.sensitivity
    c1 = -S @ (blocks["ss"] + blocks["sb"] @ S)
    return LinearKernel(
        x_sub_star=x_sub_star,
        x_bulk_star=ing.x_bulk_star,
        l=ing.l,
        f0=ing.f0,
        c1=c1,
        spec=spec,
    )


def _reduced_fixed_point(spec, guess, tol=1e-13, max_iter=100):
    """Newton on v(x^s) with the analytic reduced Jacobian J_ss + J_sb S."""
    xs = np.array(guess, dtype=float)
    for _ in range(max_iter):
        q = solve_qss(spec, xs, check_unique=False)
        v = spec.drift_sub(xs, q.x_bulk_star)
        if np.max(np.abs(v)) <= tol:
            return xs
        blocks = spec.jac_blocks(spec.join(xs, q.x_bulk_star))
        dv = blocks["ss"] + blocks["sb"] @ q.sensitivity
        xs = xs + np.linalg.solve(dv, -v)
    raise RuntimeError("reduced fixed point iteration did not converge")


def linear_amplitude_sweep(positions, params=None, partition=None):
    """Channel amplitudes of the linearized kernel along the spatial axis.

    For each position the gene network is rebuilt, the reduced dynamics
    are relaxed from the default state, the resulting fixed point is
    polished by Newton, and K(0) is split over channels.  Returns (channel_keys, amplitudes) with amplitudes shaped
    (n_positions, n_channels); positions where the reduction fails carry
    NaN rows.
    """
    positions = np.asarray(positions, dtype=float)
    base = dict(params or {})
    keys = None
    rows = []
    for p in positions:
        prm = dict(base)
        prm["p"] = float(p)
        spec = zoo("neuraltube", params=prm, partition=partition)
        if keys is None:
            keys = enumerate_channels(spec)
        try:
            relaxed = integrate_qss(
                spec, spec.default_state[spec.sub], 50.0, n_out=2
            ).states_sub[-1]
            xs = _reduced_fixed_point(spec, relaxed)
            kern = linearize_memory(spec, xs)
            amp = kern.channel_amplitudes()
            rows.append([amp[k] for k in keys])
        except (RuntimeError, ValueError, np.linalg.LinAlgError):
            rows.append([np.nan] * len(keys))
    return keys, np.asarray(rows)
