"""Memory channel decomposition and channel-ablated integration.

A channel routes memory from a sender subnetwork species s' through an
outgoing bulk species b' (the one whose drift s' enters), propagates
inside the bulk, and returns through an incoming bulk species b into the
drift of a receiver subnetwork species s.  A channel exists iff both
susceptibilities dR_b'/dx_s' and dR_s/dx_b are not identically zero.

The self-consistent channel variables obey linear ODEs driven by the
trajectory; their sum over (b', s') recovers the plain auxiliary memory
variable m_b, so summed channel contributions reproduce the total memory
term exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_trapezoid = getattr(np, "trapezoid", np.trapz)
from scipy.integrate import solve_ivp

from .memory import (
    ATOL,
    ODE_METHOD,
    RTOL,
    Trajectory,
    _ingredients_at,
    memory_ingredients,
    _flow_solve,
)
from .qss import _newton, solve_qss, solve_qss_batch

__all__ = [
    "ChannelKey",
    "ChannelSeries",
    "enumerate_channels",
    "decompose_zmn",
    "decompose_zms",
    "rank_channels",
    "integrate_zms_star",
]


@dataclass(frozen=True, order=True)
class ChannelKey:
    receiver_s: int
    incoming_b: int
    outgoing_b_prime: int
    sender_s_prime: int

    def label(self, spec):
        sp = spec.species
        return (
            f"{sp[self.receiver_s]}:{sp[self.incoming_b]}:"
            f"{sp[self.outgoing_b_prime]}:{sp[self.sender_s_prime]}"
        )


@dataclass
class ChannelSeries:
    key: ChannelKey
    times: np.ndarray
    contribution: np.ndarray
    score: float


def _susceptibility_masks(spec, n_random=20, seed=0):
    """Nonzero patterns of dR_b'/dx_s' (outgoing) and dR_s/dx_b (incoming).

    Sparsity is read off at the default interior point and re-validated at
    random points in the physiological box.
    """
    states = [spec.default_state] if spec.default_state is not None else []
    if spec.box is not None:
        rng = np.random.default_rng(seed)
        lo, hi = spec.box.T
        states.extend(rng.uniform(lo, hi, size=(n_random, spec.n)))
    out_mask = np.zeros((spec.n_bulk, spec.n_sub), dtype=bool)
    in_mask = np.zeros((spec.n_sub, spec.n_bulk), dtype=bool)
    for st in states:
        blocks = spec.jac_blocks(np.asarray(st, dtype=float))
        out_mask |= blocks["bs"] != 0.0
        in_mask |= blocks["sb"] != 0.0
    return out_mask, in_mask


def enumerate_channels(spec):
    """All channels with structurally nonzero susceptibilities, sorted."""
    out_mask, in_mask = _susceptibility_masks(spec)
    keys = []
    for si, s in enumerate(spec.sub):
        for bi, b in enumerate(spec.bulk):
            if not in_mask[si, bi]:
                continue
            for bpi, bp in enumerate(spec.bulk):
                for spi, sp_ in enumerate(spec.sub):
                    if out_mask[bpi, spi]:
                        keys.append(ChannelKey(int(s), int(b), int(bp), int(sp_)))
    return sorted(keys)


def _bulk_index(spec, species_idx):
    return int(np.flatnonzero(spec.bulk == species_idx)[0])


def _sub_index(spec, species_idx):
    return int(np.flatnonzero(spec.sub == species_idx)[0])


def decompose_zmn(spec, x_sub, tau, rtol=RTOL, atol=ATOL):
    """Per-channel terms of the ZMn kernel at lag tau; sums to memory_zmn."""
    x_sub = np.asarray(x_sub, dtype=float)
    ing = memory_ingredients(spec, x_sub)
    nb = spec.n_bulk
    Jinv = np.linalg.solve(ing.J, np.eye(nb))
    Jbs = -ing.J @ ing.sensitivity  # dR_b/dx_s at the anchor
    Rs = ing.v
    if tau == 0.0:
        E = np.eye(nb)
        f0_phi = ing.f0
    else:
        sol = _flow_solve(spec, x_sub, tau, with_E=True, rtol=rtol, atol=atol)
        ns = spec.n_sub
        phi = sol.y[:ns, -1]
        E = sol.y[ns:, -1].reshape(nb, nb)
        f0_phi = memory_ingredients(spec, phi).f0
    # u[b, b'] = sum_b'' E[b'', b] Jinv[b'', b']
    u = E.T @ Jinv
    out = {}
    for key in enumerate_channels(spec):
        si = _sub_index(spec, key.receiver_s)
        bi = _bulk_index(spec, key.incoming_b)
        bpi = _bulk_index(spec, key.outgoing_b_prime)
        spi = _sub_index(spec, key.sender_s_prime)
        out[key] = float(u[bi, bpi] * Jbs[bpi, spi] * Rs[spi] * f0_phi[bi, si])
    return out


class _ChannelZmsRhs:
    """ZMs with channel-resolved auxiliary memory variables.

    Aux variables are indexed by outgoing pairs (b', s'); each carries a
    bulk vector over the propagation index b.  The memory term on receiver
    s keeps only the (s, b, b', s') combinations in the keep set.
    """

    def __init__(self, spec, pairs, keep_weight):
        self.spec = spec
        self.pairs = pairs              # list of (bpi, spi)
        self.keep = keep_weight         # (n_pairs, n_bulk, n_sub) 0/1
        self.guess = None
        self.ns = spec.n_sub
        self.nb = spec.n_bulk

    def __call__(self, t, y):
        spec = self.spec
        xs = y[: self.ns]
        m = y[self.ns:].reshape(len(self.pairs), self.nb)
        xb = _newton(spec, xs, self.guess)
        self.guess = xb
        ing = _ingredients_at(spec, xs, xb)
        Jinv = np.linalg.solve(ing["J"], np.eye(self.nb))
        Jbs = -ing["J"] @ ing["S"]
        drive = np.stack(
            [Jinv[:, bpi] * (Jbs[bpi, spi] * ing["v"][spi]) for bpi, spi in self.pairs]
        )
        dm = drive + m @ ing["l"]
        # memory on s: sum over kept (pair, b) of f0[b, s] m[pair, b]
        mem = np.einsum("pb,pbs,bs->s", m, self.keep, ing["f0"])
        dxs = ing["v"] + mem
        return np.concatenate([dxs, dm.ravel()])


def _channel_setup(spec, keys):
    pairs = sorted({(_bulk_index(spec, k.outgoing_b_prime),
                     _sub_index(spec, k.sender_s_prime))
                    for k in enumerate_channels(spec)})
    keep = np.zeros((len(pairs), spec.n_bulk, spec.n_sub))
    for k in keys:
        p = (_bulk_index(spec, k.outgoing_b_prime), _sub_index(spec, k.sender_s_prime))
        keep[pairs.index(p), _bulk_index(spec, k.incoming_b),
             _sub_index(spec, k.receiver_s)] = 1.0
    return pairs, keep


def _integrate_channel_system(spec, x_sub0, t_end, keep_keys,
                              rtol=RTOL, atol=ATOL, n_out=1001):
    x_sub0 = np.asarray(x_sub0, dtype=float)
    pairs, keep = _channel_setup(spec, keep_keys)
    rhs = _ChannelZmsRhs(spec, pairs, keep)
    rhs.guess = solve_qss(spec, x_sub0, check_unique=False).x_bulk_star
    y0 = np.concatenate([x_sub0, np.zeros(len(pairs) * spec.n_bulk)])
    sol = solve_ivp(
        rhs, (0.0, t_end), y0, method=ODE_METHOD, rtol=rtol, atol=atol,
        dense_output=True, t_eval=np.linspace(0.0, t_end, n_out),
    )
    if not sol.success:
        raise RuntimeError(f"channel ZMs integration failed: {sol.message}")
    return sol, pairs


def decompose_zms(spec, x_sub0, t_end, rtol=RTOL, atol=ATOL, n_out=1001):
    """Channel-resolved ZMs run; returns one ChannelSeries per channel."""
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    keys = enumerate_channels(spec)
    sol, pairs = _integrate_channel_system(
        spec, x_sub0, t_end, keys, rtol=rtol, atol=atol, n_out=n_out
    )
    ns, nb = spec.n_sub, spec.n_bulk
    xs = sol.y[:ns].T
    m = sol.y[ns:].T.reshape(len(sol.t), len(pairs), nb)
    xb0 = solve_qss(spec, np.asarray(x_sub0, dtype=float), check_unique=False)
    xb = solve_qss_batch(
        spec, xs, np.broadcast_to(xb0.x_bulk_star, (len(sol.t), nb)).copy()
    )
    Jsb = spec.jacobian(spec.join(xs, xb))[..., spec.sub[:, None], spec.bulk[None, :]]
    f0 = np.swapaxes(Jsb, -1, -2)  # (nt, nb, ns)
    series = []
    for k in keys:
        p = pairs.index((_bulk_index(spec, k.outgoing_b_prime),
                         _sub_index(spec, k.sender_s_prime)))
        bi = _bulk_index(spec, k.incoming_b)
        si = _sub_index(spec, k.receiver_s)
        contrib = m[:, p, bi] * f0[:, bi, si]
        score = float(_trapezoid(np.abs(contrib), sol.t))
        series.append(ChannelSeries(key=k, times=sol.t, contribution=contrib,
                                    score=score))
    return series


def rank_channels(series):
    """Descending by score = integral |contribution| dt; ties by key."""
    if not series:
        raise ValueError("no channel series to rank")
    return sorted(series, key=lambda s: (-s.score, s.key))


def integrate_zms_star(spec, x_sub0, t_end, keep, rtol=RTOL, atol=ATOL, n_out=1001):
    """ZMs with every channel not in ``keep`` ablated (forced to QSS)."""
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    available = set(enumerate_channels(spec))
    keep = set(keep)
    unknown = keep - available
    if unknown:
        raise ValueError(f"unknown channels in keep set: {sorted(unknown)}")
    sol, pairs = _integrate_channel_system(
        spec, x_sub0, t_end, keep, rtol=rtol, atol=atol, n_out=n_out
    )
    ns, nb = spec.n_sub, spec.n_bulk
    xs = sol.y[:ns].T
    xb0 = solve_qss(spec, np.asarray(x_sub0, dtype=float), check_unique=False)
    xb = solve_qss_batch(
        spec, xs, np.broadcast_to(xb0.x_bulk_star, (len(sol.t), nb)).copy()
    )
    m = sol.y[ns:].T.reshape(len(sol.t), len(pairs), nb)
    dense = sol.sol
    return Trajectory(
        times=sol.t,
        states_sub=xs,
        states_bulk=xb,
        aux_m=m.sum(axis=1),
        method="zms_star",
        spec=spec,
        _dense_sub=lambda t: np.moveaxis(
            dense(np.asarray(t, dtype=float))[:ns], 0, -1
        ),
    )
