"""Fixed points, basins of attraction, Hopf scans, amplitude maps.

Heavy grid work runs through batched right-hand sides: all cells of a
basin map advance together inside a single solve_ivp system, with
converged cells dropped from the active set between time windows.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

_trapezoid = getattr(np, "trapezoid", np.trapz)
from scipy.integrate import solve_ivp
from scipy.optimize import brentq
from scipy.stats import qmc

from .memory import (
    Trajectory,
    ingredients_batch,
    integrate_full,
    integrate_qss,
    integrate_zmn,
    integrate_zms,
    memory_ingredients,
)
from .qss import QssError, solve_qss, solve_qss_batch
from .system import fd_jacobian

__all__ = [
    "FixedPoint",
    "FixedPointSet",
    "BasinGrid",
    "HopfCurve",
    "find_fixed_points",
    "basin_map",
    "hopf_scan",
    "memory_amplitude_map",
    "compare_timecourses",
    "count_crossings",
    "time_to_steady",
]

TIMEOUT_LABEL = -1
ATTRACTOR_RADIUS = 1e-3
STEADY_FRACTION = 0.01


# ---------------------------------------------------------------------------
# fixed points
# ---------------------------------------------------------------------------

@dataclass
class FixedPoint:
    state: np.ndarray
    eigenvalues: np.ndarray
    stability: str  # stable | saddle | unstable
    residual: float


@dataclass
class FixedPointSet:
    points: list
    system_kind: str

    def stable(self):
        return [p for p in self.points if p.stability == "stable"]

    def __len__(self):
        return len(self.points)


def _classify(eigs):
    re = np.real(eigs)
    if np.all(re < 0):
        return "stable"
    if np.all(re > 0):
        return "unstable"
    return "saddle"


def _drift_jac_box(spec, kind):
    """Pointwise drift/Jacobian of the chosen dynamical system.

    full: the complete network.  qss: the reduced drift v(x^s) with its
    analytic Jacobian.  zms: the memory-augmented state (x^s, m) with a
    finite-difference Jacobian.
    """
    if kind == "full":
        return spec.drift_full, spec.jacobian_full, spec.box

    if kind == "qss":
        def drift(xs):
            q = solve_qss(spec, xs, check_unique=False)
            return spec.drift_sub(xs, q.x_bulk_star)

        def jac(xs):
            q = solve_qss(spec, xs, check_unique=False)
            blocks = spec.jac_blocks(spec.join(xs, q.x_bulk_star))
            return blocks["ss"] + blocks["sb"] @ q.sensitivity

        return drift, jac, spec.sub_box()

    if kind == "zms":
        ns, nb = spec.n_sub, spec.n_bulk

        def drift(y):
            xs, m = y[:ns], y[ns:]
            ing = memory_ingredients(spec, xs)
            return np.concatenate([ing.v + m @ ing.f0, ing.c + m @ ing.l])

        def jac(y):
            return fd_jacobian(lambda z: np.apply_along_axis(drift, -1, z), y)

        box = np.vstack([spec.sub_box(), np.tile([-1.0, 1.0], (nb, 1))])
        return drift, jac, box

    raise ValueError(f"unknown system kind {kind!r}")


def _newton_polish(fun, jac, x0, max_iter=100):
    """Damped Newton run to stagnation; returns (best x, best residual)."""
    x = np.array(x0, dtype=float)
    try:
        r = fun(x)
    except (QssError, ValueError):
        return None, np.inf
    best_x, best_f = x, float(np.max(np.abs(r)))
    for _ in range(max_iter):
        try:
            J = np.atleast_2d(jac(x))
            step = np.linalg.solve(J, -np.atleast_1d(r))
        except (np.linalg.LinAlgError, QssError, ValueError):
            break
        alpha, improved = 1.0, False
        for _ in range(40):
            try:
                x_new = x + alpha * step
                r_new = fun(x_new)
            except (QssError, ValueError):
                alpha *= 0.5
                continue
            f_new = float(np.max(np.abs(r_new)))
            if f_new < best_f:
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
        x, r, best_x, best_f = x_new, r_new, x_new, f_new
        if best_f == 0.0:
            break
    return best_x, best_f


def find_fixed_points(spec, kind="full", box=None, n_starts=64, accept=1e-10):
    """Multi-start Newton fixed-point search with stability classification.

    Starts are low-discrepancy Sobol samples inside the box; converged
    roots are deduplicated at 1e-6 and classified by the eigenvalues of
    the system Jacobian.  An empty result raises no error, only a warning.
    """
    fun, jac, default_box = _drift_jac_box(spec, kind)
    if box is None:
        box = default_box
    box = np.asarray(box, dtype=float)
    d = len(box)
    sampler = qmc.Sobol(d, scramble=True, seed=12345)
    lo, hi = box.T
    starts = lo + (hi - lo) * sampler.random(n_starts)
    if kind == "zms":
        # memory variables vanish at fixed points; seed them there
        starts[:, spec.n_sub:] = 0.0

    roots = []
    for x0 in starts:
        x, res = _newton_polish(fun, jac, x0)
        if x is None or res > accept:
            continue
        if any(np.max(np.abs(x - r[0])) <= 1e-6 for r in roots):
            continue
        roots.append((x, res))

    points = []
    for x, res in sorted(roots, key=lambda r: tuple(r[0])):
        eigs = np.linalg.eigvals(np.atleast_2d(jac(x)))
        points.append(
            FixedPoint(
                state=x,
                eigenvalues=eigs[np.argsort(-np.real(eigs))],
                stability=_classify(eigs),
                residual=res,
            )
        )
    if not points:
        warnings.warn(f"no fixed points found for kind={kind!r}", RuntimeWarning)
    return FixedPointSet(points=points, system_kind=kind)


# ---------------------------------------------------------------------------
# basin maps
# ---------------------------------------------------------------------------

@dataclass
class BasinGrid:
    axes: tuple               # (species index i, species index j)
    x_values: np.ndarray
    y_values: np.ndarray
    labels: np.ndarray        # (ny, nx) ints, TIMEOUT_LABEL for unresolved
    time_to_steady: np.ndarray
    attractors: np.ndarray    # (n_attr, n_sub) subnetwork coordinates
    method: str

    def timeout_fraction(self):
        return float(np.mean(self.labels == TIMEOUT_LABEL))

    def boundary_edges(self):
        """Grid edges between differing labels: list of ((iy,ix),(iy2,ix2))."""
        edges = []
        L = self.labels
        ny, nx = L.shape
        for iy in range(ny):
            for ix in range(nx):
                if ix + 1 < nx and L[iy, ix] != L[iy, ix + 1]:
                    edges.append(((iy, ix), (iy, ix + 1)))
                if iy + 1 < ny and L[iy, ix] != L[iy + 1, ix]:
                    edges.append(((iy, ix), (iy + 1, ix)))
        return edges

    def to_csv(self, path):
        xi, yi = np.meshgrid(self.x_values, self.y_values)
        with open(path, "w") as fh:
            fh.write("x1,x2,label,time_to_steady\n")
            for x, y, lab, tts in zip(
                xi.ravel(), yi.ravel(), self.labels.ravel(),
                self.time_to_steady.ravel(),
            ):
                name = "timeout" if lab == TIMEOUT_LABEL else str(int(lab))
                fh.write(f"{x:.17g},{y:.17g},{name},{tts:.17g}\n")


class _BatchBasinRhs:
    """Batched drift over the active cells of a basin sweep."""

    def __init__(self, spec, method, n_cells, xb_guess):
        self.spec = spec
        self.method = method
        self.ns = spec.n_sub
        self.nb = spec.n_bulk
        self.dim = {"full": spec.n, "qss": self.ns, "zms": self.ns + self.nb}[method]
        self.guess = np.array(xb_guess, dtype=float)  # (n_cells, nb)

    def select(self, mask):
        self.guess = self.guess[mask]

    def __call__(self, t, y):
        spec = self.spec
        N = len(self.guess)
        Y = y.reshape(N, self.dim)
        if self.method == "full":
            return spec.drift(Y).ravel()
        xs = Y[:, : self.ns]
        ing = ingredients_batch(spec, xs, self.guess)
        good = np.all(np.isfinite(ing["xb"]), axis=-1)
        self.guess[good] = ing["xb"][good]
        if self.method == "qss":
            out = np.where(good[:, None], np.nan_to_num(ing["v"]), 0.0)
            return out.ravel()
        m = Y[:, self.ns:]
        dxs = ing["v"] + np.einsum("nb,nbs->ns", m, ing["f0"])
        dm = ing["c"] + np.einsum("nb,nbc->nc", m, ing["l"])
        out = np.concatenate([dxs, dm], axis=1)
        return np.where(good[:, None], np.nan_to_num(out), 0.0).ravel()


def basin_map(spec, method, axes=None, resolution=100, t_max=200.0,
              rtol=1e-6, atol=1e-9, attractors=None, window=2.0, ranges=None):
    """Label each grid cell of the subnetwork plane by its attractor.

    The grid is advanced in time windows with all unresolved cells packed
    into one batched ODE system.  A cell is resolved when its subnetwork
    coordinates come within ``ATTRACTOR_RADIUS`` of a stable fixed point;
    its time to steady state is the first sampled time after which the
    trajectory stays within 1% of that attractor in every coordinate.
    Cells unresolved at ``t_max`` are labeled timeout.
    """
    if spec.n_sub != 2:
        raise ValueError("basin maps need a two-species subnetwork")
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    if method not in ("full", "qss", "zms"):
        raise ValueError(f"unknown basin method {method!r}")
    if axes is None:
        axes = (int(spec.sub[0]), int(spec.sub[1]))
    if attractors is None:
        fps = find_fixed_points(spec, kind="qss" if method != "full" else "full",
                                n_starts=256)
        stable = fps.stable()
        if not stable:
            raise RuntimeError("no stable fixed points: cannot label basins")
        attractors = np.array([p.state[: spec.n_sub] if method != "full"
                               else p.state[spec.sub] for p in stable])
    attractors = np.asarray(attractors, dtype=float)

    box = spec.sub_box() if ranges is None else np.asarray(ranges, dtype=float)
    xv = np.linspace(box[0, 0], box[0, 1], resolution)
    yv = np.linspace(box[1, 0], box[1, 1], resolution)
    XX, YY = np.meshgrid(xv, yv)
    xs0 = np.column_stack([XX.ravel(), YY.ravel()])
    n_cells = len(xs0)

    xb0 = solve_qss_batch(
        spec, xs0,
        np.tile(spec.default_state[spec.bulk], (n_cells, 1))
        if spec.default_state is not None else np.ones((n_cells, spec.n_bulk)),
    )
    bad = ~np.all(np.isfinite(xb0), axis=-1)
    xb0[bad] = (spec.default_state[spec.bulk]
                if spec.default_state is not None else 1.0)

    rhs = _BatchBasinRhs(spec, method, n_cells, xb0)
    if method == "full":
        Y = spec.join(xs0, xb0)
    elif method == "qss":
        Y = xs0.copy()
    else:
        Y = np.concatenate([xs0, np.zeros((n_cells, spec.n_bulk))], axis=1)

    labels = np.full(n_cells, TIMEOUT_LABEL, dtype=int)
    tts = np.full(n_cells, np.nan)
    cand_label = np.full(n_cells, -2, dtype=int)
    cand_time = np.full(n_cells, np.nan)
    active = np.arange(n_cells)
    thresh = np.maximum(STEADY_FRACTION * np.abs(attractors), ATTRACTOR_RADIUS)

    t = 0.0
    n_sample = 5
    while t < t_max and len(active):
        t_next = min(t + window, t_max)
        t_eval = np.linspace(t, t_next, n_sample + 1)[1:]
        sol = solve_ivp(
            rhs, (t, t_next), Y[active].ravel(), method="RK45",
            rtol=rtol, atol=atol, t_eval=t_eval,
        )
        if not sol.success:
            break
        frames = sol.y.T.reshape(len(t_eval), len(active), rhs.dim)
        for te, frame in zip(t_eval, frames):
            xs = frame[:, spec.sub] if method == "full" else frame[:, : spec.n_sub]
            # distance to each attractor in units of the 1% threshold
            dev = np.abs(xs[:, None, :] - attractors[None, :, :])
            within = np.all(dev <= thresh[None, :, :], axis=-1)
            near = np.all(dev <= ATTRACTOR_RADIUS, axis=-1)
            k = np.argmin(np.max(dev, axis=-1), axis=-1)
            idx = np.arange(len(active))
            in_band = within[idx, k]
            same = cand_label[active] == k
            fresh = in_band & ~(same & np.isfinite(cand_time[active]))
            cand_label[active[fresh]] = k[fresh]
            cand_time[active[fresh]] = te
            lost = ~in_band
            cand_time[active[lost]] = np.nan
            cand_label[active[lost]] = -2
            done = near[idx, k] & (labels[active] == TIMEOUT_LABEL)
            labels[active[done]] = k[done]
            tts[active[done]] = cand_time[active[done]]
        Y[active] = frames[-1]
        keep = labels[active] == TIMEOUT_LABEL
        rhs.select(keep)
        active = active[keep]
        t = t_next

    return BasinGrid(
        axes=axes,
        x_values=xv,
        y_values=yv,
        labels=labels.reshape(resolution, resolution),
        time_to_steady=tts.reshape(resolution, resolution),
        attractors=attractors,
        method=method,
    )


# ---------------------------------------------------------------------------
# Hopf scans
# ---------------------------------------------------------------------------

@dataclass
class HopfCurve:
    points: list              # (a_critical, n) pairs
    system_kind: str
    failures: list = field(default_factory=list)  # n values without a bracket

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("n,a_critical,method\n")
            for a, n in self.points:
                fh.write(f"{n:.17g},{a:.17g},{self.system_kind}\n")


def _symmetric_point(a, n):
    """Root of x = a / (1 + x^n), the all-equal fixed point of the ring."""
    f = lambda x: x * (1.0 + x ** n) - a
    hi = max(a, 1.0) + 1.0
    return brentq(f, 0.0, hi, xtol=1e-14)


def _leading_real_part(builder, kind, a, n):
    from .zoo import zoo

    spec = zoo(builder, params={"a": a, "n": n})
    xstar = _symmetric_point(a, n)
    if kind == "full":
        J = spec.jacobian_full(np.full(spec.n, xstar))
    elif kind == "qss":
        xs = np.full(spec.n_sub, xstar)
        q = solve_qss(spec, xs, guess=np.full(spec.n_bulk, xstar),
                      check_unique=False)
        blocks = spec.jac_blocks(spec.join(xs, q.x_bulk_star))
        J = blocks["ss"] + blocks["sb"] @ q.sensitivity
    elif kind == "zms":
        ns, nb = spec.n_sub, spec.n_bulk

        def aug(y):
            xs, m = y[:ns], y[ns:]
            ing = memory_ingredients(
                spec, xs, guess=np.full(nb, xstar)
            )
            return np.concatenate([ing.v + m @ ing.f0, ing.c + m @ ing.l])

        y0 = np.concatenate([np.full(ns, xstar), np.zeros(nb)])
        J = fd_jacobian(lambda z: np.apply_along_axis(aug, -1, z), y0)
    else:
        raise ValueError(f"unknown system kind {kind!r}")
    eigs = np.linalg.eigvals(np.atleast_2d(J))
    osc = eigs[np.abs(np.imag(eigs)) > 1e-9]
    pool = osc if len(osc) else eigs
    return float(np.max(np.real(pool)))


def hopf_scan(spec, method, a_range, n_range, resolution, model_id=None):
    """Critical a(n) where the leading oscillatory eigenvalue crosses zero.

    For each n the scan brackets a sign change of the leading real part
    over ``a_range`` and refines it by bisection to 1e-6 in a.  A missing
    bracket is recorded as a failure for that n ("no bifurcation" when it
    happens for every n).
    """
    model = model_id or spec.model_id
    a_lo, a_hi = a_range
    ns = np.linspace(n_range[0], n_range[1], resolution)
    points, failures = [], []
    for n in ns:
        g = lambda a: _leading_real_part(model, method, a, n)
        try:
            g_lo, g_hi = g(a_lo), g(a_hi)
        except (QssError, ValueError):
            failures.append(float(n))
            continue
        if g_lo == 0.0:
            points.append((float(a_lo), float(n)))
            continue
        if g_lo * g_hi > 0:
            failures.append(float(n))
            continue
        a_c = brentq(g, a_lo, a_hi, xtol=1e-6)
        points.append((float(a_c), float(n)))
    return HopfCurve(points=points, system_kind=method, failures=failures)


# ---------------------------------------------------------------------------
# memory amplitude maps
# ---------------------------------------------------------------------------

@dataclass
class AmplitudeMap:
    x_values: np.ndarray
    y_values: np.ndarray
    amplitude: np.ndarray     # (ny, nx), NaN where QSS failed
    receiver: object          # species index or "sum"

    def zero_contour(self):
        """Zero-level segments by marching squares, in data coordinates."""
        return _marching_squares(self.x_values, self.y_values, self.amplitude)

    def interp(self, xs):
        """Bilinear amplitude lookup at points (N, 2)."""
        xs = np.atleast_2d(xs)
        ix = np.clip(np.searchsorted(self.x_values, xs[:, 0]) - 1, 0,
                     len(self.x_values) - 2)
        iy = np.clip(np.searchsorted(self.y_values, xs[:, 1]) - 1, 0,
                     len(self.y_values) - 2)
        x0, x1 = self.x_values[ix], self.x_values[ix + 1]
        y0, y1 = self.y_values[iy], self.y_values[iy + 1]
        tx = (xs[:, 0] - x0) / (x1 - x0)
        ty = (xs[:, 1] - y0) / (y1 - y0)
        A = self.amplitude
        return ((1 - tx) * (1 - ty) * A[iy, ix]
                + tx * (1 - ty) * A[iy, ix + 1]
                + (1 - tx) * ty * A[iy + 1, ix]
                + tx * ty * A[iy + 1, ix + 1])


def _marching_squares(xv, yv, Z):
    """Zero-level segments of a scalar grid; linear edge interpolation."""
    segs = []

    def edge_point(x0, y0, v0, x1, y1, v1):
        t = v0 / (v0 - v1)
        return (x0 + t * (x1 - x0), y0 + t * (y1 - y0))

    for iy in range(len(yv) - 1):
        for ix in range(len(xv) - 1):
            vals = [Z[iy, ix], Z[iy, ix + 1], Z[iy + 1, ix + 1], Z[iy + 1, ix]]
            if not np.all(np.isfinite(vals)):
                continue
            xs = [xv[ix], xv[ix + 1], xv[ix + 1], xv[ix]]
            ys = [yv[iy], yv[iy], yv[iy + 1], yv[iy + 1]]
            pts = []
            for k in range(4):
                k2 = (k + 1) % 4
                v0, v1 = vals[k], vals[k2]
                if (v0 < 0) != (v1 < 0):
                    pts.append(edge_point(xs[k], ys[k], v0, xs[k2], ys[k2], v1))
            for p0, p1 in zip(pts[0::2], pts[1::2]):
                segs.append((p0, p1))
    return segs


def memory_amplitude_map(spec, axes=None, resolution=100, receiver="sum",
                         ranges=None):
    """Zero-lag memory amplitude on a subnetwork grid.

    The amplitude is the instantaneous kernel c(x^s) f0(x^s); by default
    the signed amplitudes of all receivers are summed into one diagnostic
    field.  Cells where the bulk steady state cannot be found are NaN.
    """
    if spec.n_sub != 2:
        raise ValueError("amplitude maps need a two-species subnetwork")
    box = spec.sub_box() if ranges is None else np.asarray(ranges, dtype=float)
    xv = np.linspace(box[0, 0], box[0, 1], resolution)
    yv = np.linspace(box[1, 0], box[1, 1], resolution)
    XX, YY = np.meshgrid(xv, yv)
    xs = np.column_stack([XX.ravel(), YY.ravel()])
    guess = (np.tile(spec.default_state[spec.bulk], (len(xs), 1))
             if spec.default_state is not None
             else np.ones((len(xs), spec.n_bulk)))
    ing = ingredients_batch(spec, xs, guess)
    with np.errstate(all="ignore"):
        M0 = np.einsum("nb,nbs->ns", ing["c"], ing["f0"])
    if receiver == "sum":
        amp = M0.sum(axis=-1)
    else:
        amp = M0[:, list(spec.sub).index(receiver)]
    amp = np.where(np.all(np.isfinite(ing["xb"]), axis=-1), amp, np.nan)
    return AmplitudeMap(
        x_values=xv, y_values=yv,
        amplitude=amp.reshape(resolution, resolution),
        receiver=receiver,
    )


# ---------------------------------------------------------------------------
# time course comparison
# ---------------------------------------------------------------------------

def time_to_steady(times, values, fraction=STEADY_FRACTION,
                   floor=ATTRACTOR_RADIUS):
    """First time after which every coordinate stays within ``fraction``
    of its final value (absolute floor for coordinates near zero)."""
    values = np.atleast_2d(np.asarray(values, dtype=float).T).T
    final = values[-1]
    thresh = np.maximum(fraction * np.abs(final), floor)
    ok = np.all(np.abs(values - final) <= thresh, axis=-1)
    # last violation wins
    bad = np.flatnonzero(~ok)
    if len(bad) == 0:
        return float(times[0])
    if bad[-1] + 1 >= len(times):
        return float(times[-1])
    return float(times[bad[-1] + 1])


_INTEGRATORS = {
    "full": integrate_full,
    "qss": integrate_qss,
    "zms": integrate_zms,
    "zmn": integrate_zmn,
}


@dataclass
class ComparisonResult:
    trajectories: dict        # method -> Trajectory
    times: np.ndarray
    sup_error: dict           # method -> sup-norm relative error vs full
    l2_error: dict
    steady_times: dict


def compare_timecourses(spec, x_sub0, t_end, methods=("full", "qss", "zms"),
                        n_out=1001, **kwargs):
    """Run several integrators from one initial condition and metricize.

    Relative errors are measured against the full model on a shared
    output grid, normalized by the sup (resp. L2) norm of the full
    subnetwork signal.  Times to steady state use the 1% criterion.
    """
    methods = list(dict.fromkeys(["full", *methods]))
    unknown = set(methods) - set(_INTEGRATORS) - {"zms_star"}
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    grid = np.linspace(0.0, t_end, n_out)
    trajs, sup_err, l2_err, steady = {}, {}, {}, {}
    for m in methods:
        if m == "zms_star":
            from .channels import integrate_zms_star

            keep = kwargs.get("keep", None)
            if keep is None:
                raise ValueError("zms_star needs a keep set of channels")
            trajs[m] = integrate_zms_star(spec, x_sub0, t_end, keep)
        else:
            trajs[m] = _INTEGRATORS[m](spec, x_sub0, t_end)
    ref = trajs["full"].sub_at(grid)
    ref_sup = np.max(np.abs(ref))
    ref_l2 = np.sqrt(_trapezoid(np.sum(ref ** 2, axis=-1), grid))
    for m in methods:
        cur = trajs[m].sub_at(grid)
        diff = cur - ref
        sup_err[m] = float(np.max(np.abs(diff)) / ref_sup)
        l2_err[m] = float(
            np.sqrt(_trapezoid(np.sum(diff ** 2, axis=-1), grid)) / ref_l2
        )
        steady[m] = time_to_steady(grid, cur)
    return ComparisonResult(
        trajectories=trajs,
        times=grid,
        sup_error=sup_err,
        l2_error=l2_err,
        steady_times=steady,
    )


# ---------------------------------------------------------------------------
# planar trajectory crossings
# ---------------------------------------------------------------------------

def _segments_intersect(p, q, r, s, min_sin=0.1):
    """Transversal intersections between segment sets pq (N,2) and rs (M,2).

    Near-parallel contacts are rejected: trajectories that merge onto a
    shared route jitter across each other at vanishing angle, which is
    not a crossing of the underlying flow.  Returns an (N, M) bool array.
    """
    d1 = q - p                      # (N, 2)
    d2 = s - r                      # (M, 2)
    denom = d1[:, None, 0] * d2[None, :, 1] - d1[:, None, 1] * d2[None, :, 0]
    norms = (np.linalg.norm(d1, axis=1)[:, None]
             * np.linalg.norm(d2, axis=1)[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        sin_angle = np.abs(denom) / norms
    w0 = r[None, :, 0] - p[:, None, 0]
    w1 = r[None, :, 1] - p[:, None, 1]
    t = w0 * d2[None, :, 1] - w1 * d2[None, :, 0]
    u = w0 * d1[:, None, 1] - w1 * d1[:, None, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = t / denom
        u = u / denom
    return (sin_angle > min_sin) & (t > 0) & (t < 1) & (u > 0) & (u < 1)


def count_crossings(traj_a, traj_b, coords=(0, 1), exclude=None,
                    exclude_radius=0.05, n_resample=8000):
    """Count transversal crossings of two planar trajectories.

    coords selects two subnetwork components.  Both trajectories are
    resampled densely so polyline chords track the true paths through
    fast transients.  Segments with an endpoint within ``exclude_radius``
    of any point in ``exclude`` (typically the attractors, where all
    trajectories merge) are ignored, as are segments far below the path
    scale: once a trajectory has settled, its residual motion is solver
    noise with arbitrary direction, not flow.
    """
    def resample(traj):
        g = np.linspace(traj.times[0], traj.times[-1], n_resample)
        return traj.sub_at(g)[:, list(coords)]

    A = resample(traj_a)
    B = resample(traj_b)
    extent = max(np.ptp(A, axis=0).max(), np.ptp(B, axis=0).max(), 1e-30)
    min_len = 1e-7 * extent

    def keep_mask(P):
        keep = np.linalg.norm(P[1:] - P[:-1], axis=-1) > min_len
        if exclude is None:
            return keep
        ex = np.atleast_2d(exclude)
        d = np.min(np.linalg.norm(P[:, None, :] - ex[None, :, :], axis=-1),
                   axis=-1)
        near = d <= exclude_radius
        return keep & ~(near[:-1] | near[1:])

    ka, kb = keep_mask(A), keep_mask(B)
    pa, qa = A[:-1][ka], A[1:][ka]
    rb, sb = B[:-1][kb], B[1:][kb]
    count = 0
    chunk = 512
    for i in range(0, len(rb), chunk):
        count += int(np.sum(
            _segments_intersect(pa, qa, rb[i:i + chunk], sb[i:i + chunk])
        ))
    return count
