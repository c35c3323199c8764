"""Bulk quasi-steady-state solver.

Solves R_b(x^s, x^b*) = 0 by Newton iteration with a backtracking line
search on ||R_b||^2, provides the reduced drift v(x^s), the bulk-bulk
Jacobian and the sensitivity d x^b*/d x^s.

A batched variant runs Newton simultaneously over many subnetwork states;
it is the workhorse behind kernel banks and grid sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "QssSolution",
    "QssError",
    "MultipleRootsError",
    "solve_qss",
    "solve_qss_batch",
    "qss_drift",
    "qss_sensitivity",
]

QSS_TOL = 1e-12
MAX_ITER = 200
ARMIJO = 1e-4
BACKTRACK = 0.5
RESTARTS = 8


class QssError(RuntimeError):
    """Newton iteration for the bulk steady state failed."""


class MultipleRootsError(QssError):
    """Random restarts found a second bulk root: uniqueness assumption broken."""


@dataclass
class QssSolution:
    x_bulk_star: np.ndarray
    J: np.ndarray            # bulk-bulk Jacobian at the QSS point
    sensitivity: np.ndarray  # d x_b* / d x_s, shape (n_bulk, n_sub)
    residual_norm: float
    cond: float


def _newton(spec, x_sub, guess, tol=QSS_TOL, max_iter=MAX_ITER):
    xb = np.array(guess, dtype=float)
    r = spec.drift_bulk(x_sub, xb)
    fnorm = float(np.max(np.abs(r)))
    for _ in range(max_iter):
        if fnorm <= tol:
            return xb
        J = spec.jac_blocks(spec.join(x_sub, xb))["bb"]
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise QssError("singular bulk Jacobian during Newton") from exc
        f2 = float(r @ r)
        alpha = 1.0
        for _ in range(60):
            xb_new = xb + alpha * step
            r_new = spec.drift_bulk(x_sub, xb_new)
            if float(r_new @ r_new) <= (1.0 - 2.0 * ARMIJO * alpha) * f2:
                break
            alpha *= BACKTRACK
        else:
            raise QssError("line search failed in bulk Newton")
        xb, r = xb_new, r_new
        fnorm = float(np.max(np.abs(r)))
    if fnorm <= tol:
        return xb
    raise QssError(
        f"bulk Newton did not converge after {max_iter} iterations "
        f"(residual {fnorm:.3e})"
    )


def solve_qss(spec, x_sub, guess=None, tol=QSS_TOL, check_unique=None):
    """Solve R_b(x_sub, x_b*) = 0.

    Without a guess, the iteration starts from the model's default interior
    point and additionally verifies uniqueness heuristically through random
    restarts inside the physiological box; a second distinct root aborts.
    """
    if spec.n_bulk == 0:
        raise ValueError("bulk must be non-empty for reduction operations")
    x_sub = np.asarray(x_sub, dtype=float)
    if check_unique is None:
        check_unique = guess is None
    if guess is None:
        if spec.default_state is not None:
            guess = spec.default_state[spec.bulk]
        else:
            guess = np.ones(spec.n_bulk)
    xb = _newton(spec, x_sub, guess, tol=tol)

    if check_unique and spec.box is not None:
        rng = np.random.default_rng(0)
        lo, hi = spec.bulk_box().T
        for _ in range(RESTARTS):
            start = rng.uniform(lo, hi)
            try:
                other = _newton(spec, x_sub, start, tol=tol)
            except QssError:
                continue
            if np.max(np.abs(other - xb)) > 1e-6:
                raise MultipleRootsError(
                    "bulk steady state is not unique for this subnetwork "
                    f"state (roots {xb} and {other})"
                )

    full = spec.join(x_sub, xb)
    J = spec.jac_blocks(full)["bb"]
    Jbs = spec.jac_blocks(full)["bs"]
    try:
        sens = -np.linalg.solve(J, Jbs)
    except np.linalg.LinAlgError as exc:
        raise QssError("singular bulk Jacobian at QSS root") from exc
    res = float(np.max(np.abs(spec.drift_bulk(x_sub, xb))))
    return QssSolution(
        x_bulk_star=xb,
        J=J,
        sensitivity=sens,
        residual_norm=res,
        cond=float(np.linalg.cond(J)),
    )


def solve_qss_batch(spec, x_sub, guess, tol=QSS_TOL, max_iter=60):
    """Vectorized bulk Newton over a batch of subnetwork states.

    x_sub: (N, n_sub), guess: (N, n_bulk).  Returns (N, n_bulk).
    Non-convergent rows come back as NaN; callers decide whether that is
    an error (pointwise operations) or a hole (grid sweeps).
    """
    x_sub = np.asarray(x_sub, dtype=float)
    xb = np.array(guess, dtype=float)
    active = np.ones(len(xb), dtype=bool)
    for _ in range(max_iter):
        r = spec.drift(spec.join(x_sub[active], xb[active]))[..., spec.bulk]
        done = np.max(np.abs(r), axis=-1) <= tol
        if np.all(done):
            active[active] = False
            break
        idx = np.flatnonzero(active)[~done]
        xs_a, xb_a, r_a = x_sub[idx], xb[idx], r[~done]
        J = spec.jacobian(spec.join(xs_a, xb_a))[
            ..., spec.bulk[:, None], spec.bulk[None, :]
        ]
        with np.errstate(all="ignore"):
            try:
                step = np.linalg.solve(J, -r_a[..., None])[..., 0]
            except np.linalg.LinAlgError:
                # singular rows: fall back to pseudo-inverse steps
                step = -(np.linalg.pinv(J) @ r_a[..., None])[..., 0]
        # damped acceptance: halve until the residual norm does not grow
        f2 = np.sum(r_a ** 2, axis=-1)
        alpha = np.ones(len(idx))
        accepted = np.zeros(len(idx), dtype=bool)
        trial = xb_a.copy()
        for _ in range(30):
            cand = xb_a + alpha[:, None] * step
            r_new = spec.drift(spec.join(xs_a, cand))[..., spec.bulk]
            with np.errstate(invalid="ignore"):
                ok = np.sum(r_new ** 2, axis=-1) <= (1.0 - 2.0 * ARMIJO * alpha) * f2
            ok &= np.all(np.isfinite(r_new), axis=-1)
            newly = ok & ~accepted
            trial[newly] = cand[newly]
            accepted |= ok
            if np.all(accepted):
                break
            alpha[~accepted] *= BACKTRACK
        trial[~accepted] = np.nan
        xb[idx] = trial
        active[idx] = accepted
        if not np.any(active):
            break
    else:
        xb[active] = np.nan
    return xb


def qss_drift(spec, x_sub, qss=None, guess=None):
    """Reduced drift v(x^s) = R_s(x^s, x^b*(x^s))."""
    if qss is None:
        qss = solve_qss(spec, x_sub, guess=guess, check_unique=False)
    return spec.drift_sub(np.asarray(x_sub, dtype=float), qss.x_bulk_star)


def qss_sensitivity(spec, qss, x_sub=None):
    """d x_b*/d x_s from the linear systems J X = -dR_b/dx_s."""
    return qss.sensitivity
