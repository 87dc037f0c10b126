"""Trust-region minimizer: SR1 quadratic model with Steihaug-CG steps.

Accepted iterates are monotonically non-increasing in the objective.
Termination: gradient norm below gtol * (1 + |f|), step/radius collapse below
xtol, or the iteration cap.  Trial points with non-finite objective are
rejected by shrinking the radius, so unstable parameter regions are backed
away from rather than crashed into.  The symmetric-rank-one model absorbs
curvature information from rejected trials as well, which matters on the
ill-conditioned nonconvex likelihood surfaces this solver is built for.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SubnetmleError


class InitError(SubnetmleError, ValueError):
    """The objective is not finite at the starting point."""


@dataclass
class MinimizeOptions:
    gtol: float = 1e-6
    xtol: float = 1e-10
    max_iter: int = 500
    initial_radius: float = 1.0
    max_radius: float = 1e3
    accept_ratio: float = 1e-4


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    n_evals: int
    reason: str
    converged: bool
    accepted_values: list[float] = field(default_factory=list)


def _steihaug_cg(g: np.ndarray, B: np.ndarray, radius: float,
                 tol: float) -> np.ndarray:
    """Approximately minimize g's + s'Bs/2 within the radius (CG-Steihaug).

    Follows the CG path from the origin; exits through the boundary on
    negative curvature or when the path leaves the region.
    """
    dim = g.shape[0]
    s = np.zeros(dim)
    r = g.copy()
    d = -r
    rr = float(r @ r)
    if np.sqrt(rr) < tol:
        return s
    for _ in range(2 * dim):
        Bd = B @ d
        dBd = float(d @ Bd)
        if dBd <= 0:
            return s + _boundary_tau(s, d, radius) * d
        alpha = rr / dBd
        s_next = s + alpha * d
        if np.linalg.norm(s_next) >= radius:
            return s + _boundary_tau(s, d, radius) * d
        s = s_next
        r = r + alpha * Bd
        rr_next = float(r @ r)
        if np.sqrt(rr_next) < tol:
            return s
        d = -r + (rr_next / rr) * d
        rr = rr_next
    return s


def _boundary_tau(s: np.ndarray, d: np.ndarray, radius: float) -> float:
    """Positive tau with ||s + tau d|| = radius."""
    dd = float(d @ d)
    if dd == 0.0:
        return 0.0
    sd = float(s @ d)
    ss = float(s @ s)
    disc = max(sd * sd + dd * (radius * radius - ss), 0.0)
    return (-sd + np.sqrt(disc)) / dd


def minimize(fun_grad, x0, opts: MinimizeOptions | None = None) -> MinimizeResult:
    """Minimize a smooth function given a (value, gradient) callable."""
    opts = opts or MinimizeOptions()
    x = np.asarray(x0, dtype=float).copy()
    f, g = fun_grad(x)
    n_evals = 1
    if not (np.isfinite(f) and np.isfinite(g).all()):
        raise InitError("objective or gradient not finite at the starting point")
    dim = x.shape[0]
    B = np.eye(dim)
    radius = opts.initial_radius
    accepted = [float(f)]
    reason = "maxiter"
    it = 0
    while it < opts.max_iter:
        gnorm = float(np.linalg.norm(g))
        if gnorm <= opts.gtol * (1.0 + abs(f)):
            reason = "gtol"
            break
        it += 1
        cg_tol = min(0.1, np.sqrt(gnorm)) * gnorm
        step = _steihaug_cg(g, B, radius, cg_tol)
        snorm = float(np.linalg.norm(step))
        if snorm <= opts.xtol or radius <= opts.xtol:
            reason = "xtol"
            break
        predicted = -(float(g @ step) + 0.5 * float(step @ B @ step))
        x_trial = x + step
        f_trial, g_trial = fun_grad(x_trial)
        n_evals += 1
        finite = np.isfinite(f_trial) and np.isfinite(g_trial).all()
        rho = (f - f_trial) / predicted if (finite and predicted > 0) else -np.inf
        # SR1 update from the trial pair, accepted or not
        if finite:
            y = g_trial - g
            resid = y - B @ step
            denom = float(resid @ step)
            if abs(denom) > 1e-8 * snorm * np.linalg.norm(resid):
                B = B + np.outer(resid, resid) / denom
        if rho < 0.1:
            radius = 0.25 * snorm
        elif rho > 0.75 and snorm >= 0.8 * radius:
            radius = min(2.0 * radius, opts.max_radius)
        if finite and rho > opts.accept_ratio and f_trial <= f:
            x, f, g = x_trial, f_trial, g_trial
            accepted.append(float(f))
    return MinimizeResult(
        x=x,
        fun=float(f),
        grad=g,
        iterations=it,
        n_evals=n_evals,
        reason=reason,
        converged=reason in ("gtol", "xtol"),
        accepted_values=accepted,
    )
