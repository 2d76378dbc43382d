"""Levenberg-Marquardt least squares with analytic Jacobians.

Models are objects exposing ``names``, ``value(x, p)`` and ``jacobian(x, p)``
(shape (len(x), len(p))). The fitter minimises sum(w * (y - f)^2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LeastSquaresSolution:
    params: np.ndarray
    covariance: np.ndarray  # (J^T W J)^-1, not yet scaled by the residual variance
    cost: float  # weighted residual sum of squares
    converged: bool
    iterations: int
    message: str


class DampedCosine:
    """A exp(-t/tau) cos(omega t + phi) + offset."""

    names = ("A", "tau", "omega", "phi", "offset")

    @staticmethod
    def value(t, p):
        a, tau, omega, phi, c = p
        return a * np.exp(-t / tau) * np.cos(omega * t + phi) + c

    @staticmethod
    def jacobian(t, p):
        a, tau, omega, phi, _ = p
        decay = np.exp(-t / tau)
        cos, sin = np.cos(omega * t + phi), np.sin(omega * t + phi)
        return np.column_stack([
            decay * cos,
            a * decay * cos * t / tau**2,
            -a * decay * sin * t,
            -a * decay * sin,
            np.ones_like(t),
        ])


class ExponentialDecay:
    """A0 exp(-x/tau)."""

    names = ("A0", "tau")

    @staticmethod
    def value(x, p):
        return p[0] * np.exp(-x / p[1])

    @staticmethod
    def jacobian(x, p):
        e = np.exp(-x / p[1])
        return np.column_stack([e, p[0] * e * x / p[1] ** 2])


def levenberg_marquardt(model, x, y, p0, weights=None, *, max_iter: int = 500,
                        xtol: float = 1e-8, gtol: float = 1e-8) -> LeastSquaresSolution:
    """Minimise the weighted squared residuals of ``model`` starting at ``p0``.

    Converged when the relative parameter step falls below ``xtol`` or the
    scaled gradient below ``gtol``. Damping follows Marquardt's diagonal
    scaling with multiplicative updates.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    sw = np.sqrt(w)
    p = np.array(p0, dtype=float)

    def residuals(p):
        return sw * (y - model.value(x, p))

    r = residuals(p)
    cost = float(r @ r)
    lam = 1e-3
    converged, message, it = False, "maximum iterations reached", 0
    for it in range(1, max_iter + 1):
        j = sw[:, None] * model.jacobian(x, p)
        a = j.T @ j
        g = j.T @ r
        diag = np.diag(a).copy()
        diag[diag == 0] = 1.0
        # cosine between the residual vector and each Jacobian column
        if cost == 0 or np.max(np.abs(g) / np.sqrt(diag * cost)) < gtol:
            converged, message = True, "gradient tolerance reached"
            break
        while True:
            try:
                step = np.linalg.solve(a + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                lam *= 10
                if lam > 1e16:
                    break
                continue
            trial = p + step
            r_trial = residuals(trial)
            cost_trial = float(r_trial @ r_trial)
            if np.isfinite(cost_trial) and cost_trial <= cost:
                break
            lam *= 10
            if lam > 1e16:
                break
        if lam > 1e16:
            # no downhill step at machine precision: accept only a near-stationary point
            converged = bool(np.max(np.abs(g) / np.sqrt(diag * cost)) < np.sqrt(gtol))
            message = "no further reduction possible"
            break
        small_step = np.all(np.abs(step) <= xtol * (np.abs(p) + xtol))
        p, r, cost = trial, r_trial, cost_trial
        lam = max(lam / 10, 1e-12)
        if small_step:
            converged, message = True, "step tolerance reached"
            break
    j = sw[:, None] * model.jacobian(x, p)
    try:
        cov = np.linalg.inv(j.T @ j)
    except np.linalg.LinAlgError:
        cov = np.full((len(p), len(p)), np.inf)
        converged, message = False, "singular normal matrix"
    if not np.all(np.isfinite(p)):
        converged, message = False, "non-finite parameters"
    return LeastSquaresSolution(p, cov, cost, converged, it, message)


def jacobian_check(model, x, p, rel_step: float = 1e-6) -> float:
    """Largest deviation of the analytic Jacobian from central differences.

    Each column's error is measured relative to that column's norm.
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    analytic = model.jacobian(x, p)
    worst = 0.0
    for i in range(len(p)):
        h = rel_step * max(abs(p[i]), 1.0)
        up, down = p.copy(), p.copy()
        up[i] += h
        down[i] -= h
        numeric = (model.value(x, up) - model.value(x, down)) / (2 * h)
        norm = max(np.linalg.norm(analytic[:, i]), np.linalg.norm(numeric), 1e-300)
        worst = max(worst, float(np.linalg.norm(analytic[:, i] - numeric) / norm))
    return worst
