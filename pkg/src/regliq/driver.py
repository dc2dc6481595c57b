"""Drift of the backward Riccati system and its variational identities.

For regime ``i`` the drift reads

    f_i(t, y, psi) = lam_i(t) - y_i^2 / eta_i(t)
                     - sum_k w_k (y_i + psi_k)^2 / (gamma_ik(t) + y_i + psi_k)
                       on {y_i + psi_k > 0}
                     + sum_j q_ij y_j.

The passive-venue sum is monotone in ``y`` and 1-Lipschitz in ``psi``
per unit intensity mass, and each summand has the closed-form infimum
representation exposed by :func:`inf_representation`.  Those structural
facts carry the comparison arguments used elsewhere, so they are kept as
directly testable functions here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, DomainError, OutOfHorizon
from .model import MarkMeasure, MarketModel, coefficient_at


@dataclass(frozen=True)
class DriverInput:
    """Evaluation point of the drift: regime, time, y vector, psi row."""

    regime: int
    t: float
    y: np.ndarray
    psi: np.ndarray


def dark_pool_term(y: float, psi_row, gamma_row, measure: MarkMeasure) -> float:
    """Passive-venue contribution sum_k w_k (y+psi_k)^2/(gamma_k+y+psi_k).

    Each summand carries the indicator {y + psi_k > 0}; on that event the
    denominator is positive because gamma_k >= 0, so no division guard is
    needed beyond the indicator itself.  With gamma_k = 0 the summand
    reduces to w_k * (y + psi_k) analytically.
    """
    if measure.K == 0:
        return 0.0
    s = y + np.asarray(psi_row, dtype=float)
    g = np.asarray(gamma_row, dtype=float)
    if s.shape != (measure.K,) or g.shape != (measure.K,):
        raise DimensionMismatch("psi and gamma rows must have one entry per mark")
    active = s > 0.0
    denom = np.where(active, g + s, 1.0)
    summand = np.where(active, s * s / denom, 0.0)
    return float(np.dot(measure.weights, summand))


def driver_eval(model: MarketModel, inp: DriverInput) -> float:
    """Drift f_i(t, y, psi) for one regime at one time."""
    y = np.asarray(inp.y, dtype=float)
    psi = np.asarray(inp.psi, dtype=float)
    if y.shape != (model.ell,):
        raise DimensionMismatch(f"y must have length {model.ell}")
    if psi.shape != (model.K,):
        raise DimensionMismatch(f"psi must have length {model.K}")
    eta, lam, gamma_row = coefficient_at(model, inp.regime, inp.t)
    yi = float(y[inp.regime])
    coupling = float(np.dot(model.generator.q[inp.regime], y))
    return (
        lam
        - yi * yi / eta
        - dark_pool_term(yi, psi, gamma_row, model.measure)
        + coupling
    )


def inf_representation(s: float, gamma: float) -> float:
    """Infimum over u in [-2, 0] of (gamma+s) u^2 + 2 s u, in closed form.

    For s >= 0 the minimizer is u* = -s/(gamma+s), which lies in [-1, 0],
    and the value equals -s^2/(gamma+s) to machine precision.  Requires
    s >= 0 and gamma + s > 0.
    """
    if s < 0.0:
        raise DomainError(f"s = {s} must be nonnegative")
    if s == 0.0:
        if gamma <= 0.0:
            raise DomainError("gamma + s must be positive")
        return 0.0
    if gamma + s <= 0.0:
        raise DomainError("gamma + s must be positive")
    u_star = -s / (gamma + s)
    return (gamma + s) * u_star * u_star + 2.0 * s * u_star


def drift_all(model: MarketModel, t: float, y: np.ndarray) -> np.ndarray:
    """Vector drift over all regimes at once with psi identically zero.

    Accepts ``y`` of shape (ell,) or (batch, ell) and broadcasts.  Used
    by the backward integrator; must agree with :func:`driver_eval`
    evaluated regime by regime.
    """
    if t < 0.0 or t > model.horizon:
        raise OutOfHorizon(f"t = {t} outside [0, {model.horizon}]")
    c = model.coefficients
    m = c.interval_index(t)
    return drift_interval(model, m, np.asarray(y, dtype=float))


def drift_interval(model: MarketModel, m: int, y: np.ndarray) -> np.ndarray:
    """Same as :func:`drift_all` with the breakpoint interval pinned.

    Coefficients are constant on each interval, so the integrator looks
    the interval up once per step and calls this directly.
    """
    c = model.coefficients
    eta = c.eta[:, m]
    lam = c.lam[:, m]
    # Trial integrator stages may overshoot to huge values; the stepper
    # checks finiteness of the result, so arithmetic noise is fine here.
    with np.errstate(over="ignore", invalid="ignore"):
        out = lam - y * y / eta
        if model.K:
            gamma = c.gamma[:, m, :]  # (ell, K)
            s = y[..., None]
            active = s > 0.0
            denom = np.where(active, gamma + s, 1.0)
            summand = np.where(active, s * s / denom, 0.0)
            out = out - summand @ model.measure.weights
        return out + y @ model.generator.q.T
