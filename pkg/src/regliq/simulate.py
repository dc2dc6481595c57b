"""Scenario simulation of the controlled liquidation.

A scenario is a regime path plus a set of passive-fill events.  Under a
feedback surface Y the position decays between events by the exact
exponential factor exp(-int Y/eta dt), with the integral evaluated by
trapezoid on the quadrature partition (the supplied grid united with all
event times, so events land on nodes exactly).  At a fill with mark k
the position multiplies by gamma_k/(gamma_k + Y), equivalently drops by
the executed passive quantity.  Running cost accumulates

    eta xi^2 + lambda X^2 + sum_k w_k gamma_k beta_k(X)^2

by trapezoid, with the adverse-selection term in its intensity-integral
form over all marks (same expectation as charging realized fills, lower
variance).  All randomness comes from the caller-provided generator, so
scenarios are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import OutOfGrid
from .model import MarkMeasure, MarketModel, RegimeGenerator, coefficient_at
from .truncated_solver import TimeGrid


# ---------------------------------------------------------------------------
# Random primitives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegimePath:
    """Piecewise-constant right-continuous regime trajectory.

    ``states[k]`` holds on [switch_times[k-1], switch_times[k]); the
    first state is the initial regime and consecutive states differ.
    """

    switch_times: np.ndarray
    states: np.ndarray

    @property
    def n_switches(self) -> int:
        return len(self.switch_times)

    def states_at(self, times) -> np.ndarray:
        """Regime alpha_t (right-continuous) at each requested time."""
        idx = np.searchsorted(self.switch_times, np.asarray(times), side="right")
        return self.states[idx]

    def state_before(self, t: float) -> int:
        """Regime alpha_{t-} just before ``t``."""
        idx = int(np.searchsorted(self.switch_times, t, side="left"))
        return int(self.states[idx])


@dataclass(frozen=True)
class FillEvents:
    """Passive-fill times and their mark indices, time ordered."""

    times: np.ndarray
    marks: np.ndarray

    @property
    def n_events(self) -> int:
        return len(self.times)


def sample_regime_path(
    gen: RegimeGenerator, i0: int, T: float, rng: np.random.Generator
) -> RegimePath:
    """Exact chain simulation by exponential holding times.

    Holding in state i is Exp(-q[i][i]); the next state is drawn from
    q[i][j]/(-q[i][i]).  A zero diagonal makes the state absorbing.
    """
    times: list[float] = []
    states = [int(i0)]
    t = 0.0
    current = int(i0)
    while True:
        rate, probs = gen.rates_from(current)
        if rate <= 0.0:
            break
        t += rng.exponential(1.0 / rate)
        if t >= T:
            break
        current = int(rng.choice(len(probs), p=probs))
        times.append(t)
        states.append(current)
    return RegimePath(
        switch_times=np.array(times, dtype=float), states=np.array(states, dtype=int)
    )


def sample_fills(
    measure: MarkMeasure, T: float, rng: np.random.Generator
) -> FillEvents:
    """Compound-Poisson sampling: Poisson count, uniform order statistics,
    categorical marks proportional to the weights."""
    if measure.K == 0 or measure.total_mass <= 0.0:
        return FillEvents(times=np.empty(0), marks=np.empty(0, dtype=int))
    n = int(rng.poisson(measure.total_mass * T))
    times = np.sort(rng.uniform(0.0, T, size=n))
    marks = rng.choice(measure.K, size=n, p=measure.weights / measure.total_mass)
    return FillEvents(times=times, marks=marks.astype(int))


# ---------------------------------------------------------------------------
# Solution surfaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClosedFormSurface:
    """Analytic feedback surface for oracle-grade tests.

    ``fn`` maps an array of times to a (regimes, n_times) array of Y
    values.  ``kind`` mirrors the numerical surfaces: "truncated"
    surfaces carry a penalization level, "singular" ones blow up at the
    horizon and are only evaluated strictly before it.
    """

    model: MarketModel
    fn: Callable[[np.ndarray], np.ndarray]
    kind: str = "singular"
    L: float | None = None
    t_max: float | None = None

    def __post_init__(self):
        if self.t_max is None:
            object.__setattr__(self, "t_max", self.model.horizon)

    def values_at(self, times) -> np.ndarray:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        out = np.asarray(self.fn(times), dtype=float)
        if out.ndim == 1:
            out = np.broadcast_to(out, (self.model.ell, len(times))).copy()
        return out

    def value(self, t: float, regime: int) -> float:
        return float(self.values_at([t])[regime, 0])


def feedback_controls(sol, t: float, regime: int, x_pre: float, mark: int | None = None):
    """Optimal trading rates at state ``x_pre``: market-order rate
    xi = (Y/eta) x and, for a fill with the given mark,
    beta = Y/(gamma_k + Y) x.  Both are linear in the position."""
    if t < 0.0 or t > sol.t_max + 1e-12 * max(1.0, sol.t_max):
        raise OutOfGrid(f"t = {t} beyond the surface span [0, {sol.t_max}]")
    model = sol.model
    y = sol.value(t, regime)
    eta, _, gamma_row = coefficient_at(model, regime, t)
    xi = y / eta * x_pre
    if mark is None:
        return xi, 0.0
    g = float(gamma_row[mark])
    return xi, y / (g + y) * x_pre


# ---------------------------------------------------------------------------
# State evolution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StatePath:
    """One simulated trajectory on its quadrature partition.

    Node values are post-event (cadlag): at a fill time the stored X has
    already dropped by the executed quantity.
    """

    times: np.ndarray
    X: np.ndarray
    xi: np.ndarray
    cost_nodes: np.ndarray
    regimes: np.ndarray
    beta_applied: np.ndarray
    regime_path: RegimePath
    fills: FillEvents
    x0: float
    xi_scale: float

    @property
    def running_cost(self) -> float:
        return float(self.cost_nodes[-1])

    @property
    def terminal_position(self) -> float:
        return float(self.X[-1])

    def at(self, t: float) -> tuple[float, float, int]:
        """(X_t, accumulated cost, regime) at a partition node time."""
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        k = max(k, 0)
        return float(self.X[k]), float(self.cost_nodes[k]), int(self.regimes[k])


def penalized_cost(path: StatePath, L: float) -> float:
    """Running cost plus the terminal open-position penalty L X_T^2."""
    return path.running_cost + L * path.terminal_position**2


def _simulate(
    model: MarketModel,
    sol,
    regime_path: RegimePath,
    fills: FillEvents,
    grid: TimeGrid,
    xi_scale: float,
    x0: float | None,
    product_form: bool,
) -> StatePath:
    if x0 is None:
        x0 = model.initial_position
    t_end = grid.end
    if t_end > sol.t_max + 1e-12 * max(1.0, sol.t_max):
        raise OutOfGrid(
            f"simulation horizon {t_end} beyond the surface span {sol.t_max}"
        )
    coeffs = model.coefficients
    bp = coeffs.breakpoints
    n_int_max = coeffs.n_intervals - 1

    sw = regime_path.switch_times
    sw = sw[(sw > 0.0) & (sw < t_end)]
    keep = (fills.times > 0.0) & (fills.times <= t_end)
    fill_t = fills.times[keep]
    fill_m = fills.marks[keep]
    times = np.unique(np.concatenate([grid.nodes, sw, fill_t]))
    n = len(times)

    Y = sol.values_at(times)  # (ell, n)
    reg = regime_path.states_at(times)
    r_int = reg[:-1]  # regime on [t_k, t_{k+1})
    idx = np.arange(n - 1)
    mids = 0.5 * (times[:-1] + times[1:])
    m_int = np.clip(np.searchsorted(bp, mids, side="right") - 1, 0, n_int_max)

    eta_int = coeffs.eta[r_int, m_int]
    lam_int = coeffs.lam[r_int, m_int]
    y_left = Y[r_int, idx]
    y_right = Y[r_int, idx + 1]
    h = np.diff(times)
    rate_int = 0.5 * h * (y_left + y_right) / eta_int
    decay = np.exp(-xi_scale * rate_int)

    # Jump multiplier per node: 1 everywhere except at fill nodes, where
    # the pre-fill regime (the one holding just before the event) rules.
    jump = np.ones(n)
    if len(fill_t):
        f_idx = np.searchsorted(times, fill_t)
        r_pre = r_int[f_idx - 1]
        m_fill = np.clip(np.searchsorted(bp, fill_t, side="right") - 1, 0, n_int_max)
        g_fill = coeffs.gamma[r_pre, m_fill, fill_m]
        y_fill = Y[r_pre, f_idx]
        jump[f_idx] = g_fill / (g_fill + y_fill)
    else:
        f_idx = np.empty(0, dtype=int)

    if product_form:
        # Direct product expression: exponential of the integrated rate
        # times the product of fill multipliers.
        integr = np.concatenate([[0.0], np.cumsum(xi_scale * rate_int)])
        X = x0 * np.exp(-integr) * np.cumprod(jump)
    else:
        step = decay * jump[1:]
        X = np.empty(n)
        X[0] = x0
        X[1:] = x0 * np.cumprod(step)
    x_pre = X[:-1] * decay  # value just before the right node's events
    beta_applied = x_pre[f_idx - 1] - X[f_idx] if len(f_idx) else np.empty(0)

    # Cost integrand per unit time at a node: X^2 * (scaled impact +
    # risk + intensity-weighted adverse selection over all marks).
    def _gfactor(yv, rows, mm):
        out = (xi_scale * xi_scale) * yv * yv / eta_int + lam_int
        if model.K:
            gam = coeffs.gamma[rows, mm, :]  # (n-1, K)
            frac = yv[:, None] / (gam + yv[:, None])
            out = out + (gam * frac * frac) @ model.measure.weights
        return out

    g_left = _gfactor(y_left, r_int, m_int)
    g_right = _gfactor(y_right, r_int, m_int)
    seg = 0.5 * h * (X[:-1] ** 2 * g_left + x_pre**2 * g_right)
    cost_nodes = np.concatenate([[0.0], np.cumsum(seg)])

    m_node = np.clip(np.searchsorted(bp, times, side="right") - 1, 0, n_int_max)
    eta_node = coeffs.eta[reg, m_node]
    xi_nodes = xi_scale * Y[reg, np.arange(n)] / eta_node * X

    return StatePath(
        times=times,
        X=X,
        xi=xi_nodes,
        cost_nodes=cost_nodes,
        regimes=reg,
        beta_applied=beta_applied,
        regime_path=regime_path,
        fills=FillEvents(times=fill_t, marks=fill_m),
        x0=float(x0),
        xi_scale=float(xi_scale),
    )


def evolve_state(
    model: MarketModel,
    sol,
    regime_path: RegimePath,
    fills: FillEvents,
    grid: TimeGrid,
    xi_scale: float = 1.0,
    x0: float | None = None,
) -> StatePath:
    """Sequential state evolution under the feedback surface.

    Between events the position multiplies step by step by the exact
    exponential decay factor; fills apply their multiplier at their
    exact sampled times (events split the quadrature partition).
    ``xi_scale`` perturbs the market-order rate only, for suboptimality
    studies.
    """
    return _simulate(model, sol, regime_path, fills, grid, xi_scale, x0, False)


def product_formula_path(
    model: MarketModel,
    sol,
    regime_path: RegimePath,
    fills: FillEvents,
    grid: TimeGrid,
    xi_scale: float = 1.0,
    x0: float | None = None,
) -> StatePath:
    """Position via the closed product expression.

    Algebraically identical to :func:`evolve_state`; kept as a separate
    arithmetic route so the two can be cross-checked node by node.
    """
    return _simulate(model, sol, regime_path, fills, grid, xi_scale, x0, True)
