"""Backward solver for the penalized Riccati system.

With deterministic piecewise-constant coefficients the backward system
reduces to the coupled ODE system

    dY_i/dt = -f_i(t, Y, 0),    Y_i(T) = L   for every regime i,

integrated from the horizon back to zero.  Each grid step runs one
classic 4-stage Runge-Kutta step plus a step-halving check; steps that
miss the per-step relative tolerance are bisected recursively, so node
accuracy does not depend on the grid being a priori fine enough.

Penalization levels share the grid, which lets a whole ladder integrate
as one batched array; the exact terminal ordering then carries through
every node (the comparison property checked by :func:`solve_ladder`).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .driver import drift_interval
from .errors import DomainError, MonotonicityViolation, ToleranceFailure
from .model import MarketModel

DEFAULT_STEP_RTOL = 1e-10
DEFAULT_MAX_DEPTH = 32


def envelope_tol(L: float) -> float:
    """Slack allowed between a numerical solution and its exact envelope."""
    return 1e-7 + 1e-6 * L


# ---------------------------------------------------------------------------
# Time grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing solver nodes with geometric clustering near T.

    ``refinement`` is the ratio between consecutive tail gaps T - t, and
    ``tail_span`` the width of the clustered region before the horizon.
    """

    nodes: np.ndarray
    refinement: float
    tail_span: float

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def start(self) -> float:
        return float(self.nodes[0])

    @property
    def end(self) -> float:
        return float(self.nodes[-1])

    def __post_init__(self):
        if np.any(np.diff(self.nodes) <= 0.0):
            raise ValueError("grid nodes must be strictly increasing")

    def contains(self, times) -> bool:
        """True when every requested time is a node (exactly)."""
        idx = np.searchsorted(self.nodes, times)
        idx = np.minimum(idx, len(self.nodes) - 1)
        return bool(np.all(self.nodes[idx] == np.asarray(times)))

    def truncate(self, t_cut: float) -> "TimeGrid":
        """Sub-grid of nodes at or before ``t_cut`` (within rounding)."""
        keep = self.nodes <= t_cut + 1e-12 * max(1.0, abs(t_cut))
        if not keep.any():
            raise ValueError(f"no grid nodes at or before {t_cut}")
        return TimeGrid(
            nodes=self.nodes[keep], refinement=self.refinement, tail_span=self.tail_span
        )


def make_grid(
    T: float,
    steps: int,
    breakpoints=(),
    refinement: float = 2.0,
    tau_min: float | None = None,
    tail_span: float | None = None,
    extra=(),
) -> TimeGrid:
    """Build a solver grid on [0, T].

    The grid is the union of ``steps`` uniform intervals, a geometric
    tail T - tau_min * refinement^k covering ``tail_span`` before the
    horizon, every coefficient breakpoint, and any ``extra`` nodes.
    The right-hand side of the backward system is discontinuous at
    breakpoints, so they must be nodes for the stepper to see smooth
    pieces only.
    """
    if T <= 0.0:
        raise ValueError("horizon must be positive")
    if steps < 1:
        raise ValueError("steps must be at least 1")
    if refinement <= 1.0:
        raise ValueError("refinement ratio must exceed 1")
    if tau_min is None:
        tau_min = 1e-8 * T
    if tail_span is None:
        tail_span = 0.25 * T
    base = np.linspace(0.0, T, steps + 1)
    taus = []
    tau = tau_min
    while tau < tail_span:
        taus.append(tau)
        tau *= refinement
    tail = T - np.array(taus) if taus else np.empty(0)
    nodes = np.concatenate(
        [base, tail, np.asarray(breakpoints, dtype=float), np.asarray(extra, dtype=float)]
    )
    nodes = np.unique(nodes)
    nodes = nodes[(nodes >= 0.0) & (nodes <= T)]
    if nodes[0] != 0.0 or nodes[-1] != T:
        raise ValueError("grid must span [0, T] exactly")
    return TimeGrid(nodes=nodes, refinement=refinement, tail_span=tail_span)


def grid_for_model(model: MarketModel, steps: int, **kwargs) -> TimeGrid:
    """Grid on the model horizon including all coefficient breakpoints."""
    return make_grid(
        model.horizon, steps, breakpoints=model.coefficients.breakpoints, **kwargs
    )


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------


def closed_form_single_regime(eta: float, L: float, tau) -> np.ndarray | float:
    """Single-regime no-jump no-risk solution L*eta/(eta + L*tau).

    Analytic oracle for dY/dt = Y^2/eta with Y(T) = L, tau = T - t.
    """
    tau = np.asarray(tau, dtype=float)
    out = L * eta / (eta + L * tau)
    return float(out) if out.ndim == 0 else out


def closed_form_lower(c_check: float, L: float, tau) -> np.ndarray | float:
    """Comparison lower bound 1/((1 + 1/L) exp(c_check*tau) - 1).

    Solves dY/dt = c*Y^2 + c*Y backward from Y(T) = L and bounds every
    solution of the penalized system from below.  Written with expm1 so
    the tau -> 0 limit returns L without cancellation.
    """
    tau = np.asarray(tau, dtype=float)
    x = c_check * tau
    with np.errstate(over="ignore"):
        denom = np.expm1(x) + np.exp(x) / L
        out = np.where(np.isinf(denom), 0.0, 1.0 / denom)
    return float(out) if out.ndim == 0 else out


def closed_form_upper(eta_star: float, lambda_star: float, tau) -> np.ndarray | float:
    """Blow-up upper bound eta_star/tau + (lambda_star/3) * tau."""
    tau = np.asarray(tau, dtype=float)
    with np.errstate(divide="ignore"):
        out = eta_star / tau + (lambda_star / 3.0) * tau
    return float(out) if out.ndim == 0 else out


def closed_form_upper_path(
    eta_star: float,
    lambda_star: float,
    eps: float,
    tilde_c: float,
    T: float,
    t: float,
) -> float:
    """Exact solution of the linear comparison ODE truncated at T - eps.

    Equals (1/G_t) * (G_{T-eps} * tilde_c + int_t^{T-eps} G_s *
    (lambda_star + eta_star/(T-s)^2) ds) with G_t = ((T-t)/T)^2; the
    integral is evaluated in closed form.  As eps -> 0 this converges to
    :func:`closed_form_upper`.
    """
    if eps <= 0.0:
        raise DomainError("eps must be positive")
    if t > T - eps:
        raise DomainError(f"t = {t} exceeds T - eps = {T - eps}")
    tau = T - t
    numer = (
        eps * eps * tilde_c
        + lambda_star * (tau**3 - eps**3) / 3.0
        + eta_star * (tau - eps)
    )
    return numer / (tau * tau)


# ---------------------------------------------------------------------------
# Integrator
# ---------------------------------------------------------------------------


def _rk4(rhs, y, h, k1=None):
    if k1 is None:
        k1 = rhs(y)
    k2 = rhs(y + (0.5 * h) * k1)
    k3 = rhs(y + (0.5 * h) * k2)
    k4 = rhs(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def _advance(rhs, y, h, rtol, depth):
    """One accepted step of size h with a full-vs-halved error check."""
    k1 = rhs(y)
    y_full = _rk4(rhs, y, h, k1)
    y_half = _rk4(rhs, _rk4(rhs, y, 0.5 * h, k1), 0.5 * h)
    if np.all(np.isfinite(y_half)) and np.all(np.isfinite(y_full)):
        scale = np.maximum(np.maximum(np.abs(y), np.abs(y_half)), 1e-12)
        if np.max(np.abs(y_full - y_half) / scale) <= rtol:
            return y_half
    if depth <= 0:
        raise ToleranceFailure(
            f"step of size {h:.3e} missed rtol={rtol:g} after maximum bisection"
        )
    y_mid = _advance(rhs, y, 0.5 * h, rtol, depth - 1)
    return _advance(rhs, y_mid, 0.5 * h, rtol, depth - 1)


def _integrate_levels(
    model: MarketModel,
    levels: np.ndarray,
    grid: TimeGrid,
    rtol: float,
    max_depth: int,
) -> np.ndarray:
    """Backward sweep for all levels at once; returns (B, ell, n_nodes)."""
    nodes = grid.nodes
    n = len(nodes)
    out = np.empty((len(levels), model.ell, n))
    y = np.repeat(levels[:, None], model.ell, axis=1).astype(float)
    out[:, :, n - 1] = y
    for k in range(n - 1, 0, -1):
        t_hi = nodes[k]
        t_lo = nodes[k - 1]
        m = model.coefficients.interval_index(0.5 * (t_hi + t_lo))

        def rhs(state, _m=m):
            return drift_interval(model, _m, state)

        # dY/dt = -f, so stepping backward in t is a forward step of f.
        y = _advance(rhs, y, t_hi - t_lo, rtol, max_depth)
        out[:, :, k - 1] = y
    return out


# ---------------------------------------------------------------------------
# Solutions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TruncatedSolution:
    """Grid values of the penalized system for one level L."""

    L: float
    grid: TimeGrid
    Y: np.ndarray  # (ell, n_nodes)
    model: MarketModel

    @property
    def kind(self) -> str:
        return "truncated"

    @property
    def t_max(self) -> float:
        return self.grid.end

    def values_at(self, times) -> np.ndarray:
        """Linear interpolation of every regime row; shape (ell, len(times))."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        return np.vstack(
            [np.interp(times, self.grid.nodes, self.Y[i]) for i in range(len(self.Y))]
        )

    def value(self, t: float, regime: int) -> float:
        return float(np.interp(t, self.grid.nodes, self.Y[regime]))

    def envelope_gap(self) -> tuple[float, float]:
        """Worst signed slack (below lower, above upper) over all nodes."""
        tau = self.model.horizon - self.grid.nodes
        interior = tau > 0.0
        lower = closed_form_lower(self.model.c_check, self.L, tau[interior])
        upper = closed_form_upper(
            self.model.coefficients.eta_cap,
            self.model.coefficients.lambda_cap,
            tau[interior],
        )
        below = float(np.max(lower[None, :] - self.Y[:, interior], initial=0.0))
        above = float(np.max(self.Y[:, interior] - upper[None, :], initial=0.0))
        return below, above

    def to_csv(self, path) -> None:
        """Write t and the regime rows; leading line records L, c, size."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["L", repr(self.L), "c_check", repr(self.model.c_check), "nodes", self.grid.n_nodes]
            )
            writer.writerow(["t"] + [f"Y_{i + 1}" for i in range(len(self.Y))])
            for k, t in enumerate(self.grid.nodes):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in self.Y[:, k]])


@dataclass(frozen=True)
class LadderResult:
    """Solutions for an increasing sequence of penalization levels."""

    levels: tuple[float, ...]
    solutions: tuple[TruncatedSolution, ...]

    @property
    def model(self) -> MarketModel:
        return self.solutions[0].model

    @property
    def grid(self) -> TimeGrid:
        return self.solutions[0].grid

    def stacked(self) -> np.ndarray:
        """All solutions as one (levels, ell, n_nodes) array."""
        return np.stack([s.Y for s in self.solutions])

    def max_monotonicity_violation(self) -> float:
        """Largest drop between consecutive levels; 0 for a clean ladder."""
        if len(self.solutions) < 2:
            return 0.0
        stack = self.stacked()
        return float(np.max(-(np.diff(stack, axis=0)), initial=0.0))


def _validate_solution(sol: TruncatedSolution) -> None:
    terminal = sol.Y[:, -1]
    if not np.all(terminal == sol.L):
        raise ToleranceFailure("terminal node does not carry the level exactly")
    tol = envelope_tol(sol.L)
    if np.min(sol.Y) < -tol:
        raise ToleranceFailure(f"negative values beyond tolerance: min {np.min(sol.Y):.3e}")
    below, above = sol.envelope_gap()
    if below > tol or above > tol:
        raise ToleranceFailure(
            f"solution escapes its comparison envelope (below {below:.3e}, above {above:.3e})"
        )


def solve_truncated(
    model: MarketModel,
    L: float,
    grid: TimeGrid,
    rtol: float = DEFAULT_STEP_RTOL,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> TruncatedSolution:
    """Integrate the penalized system backward from Y(T) = L."""
    if L <= 0.0:
        raise ValueError("penalization level must be positive")
    _require_grid(model, grid)
    Y = _integrate_levels(model, np.array([float(L)]), grid, rtol, max_depth)[0]
    sol = TruncatedSolution(L=float(L), grid=grid, Y=Y, model=model)
    _validate_solution(sol)
    return sol


def solve_ladder(
    model: MarketModel,
    levels,
    grid: TimeGrid,
    rtol: float = DEFAULT_STEP_RTOL,
    max_depth: int = DEFAULT_MAX_DEPTH,
    mono_tol: float = 1e-9,
) -> LadderResult:
    """Solve all levels on one grid and verify the ladder is monotone.

    Levels must be strictly increasing and positive.  A drop beyond
    ``mono_tol`` anywhere signals a solver defect or a grid too coarse
    for the requested levels, and raises :class:`MonotonicityViolation`.
    """
    levels = np.asarray(levels, dtype=float)
    if levels.ndim != 1 or len(levels) == 0:
        raise ValueError("levels must be a nonempty sequence")
    if np.any(levels <= 0.0) or np.any(np.diff(levels) <= 0.0):
        raise ValueError("levels must be positive and strictly increasing")
    _require_grid(model, grid)
    stack = _integrate_levels(model, levels, grid, rtol, max_depth)
    solutions = []
    for b, L in enumerate(levels):
        sol = TruncatedSolution(L=float(L), grid=grid, Y=stack[b], model=model)
        _validate_solution(sol)
        solutions.append(sol)
    result = LadderResult(levels=tuple(float(L) for L in levels), solutions=tuple(solutions))
    worst = result.max_monotonicity_violation()
    if worst > mono_tol:
        raise MonotonicityViolation(
            f"ladder decreases by {worst:.3e} somewhere (tolerance {mono_tol:g})"
        )
    return result


def _require_grid(model: MarketModel, grid: TimeGrid) -> None:
    if grid.start != 0.0 or grid.end != model.horizon:
        raise ValueError("grid must span [0, T] for the backward solve")
    if not grid.contains(model.coefficients.breakpoints):
        raise ValueError("grid must contain every coefficient breakpoint")
