"""Singular solution built as the limit of the penalization ladder.

The terminal value of the constrained problem blows up at the horizon,
so no finite terminal condition exists; the solution is represented on
[0, T - eps_eval] as the extrapolated limit of an increasing ladder of
penalized solutions, together with the closed-form envelope

    1/(exp(c (T-t)) - 1)  <=  Y_i(t)  <=  eta_cap/(T-t) + (lambda_cap/3)(T-t)

that pins its behaviour up to the horizon.  Extrapolation fits
``Y_L = Y_inf - c/L`` per node over the top half of the ladder, the
correction structure the exact lower-bound family exhibits; when the
fit misbehaves the raw supremum is reported and flagged instead.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, OutOfGrid
from .model import MarketModel
from .truncated_solver import (
    LadderResult,
    TimeGrid,
    closed_form_lower,
    closed_form_upper,
)


@dataclass(frozen=True)
class BoundsEnvelope:
    """Closed-form sandwich evaluated on a grid strictly before T."""

    grid: TimeGrid
    lower: np.ndarray
    upper: np.ndarray
    c_check: float


def bounds_envelope(model: MarketModel, grid: TimeGrid) -> BoundsEnvelope:
    """Evaluate both envelope branches at every node of ``grid``.

    The limit form of the lower bound is regime independent, as is the
    upper bound; both diverge at the horizon, so the grid must stop
    strictly before it.
    """
    tau = model.horizon - grid.nodes
    if np.any(tau <= 0.0):
        raise DomainError("envelope grid must end strictly before the horizon")
    c = model.c_check
    with np.errstate(over="ignore"):
        ex = np.expm1(c * tau)
        lower = np.where(np.isinf(ex), 0.0, 1.0 / ex)
    upper = closed_form_upper(
        model.coefficients.eta_cap, model.coefficients.lambda_cap, tau
    )
    return BoundsEnvelope(grid=grid, lower=lower, upper=upper, c_check=c)


@dataclass(frozen=True)
class SingularSolution:
    """Extrapolated limit surface with its envelope and fit diagnostics.

    ``ladder_gap`` holds the per-node rms residual of the 1/L fit (max
    over regimes); ``fallback`` marks nodes where the fit was rejected
    and the ladder supremum reported instead.
    """

    grid: TimeGrid
    Y: np.ndarray  # (ell, n_nodes)
    ladder_gap: np.ndarray  # (n_nodes,)
    envelope: BoundsEnvelope
    model: MarketModel
    levels: tuple[float, ...]
    fallback: np.ndarray  # (n_nodes,) bool
    eps_eval: float

    @property
    def kind(self) -> str:
        return "singular"

    @property
    def t_max(self) -> float:
        return self.grid.end

    @property
    def L_max(self) -> float:
        return self.levels[-1]

    def values_at(self, times) -> np.ndarray:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        span = 1e-12 * max(1.0, self.t_max)
        if np.any(times < -span) or np.any(times > self.t_max + span):
            raise OutOfGrid(
                f"singular surface spans [0, {self.t_max}]; requested "
                f"[{times.min()}, {times.max()}]"
            )
        return np.vstack(
            [np.interp(times, self.grid.nodes, self.Y[i]) for i in range(len(self.Y))]
        )

    def value(self, t: float, regime: int) -> float:
        return float(self.values_at([t])[regime, 0])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["t"]
                + [f"Y_{i + 1}" for i in range(len(self.Y))]
                + ["lower", "upper", "ladder_gap"]
            )
            for k, t in enumerate(self.grid.nodes):
                writer.writerow(
                    [repr(float(t))]
                    + [repr(float(v)) for v in self.Y[:, k]]
                    + [
                        repr(float(self.envelope.lower[k])),
                        repr(float(self.envelope.upper[k])),
                        repr(float(self.ladder_gap[k])),
                    ]
                )


def extrapolate_singular(ladder: LadderResult, eps_eval: float) -> SingularSolution:
    """Limit of the ladder via a per-node least-squares 1/L fit.

    Requires at least three strictly increasing levels on one shared
    grid.  The fitted limit is clamped to dominate every ladder value
    (the limit construction is monotone from below); nodes whose fit
    residual exceeds ten times the top inter-level gap fall back to the
    raw supremum and are flagged.
    """
    if len(ladder.levels) < 3:
        raise ValueError("extrapolation needs at least three ladder levels")
    if eps_eval <= 0.0:
        raise ValueError("eps_eval must be positive")
    base_nodes = ladder.grid.nodes
    for sol in ladder.solutions:
        if sol.grid.nodes is not base_nodes and not np.array_equal(
            sol.grid.nodes, base_nodes
        ):
            raise ValueError("all ladder solutions must share one grid")
    model = ladder.model
    cut = model.horizon - eps_eval
    sub = ladder.grid.truncate(cut)
    n = sub.n_nodes
    stack = ladder.stacked()[:, :, :n]  # (B, ell, n)

    levels = np.asarray(ladder.levels)
    b = len(levels)
    start = b // 2
    x = 1.0 / levels[start:]
    design = np.column_stack([np.ones_like(x), -x])
    pinv = np.linalg.pinv(design)  # (2, P)
    data = stack[start:].reshape(len(x), -1)  # (P, ell*n)
    params = pinv @ data
    fitted = design @ params
    resid = np.sqrt(np.mean((fitted - data) ** 2, axis=0)).reshape(model.ell, n)
    y_fit = params[0].reshape(model.ell, n)

    sup = np.max(stack, axis=0)  # (ell, n)
    gap = stack[-1] - stack[-2]
    diverged = resid > 10.0 * np.maximum(gap, 1e-300)
    y_limit = np.where(diverged, sup, np.maximum(y_fit, sup))

    envelope = bounds_envelope(model, sub)
    return SingularSolution(
        grid=sub,
        Y=y_limit,
        ladder_gap=resid.max(axis=0),
        envelope=envelope,
        model=model,
        levels=ladder.levels,
        fallback=diverged.any(axis=0),
        eps_eval=float(eps_eval),
    )


@dataclass(frozen=True)
class SandwichReport:
    """Node-wise envelope containment check for a singular solution."""

    passed: bool
    ok: np.ndarray  # (ell, n_nodes) bool
    worst_below: float  # max of (lower - tol) - Y, signed
    worst_above: float  # max of Y - (upper + tol), signed
    n_violations: int
    c_check: float
    L_max: float

    def to_dict(self) -> dict:
        return {
            "passed": bool(self.passed),
            "n_violations": int(self.n_violations),
            "worst_below": float(self.worst_below),
            "worst_above": float(self.worst_above),
            "c_check": float(self.c_check),
            "L_max": float(self.L_max),
            "n_nodes": int(self.ok.shape[1]),
        }


def _ladder_deficiency(sol: SingularSolution) -> np.ndarray:
    """Exact gap between the limit lower bound and its top-level form.

    A ladder capped at L_max cannot certify more of the lower envelope
    than the level-L_max bound provides; the difference of the two
    closed forms is the honest slack near the horizon.
    """
    tau = sol.model.horizon - sol.grid.nodes
    lim = sol.envelope.lower
    at_top = closed_form_lower(sol.model.c_check, sol.L_max, tau)
    return np.maximum(lim - at_top, 0.0)


def verify_sandwich(sol: SingularSolution, atol: float = 1e-7) -> SandwichReport:
    """Check envelope containment node by node.

    The lower-side tolerance includes the finite-ladder deficiency (the
    limit bound minus the level-L_max bound), the upper side allows three
    fit residuals; on top of both sits a small scale-aware slack.
    """
    env = sol.envelope
    scale = atol * (1.0 + np.abs(sol.Y).max(axis=0))
    tol_lower = scale + _ladder_deficiency(sol)
    tol_upper = scale + 3.0 * sol.ladder_gap
    below = (env.lower - tol_lower)[None, :] - sol.Y
    above = sol.Y - (env.upper + tol_upper)[None, :]
    ok = (below <= 0.0) & (above <= 0.0)
    return SandwichReport(
        passed=bool(ok.all()),
        ok=ok,
        worst_below=float(below.max()),
        worst_above=float(above.max()),
        n_violations=int((~ok).sum()),
        c_check=env.c_check,
        L_max=sol.L_max,
    )


@dataclass(frozen=True)
class BlowupProfile:
    """Rescaled tail (T-t) * Y with its bracket, per tail node."""

    tau: np.ndarray
    scaled: np.ndarray  # (ell, n_tail): (T-t) * Y
    bracket_lo: np.ndarray
    bracket_hi: np.ndarray
    env_lo: np.ndarray  # (T-t) * limit lower envelope
    env_hi: np.ndarray  # (T-t) * upper envelope
    passed: bool
    empirical_limit: np.ndarray  # (ell,) scaled value at the innermost node

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            ell = self.scaled.shape[0]
            writer.writerow(
                ["tau"]
                + [f"tauY_{i + 1}" for i in range(ell)]
                + ["bracket_lo", "bracket_hi", "env_lo", "env_hi"]
            )
            for k in range(len(self.tau)):
                writer.writerow(
                    [repr(float(self.tau[k]))]
                    + [repr(float(v)) for v in self.scaled[:, k]]
                    + [
                        repr(float(self.bracket_lo[k])),
                        repr(float(self.bracket_hi[k])),
                        repr(float(self.env_lo[k])),
                        repr(float(self.env_hi[k])),
                    ]
                )


def blowup_profile(sol: SingularSolution, atol: float = 1e-7) -> BlowupProfile:
    """Divergence diagnostics on the geometric tail of the grid.

    Asserts (T-t) * Y within the envelope bracket at every tail node,
    with the lower edge taken at the top ladder level (what a finite
    ladder can certify; it converges to 1/c as the ladder grows) and the
    upper edge eta_cap + (lambda_cap/3)(T-t)^2.  The empirical limit at
    the innermost node is reported, not asserted.
    """
    model = sol.model
    tau = model.horizon - sol.grid.nodes
    sel = tau <= sol.grid.tail_span
    if sel.sum() < 4:
        sel = np.zeros_like(sel)
        sel[-min(32, len(sel)):] = True
    tau_tail = tau[sel]
    scaled = sol.Y[:, sel] * tau_tail[None, :]
    lo = tau_tail * closed_form_lower(model.c_check, sol.L_max, tau_tail)
    hi = (
        model.coefficients.eta_cap
        + (model.coefficients.lambda_cap / 3.0) * tau_tail**2
    )
    slack = atol * (1.0 + model.coefficients.eta_cap) + 3.0 * tau_tail * sol.ladder_gap[sel]
    ok = (scaled >= (lo - slack)[None, :]) & (scaled <= (hi + slack)[None, :])
    order = np.argsort(tau_tail)
    innermost = order[0]
    return BlowupProfile(
        tau=tau_tail,
        scaled=scaled,
        bracket_lo=lo,
        bracket_hi=hi,
        env_lo=tau_tail * sol.envelope.lower[sel],
        env_hi=tau_tail * sol.envelope.upper[sel],
        passed=bool(ok.all()),
        empirical_limit=scaled[:, innermost].copy(),
    )
