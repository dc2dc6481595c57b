"""Batch Monte Carlo estimation and statistical policy verification.

Every scenario owns a counter-based random stream keyed by (master
seed, scenario index), so batches reproduce bit-identically for any
worker count; accumulation uses pairwise (tree) summation for the same
reason.  Comparative checks (suboptimality, scaling, ladder
monotonicity) pair scenarios through common random numbers: the same
regime path and fill events are replayed under every policy variant.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .model import MarketModel
from .simulate import (
    FillEvents,
    RegimePath,
    evolve_state,
    penalized_cost,
    sample_fills,
    sample_regime_path,
)
from .truncated_solver import LadderResult, TimeGrid, closed_form_upper


def scenario_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for one scenario: key = (master seed, index)."""
    key = np.array([np.uint64(seed % 2**64), np.uint64(index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def pairwise_sum(values: np.ndarray) -> float:
    """Tree summation; independent of chunking or thread count."""
    a = np.asarray(values, dtype=float).ravel().copy()
    n = len(a)
    if n == 0:
        return 0.0
    while n > 1:
        half = n // 2
        a[:half] += a[half : 2 * half]
        if n % 2:
            a[half] = a[n - 1]
            n = half + 1
        else:
            n = half
    return float(a[0])


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    n = len(values)
    mean = pairwise_sum(values) / n
    if n < 2:
        return mean, 0.0
    var = pairwise_sum((values - mean) ** 2) / (n - 1)
    return mean, float(np.sqrt(var / n))


def draw_scenario(
    model: MarketModel, seed: int, index: int
) -> tuple[RegimePath, FillEvents]:
    """Sample one scenario's randomness (regime path first, then fills)."""
    rng = scenario_rng(seed, index)
    regime = sample_regime_path(
        model.generator, model.initial_regime, model.horizon, rng
    )
    fills = sample_fills(model.measure, model.horizon, rng)
    return regime, fills


def _map_scenarios(fn, n_paths: int, threads: int) -> list:
    if threads <= 1:
        return [fn(i) for i in range(n_paths)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n_paths)))


def _resolve_grid(sol, grid: TimeGrid | None) -> TimeGrid:
    if grid is not None:
        return grid
    if hasattr(sol, "grid"):
        return sol.grid
    raise ValueError("an explicit simulation grid is required for this surface")


def _resolve_mode(sol, L: float | None) -> tuple[str, float | None]:
    level = getattr(sol, "L", None)
    if sol.kind == "truncated":
        if L is None:
            L = level
        if L is None:
            raise ValueError("penalized mode needs a penalization level")
        if level is not None and L != level:
            raise ValueError(f"level {L} does not match the surface level {level}")
        return "penalized", float(L)
    if L is not None:
        raise ValueError("singular mode takes no penalization level")
    return "singular", None


@dataclass(frozen=True)
class MCReport:
    """Monte Carlo estimate against the value predicted by the surface."""

    n_paths: int
    estimate: float
    std_error: float
    prediction: float
    z_score: float
    verdict: str
    tail_bound: float
    seed: int

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"

    def to_dict(self) -> dict:
        return {
            "n_paths": self.n_paths,
            "estimate": self.estimate,
            "std_error": self.std_error,
            "prediction": self.prediction,
            "z_score": self.z_score,
            "verdict": self.verdict,
            "tail_bound": self.tail_bound,
            "seed": self.seed,
        }


def estimate_value(
    model: MarketModel,
    sol,
    L: float | None = None,
    n_paths: int = 100_000,
    seed: int = 0,
    grid: TimeGrid | None = None,
    threads: int = 1,
    xi_scale: float = 1.0,
) -> MCReport:
    """Estimate the cost of the feedback policy and test the value identity.

    Penalized mode averages running cost plus L X_T^2 and expects the
    surface value Y(0) x0^2 within three standard errors.  Singular mode
    simulates to the surface's truncated horizon, reports the analytic
    bound on the remaining tail cost separately, and passes when the
    prediction lies between estimate - 3 SE and estimate + tail + 3 SE.
    """
    if n_paths < 2:
        raise ValueError("n_paths must be at least 2 for a standard error")
    mode, level = _resolve_mode(sol, L)
    grid = _resolve_grid(sol, grid)
    x0 = model.initial_position
    t_end = grid.end
    eps = model.horizon - t_end
    tail_factor = (
        closed_form_upper(
            model.coefficients.eta_cap, model.coefficients.lambda_cap, eps
        )
        if mode == "singular" and eps > 0.0
        else 0.0
    )

    def run(i: int) -> tuple[float, float]:
        regime, fills = draw_scenario(model, seed, i)
        path = evolve_state(model, sol, regime, fills, grid, xi_scale=xi_scale)
        if mode == "penalized":
            return penalized_cost(path, level), 0.0
        x_end = path.terminal_position
        return path.running_cost, tail_factor * x_end * x_end

    results = _map_scenarios(run, n_paths, threads)
    costs = np.array([r[0] for r in results])
    tails = np.array([r[1] for r in results])
    estimate, se = _mean_se(costs)
    tail_bound = pairwise_sum(tails) / n_paths
    prediction = sol.value(0.0, model.initial_regime) * x0 * x0

    diff = estimate - prediction
    if se > 0.0:
        z = diff / se
    else:
        # Deterministic dynamics: all paths coincide and the only gap is
        # quadrature bias, second order in the partition spacing.
        z = 0.0 if abs(diff) <= 1e-6 * (1.0 + abs(prediction)) else float("inf") * np.sign(diff)
    if mode == "penalized":
        ok = abs(z) <= 3.0
    else:
        ok = (estimate - 3.0 * se <= prediction) and (
            prediction <= estimate + tail_bound + 3.0 * se
        )
    return MCReport(
        n_paths=n_paths,
        estimate=estimate,
        std_error=se,
        prediction=prediction,
        z_score=float(z),
        verdict="PASS" if ok else "FAIL",
        tail_bound=tail_bound,
        seed=seed,
    )


@dataclass(frozen=True)
class PolicyComparison:
    """Paired cost difference of a perturbed policy against the feedback."""

    perturbation: float
    mean_diff: float
    se_diff: float
    n_paths: int

    @property
    def significant(self) -> bool:
        """Perturbed policy measurably worse at three standard errors."""
        if self.se_diff == 0.0:
            return self.mean_diff > 0.0
        return self.mean_diff >= 3.0 * self.se_diff

    @property
    def nonnegative(self) -> bool:
        """Mean difference consistent with optimality of the feedback."""
        return self.mean_diff >= -3.0 * self.se_diff

    def to_dict(self) -> dict:
        return {
            "perturbation": self.perturbation,
            "mean_diff": self.mean_diff,
            "se_diff": self.se_diff,
            "n_paths": self.n_paths,
            "significant": self.significant,
            "nonnegative": self.nonnegative,
        }


def _total_cost(model: MarketModel, sol, path, mode: str, level: float | None) -> float:
    if mode == "penalized":
        return penalized_cost(path, level)
    # Complete the truncated horizon with the surface's own cost-to-go.
    t_end = path.times[-1]
    y_end = sol.value(t_end, int(path.regimes[-1]))
    return path.running_cost + y_end * path.terminal_position**2


def policy_suboptimality(
    model: MarketModel,
    sol,
    perturbation: float,
    n_paths: int = 10_000,
    seed: int = 0,
    grid: TimeGrid | None = None,
    threads: int = 1,
) -> PolicyComparison:
    """Replay scenarios under xi scaled by ``perturbation`` (same fills,
    same passive orders) and report the paired cost difference."""
    if perturbation <= 0.0:
        raise ValueError("perturbation must be positive")
    mode, level = _resolve_mode(sol, None)
    grid = _resolve_grid(sol, grid)

    def run(i: int) -> float:
        regime, fills = draw_scenario(model, seed, i)
        base = evolve_state(model, sol, regime, fills, grid)
        pert = evolve_state(model, sol, regime, fills, grid, xi_scale=perturbation)
        return _total_cost(model, sol, pert, mode, level) - _total_cost(
            model, sol, base, mode, level
        )

    diffs = np.array(_map_scenarios(run, n_paths, threads))
    mean, se = _mean_se(diffs)
    return PolicyComparison(
        perturbation=float(perturbation), mean_diff=mean, se_diff=se, n_paths=n_paths
    )


@dataclass(frozen=True)
class ScalingReport:
    """Pathwise check of the quadratic value form under state scaling."""

    scale: float
    max_rel_gap: float
    n_paths: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_gap <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "max_rel_gap": self.max_rel_gap,
            "n_paths": self.n_paths,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def quadratic_scaling_check(
    model: MarketModel,
    sol,
    scale: float,
    n_paths: int = 1_000,
    seed: int = 0,
    grid: TimeGrid | None = None,
    threads: int = 1,
    tolerance: float = 1e-10,
) -> ScalingReport:
    """With common randomness, cost(c x0) must equal c^2 cost(x0) per path
    (the feedback is linear in the state, so the identity is exact)."""
    if scale <= 0.0:
        raise ValueError("scale must be positive")
    mode, level = _resolve_mode(sol, None)
    grid = _resolve_grid(sol, grid)
    x0 = model.initial_position

    def run(i: int) -> float:
        regime, fills = draw_scenario(model, seed, i)
        base = evolve_state(model, sol, regime, fills, grid, x0=x0)
        scaled = evolve_state(model, sol, regime, fills, grid, x0=scale * x0)
        c_base = _total_cost(model, sol, base, mode, level)
        c_scaled = _total_cost(model, sol, scaled, mode, level)
        target = scale * scale * c_base
        return abs(c_scaled - target) / max(abs(target), 1e-300)

    gaps = np.array(_map_scenarios(run, n_paths, threads))
    return ScalingReport(
        scale=float(scale),
        max_rel_gap=float(gaps.max()),
        n_paths=n_paths,
        tolerance=tolerance,
    )


@dataclass(frozen=True)
class MonotoneReport:
    """Penalized values estimated along a ladder, with the limit cap."""

    levels: tuple[float, ...]
    means: tuple[float, ...]
    std_errors: tuple[float, ...]
    min_step_z: float
    limit_prediction: float | None
    cap_ok: bool

    @property
    def passed(self) -> bool:
        return self.min_step_z >= -3.0 and self.cap_ok

    def to_dict(self) -> dict:
        return {
            "levels": list(self.levels),
            "means": list(self.means),
            "std_errors": list(self.std_errors),
            "min_step_z": self.min_step_z,
            "limit_prediction": self.limit_prediction,
            "cap_ok": self.cap_ok,
            "passed": self.passed,
        }


def penalized_monotone_check(
    model: MarketModel,
    ladder: LadderResult,
    x0: float | None = None,
    n_paths: int = 2_000,
    seed: int = 0,
    threads: int = 1,
    limit_prediction: float | None = None,
) -> MonotoneReport:
    """Estimate the penalized value for every ladder level with common
    random numbers; the estimates must be nondecreasing in L within
    three standard errors of each paired step, and must stay below the
    limit prediction (when one is supplied or extrapolable)."""
    if x0 is None:
        x0 = model.initial_position
    grid = ladder.grid
    sols = ladder.solutions
    if limit_prediction is None and len(ladder.levels) >= 3:
        from .singular_solver import extrapolate_singular

        eps = 1e-4 * model.horizon
        sing = extrapolate_singular(ladder, eps)
        limit_prediction = sing.value(0.0, model.initial_regime) * x0 * x0

    def run(i: int) -> np.ndarray:
        regime, fills = draw_scenario(model, seed, i)
        out = np.empty(len(sols))
        for j, sol in enumerate(sols):
            path = evolve_state(model, sol, regime, fills, grid, x0=x0)
            out[j] = penalized_cost(path, sol.L)
        return out

    rows = np.array(_map_scenarios(run, n_paths, threads))  # (n, levels)
    means = []
    ses = []
    for j in range(rows.shape[1]):
        m, s = _mean_se(rows[:, j])
        means.append(m)
        ses.append(s)
    min_step_z = float("inf")
    for j in range(rows.shape[1] - 1):
        d_mean, d_se = _mean_se(rows[:, j + 1] - rows[:, j])
        z = d_mean / d_se if d_se > 0.0 else (0.0 if d_mean == 0.0 else np.sign(d_mean) * float("inf"))
        min_step_z = min(min_step_z, float(z))
    if rows.shape[1] < 2:
        min_step_z = 0.0
    cap_ok = True
    if limit_prediction is not None:
        cap_ok = all(
            m <= limit_prediction + 3.0 * s for m, s in zip(means, ses)
        )
    return MonotoneReport(
        levels=ladder.levels,
        means=tuple(means),
        std_errors=tuple(ses),
        min_step_z=min_step_z,
        limit_prediction=limit_prediction,
        cap_ok=cap_ok,
    )


@dataclass(frozen=True)
class MartingaleReport:
    """Constancy of E[Y X^2 + accumulated cost] along the horizon."""

    checkpoints: tuple[float, ...]
    means: tuple[float, ...]
    std_errors: tuple[float, ...]
    prediction: float
    max_abs_z: float

    @property
    def passed(self) -> bool:
        return self.max_abs_z <= 3.0

    def to_dict(self) -> dict:
        return {
            "checkpoints": list(self.checkpoints),
            "means": list(self.means),
            "std_errors": list(self.std_errors),
            "prediction": self.prediction,
            "max_abs_z": self.max_abs_z,
            "passed": self.passed,
        }


def martingale_check(
    model: MarketModel,
    sol,
    n_paths: int = 10_000,
    seed: int = 0,
    grid: TimeGrid | None = None,
    threads: int = 1,
    n_checkpoints: int = 5,
) -> MartingaleReport:
    """The value process Y X^2 plus accumulated cost has constant mean;
    test it against Y(0) x0^2 at evenly spaced grid checkpoints."""
    grid = _resolve_grid(sol, grid)
    nodes = grid.nodes
    targets = grid.end * np.arange(1, n_checkpoints + 1) / n_checkpoints
    snap = np.unique(
        nodes[np.clip(np.searchsorted(nodes, targets), 0, len(nodes) - 1)]
    )
    x0 = model.initial_position
    prediction = sol.value(0.0, model.initial_regime) * x0 * x0

    def run(i: int) -> np.ndarray:
        regime, fills = draw_scenario(model, seed, i)
        path = evolve_state(model, sol, regime, fills, grid)
        out = np.empty(len(snap))
        for j, t in enumerate(snap):
            x, cost, r = path.at(float(t))
            out[j] = sol.value(float(t), r) * x * x + cost
        return out

    rows = np.array(_map_scenarios(run, n_paths, threads))
    means = []
    ses = []
    zs = []
    for j in range(rows.shape[1]):
        m, s = _mean_se(rows[:, j])
        means.append(m)
        ses.append(s)
        if s > 0.0:
            zs.append(abs(m - prediction) / s)
        else:
            zs.append(0.0 if abs(m - prediction) <= 1e-9 * (1.0 + abs(prediction)) else float("inf"))
    return MartingaleReport(
        checkpoints=tuple(float(t) for t in snap),
        means=tuple(means),
        std_errors=tuple(ses),
        prediction=prediction,
        max_abs_z=float(max(zs)),
    )
