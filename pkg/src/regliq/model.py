"""Problem data: regimes, jump measure, piecewise-constant coefficients.

A :class:`MarketModel` bundles everything the solvers and the simulator
need: the regime chain generator, the finite jump (fill) measure of the
passive venue, the per-regime impact/risk/adverse-selection coefficients
on a common breakpoint grid, the horizon and the initial state.  Models
are immutable after construction and safe to share between threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AssumptionViolated,
    DimensionMismatch,
    NegativeOffDiagonal,
    OutOfHorizon,
    RowSumNonzero,
    SchemaError,
)

ROW_SUM_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class RegimeGenerator:
    """Transition-rate matrix of the regime chain.

    Off-diagonal entries are nonnegative rates, each row sums to zero
    (so diagonal entries are nonpositive).
    """

    q: np.ndarray

    @property
    def ell(self) -> int:
        return self.q.shape[0]

    def rates_from(self, i: int) -> tuple[float, np.ndarray]:
        """Total exit rate from state ``i`` and the jump distribution."""
        rate = -self.q[i, i]
        if rate <= 0.0:
            return 0.0, np.zeros(self.ell)
        probs = self.q[i].copy()
        probs[i] = 0.0
        return rate, probs / rate


def validate_generator(raw_matrix) -> RegimeGenerator:
    """Validate a raw rate matrix and snap row sums to exactly zero.

    Raises :class:`NegativeOffDiagonal` if any off-diagonal rate is
    negative and :class:`RowSumNonzero` if a row sum is farther than
    ``1e-12`` from zero.  Row sums within the tolerance are absorbed into
    the diagonal, which makes the operation idempotent.
    """
    q = np.array(raw_matrix, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise DimensionMismatch(f"generator must be square, got shape {q.shape}")
    ell = q.shape[0]
    off = q.copy()
    np.fill_diagonal(off, 0.0)
    if np.any(off < 0.0):
        i, j = np.argwhere(off < 0.0)[0]
        raise NegativeOffDiagonal(f"q[{i}][{j}] = {q[i, j]} < 0")
    sums = q.sum(axis=1)
    if np.any(np.abs(sums) > ROW_SUM_TOL):
        i = int(np.argmax(np.abs(sums)))
        raise RowSumNonzero(f"row {i} sums to {sums[i]:.3e}")
    for i in range(ell):
        q[i, i] = -(off[i].sum())
    return RegimeGenerator(q=_frozen(q))


@dataclass(frozen=True)
class MarkMeasure:
    """Finite discrete intensity measure of the passive-fill process.

    ``weights[k]`` is the Poisson intensity mass carried by mark ``k``;
    the total mass is the overall fill rate.  ``K = 0`` models a market
    without a passive venue.
    """

    marks: tuple[str, ...]
    weights: np.ndarray

    @property
    def K(self) -> int:
        return len(self.marks)

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum()) if self.K else 0.0

    def __post_init__(self):
        if self.K and np.any(self.weights <= 0.0):
            raise SchemaError("all mark weights must be positive")
        if len(self.weights) != self.K:
            raise DimensionMismatch("weights length differs from mark count")


@dataclass(frozen=True)
class CoefficientSet:
    """Piecewise-constant coefficients on a shared breakpoint grid.

    Shapes: ``eta`` and ``lam`` are (regimes, intervals), ``gamma`` is
    (regimes, intervals, marks).  The floor/cap constants box the data:
    ``eta_floor <= eta <= eta_cap``, ``lam <= lambda_cap``,
    ``gamma <= gamma_cap`` everywhere.
    """

    breakpoints: np.ndarray
    eta: np.ndarray
    lam: np.ndarray
    gamma: np.ndarray
    eta_floor: float
    eta_cap: float
    lambda_cap: float
    gamma_cap: float

    @property
    def n_intervals(self) -> int:
        return len(self.breakpoints) - 1

    def box_ok(self) -> bool:
        """Full scan of the assumption boxes, exactly as stored."""
        return bool(
            np.all(self.eta >= self.eta_floor)
            and np.all(self.eta <= self.eta_cap)
            and np.all(self.lam <= self.lambda_cap)
            and np.all(self.lam >= 0.0)
            and (self.gamma.size == 0 or np.all(self.gamma <= self.gamma_cap))
            and (self.gamma.size == 0 or np.all(self.gamma >= 0.0))
        )

    def interval_index(self, t: float) -> int:
        """Index of the interval containing ``t``, right-continuous.

        Uses the convention [t_m, t_{m+1}); the horizon endpoint maps to
        the last interval.
        """
        idx = int(np.searchsorted(self.breakpoints, t, side="right")) - 1
        return min(max(idx, 0), self.n_intervals - 1)


@dataclass(frozen=True)
class MarketModel:
    """Fully validated problem instance."""

    generator: RegimeGenerator
    measure: MarkMeasure
    coefficients: CoefficientSet
    horizon: float
    initial_regime: int
    initial_position: float
    _c_check: float = field(init=False, default=0.0)

    def __post_init__(self):
        c = max(1.0 / self.coefficients.eta_floor, self.measure.total_mass)
        object.__setattr__(self, "_c_check", c)

    @property
    def ell(self) -> int:
        return self.generator.ell

    @property
    def K(self) -> int:
        return self.measure.K

    @property
    def c_check(self) -> float:
        """Smallest admissible rate constant of the comparison lower bound.

        Equals ``max(1/eta_floor, total fill intensity)``.
        """
        return self._c_check


def coefficient_at(model: MarketModel, regime: int, t: float):
    """Right-continuous piecewise-constant lookup at time ``t``.

    Returns ``(eta, lam, gamma_row)`` for the given regime.  The horizon
    endpoint ``t == T`` returns the last interval's values.
    """
    if t < 0.0 or t > model.horizon:
        raise OutOfHorizon(f"t = {t} outside [0, {model.horizon}]")
    if not 0 <= regime < model.ell:
        raise DimensionMismatch(f"regime {regime} not in [0, {model.ell})")
    c = model.coefficients
    m = c.interval_index(t)
    return float(c.eta[regime, m]), float(c.lam[regime, m]), c.gamma[regime, m]


def _require(config: dict, key: str):
    if key not in config:
        raise SchemaError(f"config missing required key '{key}'")
    return config[key]


def _as_float(config: dict, key: str) -> float:
    value = _require(config, key)
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise SchemaError(f"'{key}' must be a number, got {type(value).__name__}")
    return float(value)


def build_model(config: dict) -> MarketModel:
    """Build and validate a :class:`MarketModel` from a config document.

    Expected top-level keys (all numbers IEEE doubles):

    - ``regimes``: generator matrix rows (list of lists of rates).
    - ``horizon``: positive horizon T.
    - ``x0``: positive initial position.
    - ``initial_regime``: 0-based regime index.
    - ``breakpoints``: increasing grid ``0 = t_0 < ... < t_M = T``.
    - ``eta``, ``lambda``: regime-major arrays of per-interval values.
    - ``marks``: list of ``{"label", "weight", "gamma"}`` where ``gamma``
      is a regime-major array of per-interval values.

    Optional keys ``eta_floor``, ``eta_cap``, ``lambda_cap``,
    ``gamma_cap`` override the values computed from the data; supplied
    bounds must dominate the computed ones.
    """
    if not isinstance(config, dict):
        raise SchemaError("config must be a JSON object")
    generator = validate_generator(_require(config, "regimes"))
    ell = generator.ell

    horizon = _as_float(config, "horizon")
    if horizon <= 0.0:
        raise SchemaError(f"horizon must be positive, got {horizon}")
    x0 = _as_float(config, "x0")
    if x0 <= 0.0:
        raise SchemaError(f"x0 must be positive, got {x0}")
    i0 = _require(config, "initial_regime")
    if not isinstance(i0, int) or isinstance(i0, bool) or not 0 <= i0 < ell:
        raise SchemaError(f"initial_regime must be an integer in [0, {ell})")

    breakpoints = np.array(_require(config, "breakpoints"), dtype=float)
    if breakpoints.ndim != 1 or len(breakpoints) < 2:
        raise SchemaError("breakpoints must be a list of at least two times")
    if breakpoints[0] != 0.0 or abs(breakpoints[-1] - horizon) > 1e-12 * max(1.0, horizon):
        raise SchemaError("breakpoints must start at 0 and end at the horizon")
    if np.any(np.diff(breakpoints) <= 0.0):
        raise SchemaError("breakpoints must be strictly increasing")
    breakpoints[-1] = horizon
    n_int = len(breakpoints) - 1

    eta = np.array(_require(config, "eta"), dtype=float)
    lam = np.array(_require(config, "lambda"), dtype=float)
    for name, arr in (("eta", eta), ("lambda", lam)):
        if arr.shape != (ell, n_int):
            raise DimensionMismatch(
                f"'{name}' must have shape ({ell}, {n_int}), got {arr.shape}"
            )

    marks_cfg = _require(config, "marks")
    if not isinstance(marks_cfg, list):
        raise SchemaError("'marks' must be a list")
    labels: list[str] = []
    weights: list[float] = []
    gammas: list[np.ndarray] = []
    for k, entry in enumerate(marks_cfg):
        if not isinstance(entry, dict):
            raise SchemaError(f"mark {k} must be an object")
        labels.append(str(_require(entry, "label")))
        weights.append(float(_require(entry, "weight")))
        g = np.array(_require(entry, "gamma"), dtype=float)
        if g.shape != (ell, n_int):
            raise DimensionMismatch(
                f"mark {k} gamma must have shape ({ell}, {n_int}), got {g.shape}"
            )
        gammas.append(g)
    K = len(labels)
    measure = MarkMeasure(marks=tuple(labels), weights=_frozen(np.array(weights)))
    gamma = (
        np.stack(gammas, axis=-1) if K else np.zeros((ell, n_int, 0))
    )  # (ell, intervals, K)

    if np.any(eta <= 0.0):
        i, m = np.argwhere(eta <= 0.0)[0]
        raise AssumptionViolated(f"eta[{i}][{m}] = {eta[i, m]} must be positive")
    if np.any(lam < 0.0):
        raise AssumptionViolated("lambda values must be nonnegative")
    if K and np.any(gamma < 0.0):
        raise AssumptionViolated("gamma values must be nonnegative")

    eta_floor = float(eta.min())
    eta_cap = float(eta.max())
    lambda_cap = float(lam.max())
    gamma_cap = float(gamma.max()) if gamma.size else 0.0
    if "eta_floor" in config:
        supplied = _as_float(config, "eta_floor")
        if supplied <= 0.0 or supplied > eta_floor:
            raise AssumptionViolated(
                f"supplied eta_floor {supplied} must be in (0, {eta_floor}]"
            )
        eta_floor = supplied
    for key, computed in (
        ("eta_cap", eta_cap),
        ("lambda_cap", lambda_cap),
        ("gamma_cap", gamma_cap),
    ):
        if key in config:
            supplied = _as_float(config, key)
            if supplied < computed:
                raise AssumptionViolated(
                    f"supplied {key} {supplied} is below the data maximum {computed}"
                )
            if key == "eta_cap":
                eta_cap = supplied
            elif key == "lambda_cap":
                lambda_cap = supplied
            else:
                gamma_cap = supplied

    coefficients = CoefficientSet(
        breakpoints=_frozen(breakpoints),
        eta=_frozen(eta),
        lam=_frozen(lam),
        gamma=_frozen(gamma),
        eta_floor=eta_floor,
        eta_cap=eta_cap,
        lambda_cap=lambda_cap,
        gamma_cap=gamma_cap,
    )
    return MarketModel(
        generator=generator,
        measure=measure,
        coefficients=coefficients,
        horizon=horizon,
        initial_regime=i0,
        initial_position=x0,
    )


def load_model(path) -> MarketModel:
    """Read a JSON config file and build the model."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            config = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"config is not valid JSON: {exc}") from exc
    return build_model(config)
