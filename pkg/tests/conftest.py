import numpy as np
import pytest

from regliq import build_model


def single_regime_config(eta=1.0, lam=0.0, marks=(), horizon=1.0, x0=1.0):
    return {
        "regimes": [[0.0]],
        "horizon": horizon,
        "x0": x0,
        "initial_regime": 0,
        "breakpoints": [0.0, horizon],
        "eta": [[eta]],
        "lambda": [[lam]],
        "marks": list(marks),
    }


def tight_family_config(horizon=1.0, x0=1.0):
    """eta = 1, lambda = 0, gamma = 0, one mark of weight 1: the model
    whose solution equals the comparison lower bound exactly (c = 1)."""
    return single_regime_config(
        marks=[{"label": "fill", "weight": 1.0, "gamma": [[0.0]]}],
        horizon=horizon,
        x0=x0,
    )


def two_regime_jump_config(x0=1.0):
    return {
        "regimes": [[-1.0, 1.0], [2.0, -2.0]],
        "horizon": 1.0,
        "x0": x0,
        "initial_regime": 0,
        "breakpoints": [0.0, 0.4, 1.0],
        "eta": [[1.0, 0.8], [1.5, 1.2]],
        "lambda": [[0.3, 0.1], [0.0, 0.5]],
        "marks": [
            {"label": "a", "weight": 0.8, "gamma": [[0.5, 0.2], [0.4, 0.1]]},
            {"label": "b", "weight": 0.4, "gamma": [[0.0, 0.3], [0.2, 0.2]]},
        ],
    }


def random_model_config(rng: np.random.Generator, max_regimes=4, max_marks=3):
    """Random problem within the coefficient boxes: bounded generator
    rates, eta in [0.3, 3], lambda in [0, 2], gamma in [0, 2]."""
    ell = int(rng.integers(1, max_regimes + 1))
    K = int(rng.integers(0, max_marks + 1))
    n_int = int(rng.integers(1, 4))
    q = rng.uniform(0.0, 2.0, size=(ell, ell))
    np.fill_diagonal(q, 0.0)
    for i in range(ell):
        q[i, i] = -q[i].sum()
    interior = np.sort(rng.uniform(0.1, 0.9, size=n_int - 1))
    breakpoints = np.concatenate([[0.0], interior, [1.0]])
    marks = [
        {
            "label": f"m{k}",
            "weight": float(rng.uniform(0.1, 2.0)),
            "gamma": rng.uniform(0.0, 2.0, size=(ell, n_int)).tolist(),
        }
        for k in range(K)
    ]
    return {
        "regimes": q.tolist(),
        "horizon": 1.0,
        "x0": float(rng.uniform(0.5, 2.0)),
        "initial_regime": int(rng.integers(0, ell)),
        "breakpoints": breakpoints.tolist(),
        "eta": rng.uniform(0.3, 3.0, size=(ell, n_int)).tolist(),
        "lambda": rng.uniform(0.0, 2.0, size=(ell, n_int)).tolist(),
        "marks": marks,
    }


@pytest.fixture
def single_regime_model():
    return build_model(single_regime_config())


@pytest.fixture
def tight_family_model():
    return build_model(tight_family_config())


@pytest.fixture
def two_regime_model():
    return build_model(two_regime_jump_config())
