import dataclasses
import math

import numpy as np
import pytest

from regliq import (
    build_model,
    estimate_value,
    extrapolate_singular,
    make_grid,
    martingale_check,
    penalized_monotone_check,
    policy_suboptimality,
    quadratic_scaling_check,
    scenario_rng,
    solve_ladder,
    solve_truncated,
)
from regliq.montecarlo import pairwise_sum
from regliq.truncated_solver import closed_form_single_regime
from conftest import (
    single_regime_config,
    tight_family_config,
    two_regime_jump_config,
)


@pytest.fixture(scope="module")
def jump_surfaces():
    model = build_model(two_regime_jump_config())
    grid = make_grid(1.0, 256, breakpoints=[0.0, 0.4, 1.0], refinement=1.35)
    ladder = solve_ladder(model, [float(2**k) for k in range(10)], grid)
    singular = extrapolate_singular(ladder, 1e-3)
    return model, ladder, singular


class TestRngAndSums:
    def test_scenario_rng_reproducible(self):
        a = scenario_rng(42, 7).standard_normal(5)
        b = scenario_rng(42, 7).standard_normal(5)
        c = scenario_rng(42, 8).standard_normal(5)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_pairwise_sum_matches_fsum(self):
        rng = np.random.default_rng(0)
        values = rng.uniform(-1.0, 1.0, size=1237)
        assert pairwise_sum(values) == pytest.approx(math.fsum(values), abs=1e-12)
        assert pairwise_sum(np.empty(0)) == 0.0


class TestEstimateValue:
    def test_deterministic_penalized_identity(self, single_regime_model):
        grid = make_grid(1.0, 2048)
        sol = solve_truncated(single_regime_model, 1.0, grid)
        report = estimate_value(single_regime_model, sol, n_paths=4, seed=1)
        # no randomness: the simulated cost is the value itself
        assert report.std_error == 0.0
        assert abs(report.estimate - 0.5) <= 1e-6
        assert report.passed
        assert report.prediction == pytest.approx(
            closed_form_single_regime(1.0, 1.0, 1.0), abs=1e-9
        )

    def test_single_path_rejected(self, single_regime_model):
        grid = make_grid(1.0, 64)
        sol = solve_truncated(single_regime_model, 1.0, grid)
        with pytest.raises(ValueError):
            estimate_value(single_regime_model, sol, n_paths=1, seed=1)

    def test_penalized_with_jumps(self, tight_family_model):
        grid = make_grid(1.0, 384)
        sol = solve_truncated(tight_family_model, 1.0, grid)
        report = estimate_value(tight_family_model, sol, n_paths=6000, seed=42)
        assert report.prediction == pytest.approx(1.0 / (2.0 * np.e - 1.0), abs=1e-8)
        assert abs(report.z_score) <= 3.0
        assert report.passed
        assert report.tail_bound == 0.0

    def test_singular_bracket(self, jump_surfaces):
        model, _, singular = jump_surfaces
        report = estimate_value(model, singular, n_paths=4000, seed=9)
        assert report.tail_bound > 0.0
        assert report.passed
        assert (
            report.estimate - 3.0 * report.std_error
            <= report.prediction
            <= report.estimate + report.tail_bound + 3.0 * report.std_error
        )

    def test_level_mismatch_rejected(self, single_regime_model):
        grid = make_grid(1.0, 64)
        sol = solve_truncated(single_regime_model, 1.0, grid)
        with pytest.raises(ValueError):
            estimate_value(single_regime_model, sol, L=2.0, n_paths=4, seed=0)

    def test_report_serialization(self, jump_surfaces):
        model, ladder, _ = jump_surfaces
        report = estimate_value(model, ladder.solutions[0], n_paths=64, seed=0)
        payload = report.to_dict()
        assert set(payload) == {
            "n_paths",
            "estimate",
            "std_error",
            "prediction",
            "z_score",
            "verdict",
            "tail_bound",
            "seed",
        }


class TestPolicySuboptimality:
    def test_identity_perturbation(self, jump_surfaces):
        model, _, singular = jump_surfaces
        report = policy_suboptimality(model, singular, 1.0, n_paths=64, seed=0)
        assert report.mean_diff == 0.0
        assert report.se_diff == 0.0

    def test_deterministic_perturbations(self, single_regime_model):
        grid = make_grid(1.0, 512)
        sol = solve_truncated(single_regime_model, 1.0, grid)
        for factor in (1.5, 0.5):
            report = policy_suboptimality(
                single_regime_model, sol, factor, n_paths=4, seed=0
            )
            assert report.mean_diff > 0.0
            assert report.significant
            assert report.nonnegative

    def test_random_perturbation_positive(self, jump_surfaces):
        model, _, singular = jump_surfaces
        report = policy_suboptimality(model, singular, 1.5, n_paths=2000, seed=5)
        assert report.significant

    def test_bad_perturbation(self, jump_surfaces):
        model, _, singular = jump_surfaces
        with pytest.raises(ValueError):
            policy_suboptimality(model, singular, 0.0, n_paths=16, seed=0)


class TestQuadraticScaling:
    def test_identity_scale(self, jump_surfaces):
        model, _, singular = jump_surfaces
        report = quadratic_scaling_check(model, singular, 1.0, n_paths=64, seed=0)
        assert report.max_rel_gap == 0.0

    def test_double_and_tenth(self, jump_surfaces):
        model, _, singular = jump_surfaces
        for c in (2.0, 0.1):
            report = quadratic_scaling_check(
                model, singular, c, n_paths=400, seed=3
            )
            assert report.passed, report.max_rel_gap


class TestPenalizedMonotone:
    def test_deterministic_family(self, single_regime_model):
        grid = make_grid(1.0, 256)
        ladder = solve_ladder(single_regime_model, [1.0, 2.0, 4.0], grid)
        report = penalized_monotone_check(
            single_regime_model, ladder, n_paths=8, seed=0
        )
        assert report.passed
        # closed form: V^L = L/(1+L) strictly increasing in L
        expected = [L / (1.0 + L) for L in (1.0, 2.0, 4.0)]
        assert np.allclose(report.means, expected, atol=1e-5)
        assert report.limit_prediction is not None
        two_levels = solve_ladder(single_regime_model, [1.0, 2.0], grid)
        report2 = penalized_monotone_check(
            single_regime_model, two_levels, n_paths=8, seed=0
        )
        assert report2.limit_prediction is None  # extrapolation needs 3 levels
        assert report2.passed

    def test_single_level_vacuous(self, single_regime_model):
        grid = make_grid(1.0, 64)
        ladder = solve_ladder(single_regime_model, [2.0], grid)
        report = penalized_monotone_check(
            single_regime_model, ladder, n_paths=8, seed=0
        )
        assert report.passed

    def test_corrupted_ladder_fails(self, tight_family_model):
        grid = make_grid(1.0, 128)
        ladder = solve_ladder(tight_family_model, [1.0, 4.0, 16.0], grid)
        # swap the surfaces so the "higher" level carries the lower values
        sols = list(ladder.solutions)
        s0, s2 = sols[0], sols[2]
        sols[0] = dataclasses.replace(s0, Y=s2.Y)
        sols[2] = dataclasses.replace(s2, Y=s0.Y)
        corrupted = dataclasses.replace(ladder, solutions=tuple(sols))
        report = penalized_monotone_check(
            tight_family_model, corrupted, n_paths=600, seed=0
        )
        assert not report.passed

    def test_jump_model(self, jump_surfaces):
        model, ladder, _ = jump_surfaces
        report = penalized_monotone_check(model, ladder, n_paths=800, seed=2)
        assert report.passed


class TestMartingale:
    def test_two_regime(self, jump_surfaces):
        model, _, singular = jump_surfaces
        report = martingale_check(model, singular, n_paths=3000, seed=11)
        assert len(report.checkpoints) == 5
        assert report.passed

    def test_penalized_surface(self, tight_family_model):
        grid = make_grid(1.0, 256)
        sol = solve_truncated(tight_family_model, 2.0, grid)
        report = martingale_check(tight_family_model, sol, n_paths=3000, seed=4)
        assert report.passed
