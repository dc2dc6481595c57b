import dataclasses

import numpy as np
import pytest

from regliq import (
    DomainError,
    blowup_profile,
    bounds_envelope,
    build_model,
    closed_form_upper,
    extrapolate_singular,
    make_grid,
    solve_ladder,
    verify_sandwich,
)
from regliq.singular_solver import BoundsEnvelope
from conftest import single_regime_config, tight_family_config, two_regime_jump_config

LEVELS = tuple(float(2**k) for k in range(17))


def nodes_near(sing, taus):
    """Indices of the grid nodes closest to the requested T - t values."""
    times = sing.model.horizon - np.asarray(taus)
    idx = np.clip(np.searchsorted(sing.grid.nodes, times), 0, sing.grid.n_nodes - 1)
    return idx


def _ladder(config, steps=384, levels=LEVELS):
    model = build_model(config)
    grid = make_grid(
        model.horizon,
        steps,
        breakpoints=model.coefficients.breakpoints,
        refinement=1.35,
    )
    return model, solve_ladder(model, levels, grid)


@pytest.fixture(scope="module")
def tight_ladder():
    return _ladder(tight_family_config())


@pytest.fixture(scope="module")
def nojump_ladder():
    return _ladder(single_regime_config())


class TestBoundsEnvelope:
    def test_tight_family_values(self, tight_ladder):
        model, _ = tight_ladder
        grid = make_grid(1.0, 8).truncate(0.5)
        env = bounds_envelope(model, grid)
        # at tau = 1 (t = 0): lower 1/(e-1), upper 1/1 + 0
        assert env.c_check == 1.0
        assert env.lower[0] == pytest.approx(1.0 / (np.e - 1.0))
        assert env.upper[0] == pytest.approx(1.0)

    def test_scaled_upper_limit(self):
        model = build_model(single_regime_config())
        tau = 1e-6
        grid = make_grid(1.0, 4, extra=[1.0 - tau]).truncate(1.0 - tau)
        env = bounds_envelope(model, grid)
        assert abs(tau * env.upper[-1] - 1.0) <= 1e-3

    def test_zero_lambda_cap(self):
        model = build_model(single_regime_config())
        grid = make_grid(1.0, 16).truncate(0.9)
        env = bounds_envelope(model, grid)
        tau = 1.0 - grid.truncate(0.9).nodes
        assert np.array_equal(env.upper, 1.0 / tau)

    def test_ordering_strict(self, two_regime_model):
        grid = make_grid(1.0, 64, breakpoints=[0.0, 0.4, 1.0]).truncate(0.999)
        env = bounds_envelope(two_regime_model, grid)
        assert np.all(env.lower < env.upper)

    def test_rejects_horizon_node(self, two_regime_model):
        grid = make_grid(1.0, 16, breakpoints=[0.0, 0.4, 1.0])
        with pytest.raises(DomainError):
            bounds_envelope(two_regime_model, grid)


class TestExtrapolation:
    def test_nojump_limit(self, nojump_ladder):
        _, ladder = nojump_ladder
        sing = extrapolate_singular(ladder, 1e-3)
        idx = nodes_near(sing, np.linspace(0.2, 1.0, 9))
        tau = 1.0 - sing.grid.nodes[idx]
        rel = np.abs(sing.Y[0, idx] - 1.0 / tau) * tau
        assert np.max(rel) <= 1e-4

    def test_tight_family_limit(self, tight_ladder):
        _, ladder = tight_ladder
        sing = extrapolate_singular(ladder, 1e-3)
        idx = nodes_near(sing, np.linspace(0.2, 1.0, 9))
        tau = 1.0 - sing.grid.nodes[idx]
        exact = 1.0 / np.expm1(tau)
        assert np.max(np.abs(sing.Y[0, idx] - exact) / exact) <= 1e-4

    def test_needs_three_levels(self, nojump_ladder):
        model, _ = nojump_ladder
        grid = make_grid(1.0, 64)
        short = solve_ladder(model, [1.0, 2.0], grid)
        with pytest.raises(ValueError):
            extrapolate_singular(short, 1e-3)

    def test_limit_dominates_ladder(self, tight_ladder):
        _, ladder = tight_ladder
        sing = extrapolate_singular(ladder, 1e-3)
        stack = ladder.stacked()[:, :, : sing.grid.n_nodes]
        assert np.max(stack - sing.Y[None]) <= 0.0

    def test_grid_refinement_stability(self):
        # Doubling the step count moves the extrapolated values at shared
        # nodes by at most 1e-6 relative, on the exact-family model.
        config = tight_family_config()
        sols = []
        for steps in (256, 512):
            model, ladder = _ladder(config, steps=steps)
            sols.append(extrapolate_singular(ladder, 1e-3))
        shared, i_coarse, i_fine = np.intersect1d(
            sols[0].grid.nodes, sols[1].grid.nodes, return_indices=True
        )
        assert len(shared) > 200
        coarse = sols[0].Y[0, i_coarse]
        fine = sols[1].Y[0, i_fine]
        assert np.max(np.abs(coarse - fine) / np.abs(fine)) <= 1e-6

    def test_final_node_before_horizon(self, tight_ladder):
        _, ladder = tight_ladder
        sing = extrapolate_singular(ladder, 1e-3)
        assert sing.t_max <= 1.0 - 1e-3 + 1e-15


class TestVerifySandwich:
    def test_pass(self, tight_ladder):
        _, ladder = tight_ladder
        sing = extrapolate_singular(ladder, 1e-3)
        report = verify_sandwich(sing)
        assert report.passed
        assert report.n_violations == 0

    def test_two_regime_pass(self, two_regime_model):
        grid = make_grid(
            1.0, 256, breakpoints=two_regime_model.coefficients.breakpoints,
            refinement=1.35,
        )
        ladder = solve_ladder(two_regime_model, LEVELS[:12], grid)
        sing = extrapolate_singular(ladder, 1e-3)
        assert verify_sandwich(sing).passed

    def test_corrupted_fails(self, tight_ladder):
        _, ladder = tight_ladder
        sing = extrapolate_singular(ladder, 1e-3)
        bad = sing.Y.copy()
        bad[0, 3] *= 0.5  # push one node below the lower envelope
        corrupted = dataclasses.replace(sing, Y=bad)
        report = verify_sandwich(corrupted)
        assert not report.passed
        assert not report.ok[0, 3]
        assert report.n_violations == 1

    def test_inflated_upper_still_passes(self, tight_ladder):
        model, ladder = tight_ladder
        sing = extrapolate_singular(ladder, 1e-3)
        tau = model.horizon - sing.grid.nodes
        looser = BoundsEnvelope(
            grid=sing.grid,
            lower=sing.envelope.lower,
            upper=closed_form_upper(
                model.coefficients.eta_cap,
                10.0 * max(model.coefficients.lambda_cap, 1.0),
                tau,
            ),
            c_check=sing.envelope.c_check,
        )
        assert verify_sandwich(dataclasses.replace(sing, envelope=looser)).passed


class TestBlowupProfile:
    def test_nojump_profile(self, nojump_ladder):
        _, ladder = nojump_ladder
        sing = extrapolate_singular(ladder, 1e-2)
        profile = blowup_profile(sing)
        assert profile.passed
        # (T-t) Y approaches eta/eta_floor = 1 from below
        assert 0.9 <= profile.empirical_limit[0] <= 1.0 + 1e-9

    def test_tight_profile_within_bracket(self, tight_ladder):
        _, ladder = tight_ladder
        sing = extrapolate_singular(ladder, 1e-2)
        profile = blowup_profile(sing)
        assert profile.passed
        assert np.all(profile.scaled <= profile.bracket_hi[None] + 1e-6)

    def test_csv(self, tight_ladder, tmp_path):
        _, ladder = tight_ladder
        sing = extrapolate_singular(ladder, 1e-2)
        profile = blowup_profile(sing)
        out = tmp_path / "profile.csv"
        profile.to_csv(out)
        header = out.read_text().splitlines()[0]
        assert header == "tau,tauY_1,bracket_lo,bracket_hi,env_lo,env_hi"
