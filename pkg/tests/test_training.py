import math
from dataclasses import replace

import numpy as np
import pytest

from app.analysis import Bound, epsilon_surface
from app.channel import gen_ris_bs
from app.errors import (
    DegenerateModeError, DimensionError, EmptyRangeError, InfeasibleAmplificationError, InputError,
    SingularChannelError, UnknownSchemeError,
)
from app.scenario import Scheme, Side, UpdateRule, UserSpec, dbm_to_watts
from app.training import (
    build_baseline_schedule, build_dft_schedule, build_onoff_schedule, build_pilots, closed_form_a, dft_basis,
    feasible_range_a, golden_section, optimize_amplification, oracle_optimum,
)


class TestPilots:
    def test_single_user_is_all_ones(self, cfg):
        pilots = build_pilots(replace(cfg, users=cfg.users[:1]))
        np.testing.assert_array_equal(pilots.S, np.ones((1, cfg.L)))

    def test_orthogonal_unit_modulus(self, cfg):
        S = build_pilots(cfg).S
        assert abs(np.vdot(S[0], S[1])) < 1e-12
        np.testing.assert_allclose(np.abs(S), 1.0, rtol=1e-14)
        np.testing.assert_allclose(np.sum(np.abs(S) ** 2, axis=1), cfg.L)

    def test_too_many_users(self, cfg):
        with pytest.raises(InputError, match="L >= K"):
            build_pilots(replace(cfg, L=1))


class TestDftBasis:
    def test_two_point(self):
        basis = dft_basis(2, 1)
        np.testing.assert_allclose(basis.D, [[1.0], [-1.0]], atol=1e-15)

    def test_orthogonal_columns(self):
        basis = dft_basis(26, 25)
        np.testing.assert_allclose(basis.D_full.conj().T @ basis.D_full, 26 * np.eye(26), atol=26e-12)
        np.testing.assert_allclose(basis.D_full[:, 0], 1.0)
        np.testing.assert_allclose(np.abs(basis.D_full), 1.0)

    def test_entry_sign_convention(self):
        basis = dft_basis(7, 3)
        assert basis.D_full[1, 2] == pytest.approx(np.exp(-2j * np.pi * 2 / 7))

    def test_short_pilot(self):
        with pytest.raises(DimensionError):
            dft_basis(5, 5)


class TestDftSchedule:
    def test_zero_amplification_switches_surface_off(self, cfg, rng):
        g, _ = gen_ris_bs(cfg, rng)
        schedule = build_dft_schedule(0.0, 0.0, g[0], dft_basis(cfg.L, cfg.N), cfg.beta_max)
        assert not schedule.phi_R.any() and not schedule.phi_T.any()

    def test_beams_invert_reference_link(self, cfg, rng):
        g, _ = gen_ris_bs(cfg, rng)
        basis = dft_basis(cfg.L, cfg.N)
        a_R, a_T = 1e-3, 2e-3
        schedule = build_dft_schedule(a_R, a_T, g[0], basis, cfg.beta_max)
        np.testing.assert_allclose(schedule.slot_rows(Side.REFLECT, g[0])[0], a_R * basis.D, rtol=1e-12)
        np.testing.assert_allclose(schedule.slot_rows(Side.REFRACT, g[0])[0], a_T * basis.D, rtol=1e-12)
        np.testing.assert_allclose(np.abs(schedule.phi_R), a_R / np.sqrt(cfg.alpha), rtol=1e-12)

    def test_budget_met_with_equality(self, cfg, rng):
        g, _ = gen_ris_bs(cfg, rng)
        a = math.sqrt(cfg.amplitude_budget / 2)
        schedule = build_dft_schedule(a, a, g[0], dft_basis(cfg.L, cfg.N), cfg.beta_max)
        assert schedule.max_element_power() == pytest.approx(cfg.beta_max, rel=1e-12)

    def test_infeasible(self, cfg, rng):
        g, _ = gen_ris_bs(cfg, rng)
        cap = math.sqrt(cfg.amplitude_budget)
        with pytest.raises(InfeasibleAmplificationError):
            build_dft_schedule(cap, 0.1 * cap, g[0], dft_basis(cfg.L, cfg.N), cfg.beta_max)

    def test_zero_entry_in_reference_link(self, cfg, rng):
        g, _ = gen_ris_bs(cfg, rng)
        g1 = g[0].copy()
        g1[3] = 0
        with pytest.raises(SingularChannelError):
            build_dft_schedule(1e-4, 1e-4, g1, dft_basis(cfg.L, cfg.N), cfg.beta_max)


class TestBaselines:
    @pytest.fixture
    def parts(self, cfg, rng):
        g, _ = gen_ris_bs(cfg, rng)
        return g[0], dft_basis(cfg.L, cfg.N)

    def test_star_is_passive_half_split(self, cfg, parts):
        schedule = build_baseline_schedule(Scheme.STAR, cfg, *parts)
        np.testing.assert_allclose(np.abs(schedule.phi_R), np.sqrt(0.5), rtol=1e-12)
        np.testing.assert_allclose(np.abs(schedule.phi_T), np.sqrt(0.5), rtol=1e-12)
        assert schedule.sigma_s_sq == 0.0

    def test_passive_unit_amplitude(self, cfg, parts):
        schedule = build_baseline_schedule(Scheme.PASSIVE, cfg, *parts)
        np.testing.assert_allclose(np.abs(schedule.phi_R), 1.0, rtol=1e-12)
        assert not schedule.serves(Side.REFRACT)
        assert schedule.sigma_s_sq == 0.0

    def test_active_full_amplification(self, cfg, parts):
        schedule = build_baseline_schedule(Scheme.ACTIVE, cfg, *parts)
        np.testing.assert_allclose(np.abs(schedule.phi_R) ** 2, cfg.beta_max, rtol=1e-10)
        assert schedule.sigma_s_sq == cfg.sigma_s_sq

    def test_onoff_one_element_per_slot(self, cfg, parts):
        schedule = build_baseline_schedule(Scheme.ONOFF_MFRIS, cfg, *parts)
        assert not schedule.phi_R[0].any()
        assert np.count_nonzero(schedule.phi_R[2]) == 1
        assert schedule.phi_R[2, 1] != 0
        np.testing.assert_allclose(np.abs(schedule.phi_T[2, 1]) ** 2, cfg.beta_max / 2)
        assert schedule.max_element_power() == pytest.approx(cfg.beta_max)

    def test_onoff_pattern_repeats(self, cfg):
        schedule = build_onoff_schedule(cfg, 3, 9)
        np.testing.assert_array_equal(schedule.phi_R[:4], schedule.phi_R[4:8])

    def test_dft_mfris_is_not_a_baseline(self, cfg, parts):
        with pytest.raises(UnknownSchemeError):
            build_baseline_schedule(Scheme.DFT_MFRIS, cfg, *parts)


class TestFeasibleRange:
    def test_full_range(self, cfg):
        _, upper = feasible_range_a(0.0, cfg)
        assert upper == pytest.approx(6.664e-3, rel=1e-3)

    def test_boundary_is_empty(self, cfg):
        assert feasible_range_a(math.sqrt(cfg.amplitude_budget), cfg)[1] == 0.0

    def test_identity(self, cfg):
        a_j = 0.4 * math.sqrt(cfg.amplitude_budget)
        _, upper = feasible_range_a(a_j, cfg)
        assert upper ** 2 + a_j ** 2 == pytest.approx(cfg.amplitude_budget, rel=1e-12)

    def test_outside_budget(self, cfg):
        with pytest.raises(EmptyRangeError):
            feasible_range_a(1.1 * math.sqrt(cfg.amplitude_budget), cfg)


class TestClosedForm:
    def test_symmetric_sides_agree(self, cfg):
        x = 0.5 * math.sqrt(cfg.amplitude_budget)
        assert closed_form_a(Side.REFLECT, x, cfg) == pytest.approx(closed_form_a(Side.REFRACT, x, cfg), rel=1e-12)

    def test_cap_binds_with_small_budget(self, cfg):
        small = replace(cfg, beta_max=1.0)
        a_other = 0.5 * math.sqrt(small.amplitude_budget)
        expected = math.sqrt(small.amplitude_budget - a_other ** 2)
        assert closed_form_a(Side.REFLECT, a_other, small) == pytest.approx(expected, rel=1e-12)

    def test_zero_other_parameter(self, cfg):
        with pytest.raises(DegenerateModeError):
            closed_form_a(Side.REFLECT, 0.0, cfg)


class TestGoldenSection:
    def test_interior_minimum(self):
        x, value = golden_section(lambda t: (t - 0.3) ** 2, 0.0, 1.0, 1e-10)
        assert x == pytest.approx(0.3, abs=1e-6)
        assert value == pytest.approx(0.0, abs=1e-11)

    def test_endpoint_minimum(self):
        x, _ = golden_section(lambda t: t, 0.0, 1.0, 1e-10)
        assert x == 0.0


class TestOptimizer:
    def test_trace_monotone_and_converged(self, cfg):
        solution = optimize_amplification(cfg)
        eps = [step[2] for step in solution.trace]
        assert all(b <= a + 1e-12 * eps[0] for a, b in zip(eps, eps[1:]))
        assert solution.converged and solution.iterations <= 100
        assert solution.a_R ** 2 + solution.a_T ** 2 <= cfg.amplitude_budget * (1 + 1e-12)
        assert solution.trace[0][0] == pytest.approx(math.sqrt(cfg.amplitude_budget / 2))

    def test_matches_oracle(self, cfg):
        solution = optimize_amplification(cfg)
        _, _, reference = oracle_optimum(cfg)
        assert solution.epsilon_value == pytest.approx(reference, rel=1e-3)
        assert solution.epsilon_value == pytest.approx(float(epsilon_surface(solution.a_R, solution.a_T, cfg)))

    def test_noiseless_surface_fills_budget(self, cfg):
        solution = optimize_amplification(replace(cfg, sigma_s_sq=0.0))
        assert solution.a_R ** 2 + solution.a_T ** 2 == pytest.approx(cfg.amplitude_budget, rel=1e-6)
        assert solution.a_R == pytest.approx(solution.a_T, rel=1e-3)

    def test_label_swap_symmetry(self, cfg):
        users = (
            UserSpec(side=Side.REFLECT, power=dbm_to_watts(20.0), distance_to_ris=5.0, distance_to_bs=25.0),
            UserSpec(side=Side.REFRACT, power=dbm_to_watts(10.0), distance_to_ris=5.0, distance_to_bs=25.0),
        )
        swapped = tuple(replace(u, side=u.side.other) for u in users)
        first = optimize_amplification(replace(cfg, users=users))
        second = optimize_amplification(replace(cfg, users=swapped))
        assert first.epsilon_value == pytest.approx(second.epsilon_value, rel=1e-6)
        assert first.a_R == pytest.approx(second.a_T, rel=1e-3)
        assert first.a_T == pytest.approx(second.a_R, rel=1e-3)

    def test_closed_form_rule_stays_feasible(self, cfg):
        solution = optimize_amplification(cfg, update_rule=UpdateRule.CLOSED_FORM)
        eps = [step[2] for step in solution.trace]
        assert all(b <= a + 1e-12 * eps[0] for a, b in zip(eps, eps[1:]))
        assert solution.a_R ** 2 + solution.a_T ** 2 <= cfg.amplitude_budget * (1 + 1e-12)
        assert solution.update_rule is UpdateRule.CLOSED_FORM

    def test_single_side_takes_degenerate_path(self, cfg):
        reflect_only = cfg.with_users([replace(u, side=Side.REFLECT) for u in cfg.users])
        solution = optimize_amplification(reflect_only)
        assert solution.degenerate is not None
        assert solution.degenerate.eps_f is Bound.INFINITE
        assert solution.a_T < 1e-3 * math.sqrt(cfg.amplitude_budget)
        assert math.isfinite(solution.epsilon_value)

    def test_flat_error_keeps_initial_point(self, noiseless_cfg):
        solution = optimize_amplification(noiseless_cfg)
        start = math.sqrt(noiseless_cfg.amplitude_budget / 2)
        assert solution.a_R == start and solution.a_T == start
        assert solution.epsilon_value == 0.0
        assert solution.converged and solution.iterations == 1

    def test_solutions_are_cached(self, cfg):
        assert optimize_amplification(cfg) is optimize_amplification(cfg)

    @pytest.mark.parametrize("kwargs", [{"tol": 0.0}, {"max_iter": 0}])
    def test_rejects_bad_settings(self, cfg, kwargs):
        with pytest.raises(InputError):
            optimize_amplification(cfg, **kwargs)


class TestOracle:
    def test_noiseless(self, cfg):
        _, _, eps = oracle_optimum(replace(cfg, sigma_s_sq=0.0, sigma_sq=0.0))
        assert eps == 0.0

    def test_resolution_floor(self, cfg):
        with pytest.raises(InputError):
            oracle_optimum(cfg, resolution=50)

    @pytest.mark.parametrize("resolution", [100, 137, 200])
    def test_point_matches_reported_error(self, cfg, resolution):
        a_R, a_T, eps = oracle_optimum(cfg, resolution=resolution)
        assert float(epsilon_surface(a_R, a_T, cfg)) == pytest.approx(eps, rel=1e-12)
        assert a_R ** 2 + a_T ** 2 <= cfg.amplitude_budget * (1 + 1e-12)

    def test_coordinatewise_convexity(self, cfg, rng):
        cap = math.sqrt(cfg.amplitude_budget)
        for _ in range(50):
            y = rng.uniform(0.05, 0.7) * cap ** 2
            x1, x2 = rng.uniform(0.01, 1.0, 2) * (cap ** 2 - y)
            mid = float(epsilon_surface(math.sqrt((x1 + x2) / 2), math.sqrt(y), cfg))
            ends = [float(epsilon_surface(math.sqrt(x), math.sqrt(y), cfg)) for x in (x1, x2)]
            assert mid <= 0.5 * sum(ends) * (1 + 1e-12)
