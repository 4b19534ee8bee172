import asyncio

from app.scenario import Side
from app.validation import (
    CheckResult, check_consistency, check_crlb_attainment, check_degenerate, check_determinism, check_estimator,
    check_optimizer, check_std_error_scaling, check_structural_identities, check_trends, random_amplitudes,
    random_config,
)


class TestRandomScenarios:
    def test_both_sides_populated(self, rng):
        for _ in range(20):
            cfg = random_config(rng)
            assert cfg.users_on(Side.REFLECT) and cfg.users_on(Side.REFRACT)
            assert cfg.L >= cfg.N + 1

    def test_amplitudes_are_feasible(self, rng):
        for _ in range(20):
            cfg = random_config(rng)
            a_R, a_T = random_amplitudes(cfg, rng)
            assert 0 < a_R and 0 < a_T
            assert a_R ** 2 + a_T ** 2 <= cfg.amplitude_budget * (1 + 1e-12)


class TestChecks:
    def test_structural_identities(self, rng):
        result = check_structural_identities(rng, count=5)
        assert result.passed, result.detail

    def test_crlb_attainment(self, rng):
        result = check_crlb_attainment(rng, count=5)
        assert result.passed, result.detail

    def test_optimizer_against_oracle(self, rng):
        result = check_optimizer(rng, count=3)
        assert result.passed, result.detail

    def test_degenerate(self, small_cfg):
        result = check_degenerate(small_cfg)
        assert result.passed, result.detail

    def test_determinism(self, small_cfg):
        result = asyncio.run(check_determinism(small_cfg, 14))
        assert result.passed, result.detail

    def test_estimator_validity(self, small_cfg, rng):
        result = check_estimator(small_cfg, 400, rng)
        assert result.passed, result.detail

    def test_closed_form_consistency(self, small_cfg):
        result = asyncio.run(check_consistency(small_cfg, 400, 2))
        assert result.passed, result.detail

    def test_std_error_scaling(self, small_cfg):
        result = asyncio.run(check_std_error_scaling(small_cfg, 200, 800))
        assert result.passed, result.detail

    def test_sweep_trends(self, small_cfg):
        result = asyncio.run(check_trends(small_cfg, 60, 2))
        assert result.passed, result.detail

    def test_line_format(self):
        assert CheckResult("x", False, "gap 2").as_line() == "check,x,fail,gap 2"
        assert CheckResult("y", True, "").as_line() == "check,y,pass,"
