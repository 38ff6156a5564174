import numpy as np
import pytest

from diffpath.denoiser import ConditionEmbedding, GMMDenoiser, GMMDenoiserParams
from diffpath.errors import DenoiserError, ParameterError
from diffpath.sampler import (GENERATION, INVERSION, PathRecord, cfg_combine,
                              ddim_invert, ddim_step, effective_noise, f_theta,
                              generate, invert_step, null_text_invert)
from diffpath.schedule import build_linear_beta_schedule, make_timestep_grid

from conftest import single_gaussian


class TestFTheta:
    def test_zero_noise_rescales(self):
        x = np.array([2.0, -1.0])
        assert np.allclose(f_theta(x, np.zeros(2), 0.25), x / 0.5, rtol=1e-15)

    def test_clean_level_is_identity(self):
        x = np.array([0.3, 0.4])
        assert np.array_equal(f_theta(x, np.array([5.0, -5.0]), 1.0), x)

    def test_scalar_value(self):
        # independent evaluation: (1 - sqrt(0.36)*0.5) / sqrt(0.64) = 0.875
        got = f_theta(np.array([1.0]), np.array([0.5]), 0.64)
        assert got[0] == pytest.approx(0.875, abs=1e-15)


class TestDdimStep:
    def test_final_step_returns_f_theta(self):
        x, eps = np.array([1.4, -0.3]), np.array([0.2, 0.9])
        assert np.array_equal(ddim_step(x, eps, 0.37, 1.0), f_theta(x, eps, 0.37))

    def test_equal_levels_fixed_point(self):
        x, eps = np.array([1.4, -0.3]), np.array([0.2, 0.9])
        assert np.array_equal(ddim_step(x, eps, 0.37, 0.37), x)

    def test_scalar_value(self):
        # independent evaluation of the update:
        # 0.9 * 0.875 + sqrt(0.19) * 0.5 = 1.0054449471770335
        got = ddim_step(np.array([1.0]), np.array([0.5]), 0.64, 0.81)
        expect = 0.9 * 0.875 + np.sqrt(0.19) * 0.5
        assert got[0] == pytest.approx(expect, abs=1e-15)
        assert got[0] == pytest.approx(1.0054449471770335, abs=1e-14)

    def test_schedule_order_violation(self):
        x, eps = np.ones(2), np.ones(2)
        with pytest.raises(ParameterError):
            ddim_step(x, eps, 0.8, 0.5)

    def test_effective_noise_inverts_the_step(self):
        x, eps = np.array([1.1, -2.0]), np.array([0.4, 0.6])
        a_t, a_prev = 0.55, 0.72
        stepped = ddim_step(x, eps, a_t, a_prev)
        assert np.allclose(effective_noise(x, stepped, a_t, a_prev), eps, rtol=1e-10)

    def test_effective_noise_zero_width_rejected(self):
        with pytest.raises(ParameterError):
            effective_noise(np.ones(2), np.ones(2), 0.5, 0.5)


class TestCfgCombine:
    def test_zero_scale_returns_conditional(self):
        e_c, e_n = np.array([0.2, 0.3]), np.array([0.1, -0.1])
        assert np.array_equal(cfg_combine(e_c, e_n, 0.0), e_c)

    def test_scalar_value(self):
        got = cfg_combine(np.array([0.2]), np.array([0.1]), 1.0)
        assert got[0] == pytest.approx(0.3, abs=1e-15)

    def test_equal_operands_fixed(self):
        e = np.array([0.7, -0.2])
        for beta in (-3.0, 0.0, 7.5):
            assert np.allclose(cfg_combine(e, e, beta), e, atol=0.0)

    def test_shape_mismatch(self):
        with pytest.raises(ParameterError):
            cfg_combine(np.ones(2), np.ones(3), 1.0)


SCHED = build_linear_beta_schedule(1000, 1e-4, 0.02)
GRID = make_timestep_grid(1000, 50)
C_A = ConditionEmbedding(np.array([1.0, 0.25]))


class TestGenerate:
    def test_single_step_structure(self, demo):
        grid1 = make_timestep_grid(1000, 1)
        x_top = np.array([0.4, -1.0])
        path = generate(demo["denoiser"], x_top, demo["c_a"], grid1, SCHED)
        assert len(path.latents) == 2 and len(path.noises) == 1
        a = SCHED.at(1000)
        assert np.array_equal(path.latents[1], f_theta(x_top, path.noises[0], a))

    def test_affine_recursion_oracle(self):
        # K=1, sigma^2=1, mu=0: eps(x) = sqrt(1-a)*x, so each step scales by
        # sqrt(a_prev*a_t) + sqrt((1-a_prev)*(1-a_t)); the endpoint is x_top
        # times the product of those factors
        den = single_gaussian(base_mean=(0.0, 0.0), cond_map=ZERO2, variance=1.0)
        x_top = np.array([1.7, -0.6])
        path = generate(den, x_top, C_A, GRID, SCHED)
        factor = 1.0
        for i in range(GRID.t_sample):
            a_t = SCHED.at(GRID.level(i))
            a_prev = SCHED.at(GRID.prev_level(i))
            factor *= np.sqrt(a_prev * a_t) + np.sqrt((1 - a_prev) * (1 - a_t))
        assert np.allclose(path.x0, factor * x_top, rtol=1e-12)

    def test_bit_identical_reruns(self, demo):
        p1 = generate(demo["denoiser"], demo["x_top"], demo["c_a"], GRID, SCHED)
        p2 = generate(demo["denoiser"], demo["x_top"], demo["c_a"], GRID, SCHED)
        assert all(np.array_equal(a, b) for a, b in zip(p1.latents, p2.latents))
        assert all(np.array_equal(a, b) for a, b in zip(p1.noises, p2.noises))

    def test_replay_consistency(self, demo):
        path = generate(demo["denoiser"], demo["x_top"], demo["c_a"], GRID, SCHED)
        assert path.replay_errors(SCHED).max() == 0.0

    def test_superposition_for_affine_denoiser(self, affine_denoiser):
        gen = np.random.default_rng(4)
        x1, x2 = gen.normal(size=2), gen.normal(size=2)
        out = lambda x: generate(affine_denoiser, x, C_A, GRID, SCHED).x0
        lhs = out(x1 + x2) + out(np.zeros(2))
        rhs = out(x1) + out(x2)
        assert np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs) < 1e-9

    def test_guidance_with_zero_scale_matches_plain(self, demo):
        plain = generate(demo["denoiser"], demo["x_top"], demo["c_a"], GRID, SCHED)
        guided = generate(demo["denoiser"], demo["x_top"], demo["c_a"], GRID, SCHED,
                          guidance=(0.0, demo["null"]))
        assert all(np.array_equal(a, b) for a, b in zip(plain.latents, guided.latents))

    def test_denoiser_failure_carries_step_context(self, demo):
        class Broken(GMMDenoiser):
            def predict_noise(self, x, c, alpha_bar, t):
                if t < 900:
                    raise RuntimeError("boom")
                return super().predict_noise(x, c, alpha_bar, t)

        broken = Broken(demo["params"])
        with pytest.raises(DenoiserError) as err:
            generate(broken, demo["x_top"], demo["c_a"], GRID, SCHED)
        assert err.value.sampling_step is not None
        assert err.value.training_step == 880

    def test_per_step_null_count_validated(self, demo):
        with pytest.raises(ParameterError):
            generate(demo["denoiser"], demo["x_top"], demo["c_a"], GRID, SCHED,
                     guidance=(1.0, [demo["null"]] * 3))


ZERO2 = ((0.0, 0.0), (0.0, 0.0))


class TestPathRecord:
    def test_length_mismatch_rejected(self, demo):
        path = generate(demo["denoiser"], demo["x_top"], demo["c_a"], GRID, SCHED)
        with pytest.raises(ParameterError):
            PathRecord(grid=GRID, latents=path.latents[:-1], noises=path.noises,
                       condition=demo["c_a"], direction=GENERATION)
        with pytest.raises(ParameterError):
            PathRecord(grid=GRID, latents=path.latents, noises=path.noises,
                       condition=demo["c_a"], direction="sideways")

    def test_endpoint_accessors(self, demo):
        path = generate(demo["denoiser"], demo["x_top"], demo["c_a"], GRID, SCHED)
        assert np.array_equal(path.x_top, path.latents[0])
        assert np.array_equal(path.x0, path.latents[-1])
        inv = ddim_invert(demo["denoiser"], path.x0, demo["c_a"], GRID, SCHED)
        assert np.array_equal(inv.x0, inv.latents[0])
        assert np.array_equal(inv.x_top, inv.latents[-1])


class TestInversion:
    def test_point_mass_linear_map(self):
        # sigma^2 = 0 at mu = 0: eps(x, a) = x / sqrt(1-a); each upward hop is
        # a scalar multiplication whose factor the test recomputes directly
        den = single_gaussian(base_mean=(0.0, 0.0), cond_map=ZERO2, variance=0.0)
        x0 = np.array([0.8, -0.5])
        inv = ddim_invert(den, x0, C_A, GRID, SCHED)
        coeff = 1.0
        for pos in range(GRID.t_sample - 1, -1, -1):
            a_cur = SCHED.at(GRID.prev_level(pos))
            a_tgt = SCHED.at(GRID.level(pos))
            f_coef = (1 - np.sqrt(1 - a_cur) / np.sqrt(1 - a_tgt)) / np.sqrt(a_cur) \
                if a_cur < 1.0 else 1.0
            coeff *= np.sqrt(a_tgt) * f_coef + np.sqrt(1 - a_tgt) / np.sqrt(1 - a_tgt)
        assert np.allclose(inv.x_top, coeff * x0, rtol=1e-10)

    def test_inversion_replay_consistency(self, demo):
        x0 = np.array([0.3, -0.2])
        inv = ddim_invert(demo["denoiser"], x0, demo["c_a"], GRID, SCHED)
        assert inv.direction == INVERSION
        assert inv.replay_errors(SCHED).max() == 0.0

    def test_round_trip_error_small(self, demo):
        gen = np.random.Generator(np.random.Philox(key=77))
        x0s = demo["denoiser"].sample_clean(demo["c_a"], 4, gen)
        for x0 in x0s:
            inv = ddim_invert(demo["denoiser"], x0, demo["c_a"], GRID, SCHED)
            regen = generate(demo["denoiser"], inv.x_top, demo["c_a"], GRID, SCHED)
            assert np.linalg.norm(regen.x0 - x0) / np.linalg.norm(x0) < 0.2

    def test_single_step_round_trip_constant_predictor(self):
        # with all mass at mu, generation lands exactly on mu from any noise,
        # so inverting a mixture draw (= mu) and regenerating is exact
        mu = (0.7, -0.4)
        den = single_gaussian(base_mean=mu, cond_map=ZERO2, variance=0.0)
        grid1 = make_timestep_grid(1000, 1)
        x0 = np.array(mu)
        inv = ddim_invert(den, x0, C_A, grid1, SCHED)
        regen = generate(den, inv.x_top, C_A, grid1, SCHED)
        assert np.allclose(regen.x0, x0, rtol=0, atol=1e-12)

    def test_invert_step_validation(self):
        with pytest.raises(ParameterError):
            invert_step(np.ones(2), np.ones(2), 0.5, 0.8)


class TestNullTextInversion:
    def test_zero_iterations_returns_initial(self, demo):
        x0 = np.array([0.5, 0.1])
        res = null_text_invert(demo["denoiser"], x0, demo["c_a"], 2.0, GRID, SCHED,
                               iterations=0)
        assert all(np.array_equal(e.values, demo["null"].values) for e in res.embeddings)

    def test_zero_guidance_is_inert(self, demo):
        x0 = np.array([0.5, 0.1])
        res = null_text_invert(demo["denoiser"], x0, demo["c_a"], 0.0, GRID, SCHED)
        assert all(np.array_equal(e.values, demo["null"].values) for e in res.embeddings)
        # reconstruction equals the plain round trip when guidance is off
        inv = ddim_invert(demo["denoiser"], x0, demo["c_a"], GRID, SCHED)
        plain = generate(demo["denoiser"], inv.x_top, demo["c_a"], GRID, SCHED)
        guided = generate(demo["denoiser"], inv.x_top, demo["c_a"], GRID, SCHED,
                          guidance=(0.0, res.embeddings))
        assert np.allclose(plain.x0, guided.x0, atol=0.0)

    def test_optimization_beats_fixed_null(self, demo):
        gen = np.random.Generator(np.random.Philox(key=9))
        x0 = demo["denoiser"].sample_clean(demo["c_a"], 1, gen)[0]
        beta = 2.0
        inv = ddim_invert(demo["denoiser"], x0, demo["c_a"], GRID, SCHED)
        baseline = generate(demo["denoiser"], inv.x_top, demo["c_a"], GRID, SCHED,
                            guidance=(beta, demo["null"]))
        res = null_text_invert(demo["denoiser"], x0, demo["c_a"], beta, GRID, SCHED)
        tuned = generate(demo["denoiser"], inv.x_top, demo["c_a"], GRID, SCHED,
                         guidance=(beta, res.embeddings))
        base_err = np.linalg.norm(baseline.x0 - x0)
        opt_err = np.linalg.norm(tuned.x0 - x0)
        assert opt_err < base_err

    def test_objectives_are_recorded_per_step(self, demo):
        x0 = np.array([0.2, 0.9])
        res = null_text_invert(demo["denoiser"], x0, demo["c_a"], 1.0, GRID, SCHED,
                               iterations=2)
        assert len(res.objectives) == GRID.t_sample
        assert all(np.isfinite(v) for v in res.objectives)

    def test_negative_iterations_rejected(self, demo):
        with pytest.raises(ParameterError):
            null_text_invert(demo["denoiser"], np.zeros(2), demo["c_a"], 1.0,
                             GRID, SCHED, iterations=-1)

    def test_divergence_is_reported_not_silent(self, demo, caplog):
        # an absurd step size overshoots; the step must be reverted and a
        # diagnostic recorded, and the kept objectives stay finite
        import logging
        x0 = np.array([0.6, -0.3])
        with caplog.at_level(logging.WARNING, logger="diffpath.sampler"):
            res = null_text_invert(demo["denoiser"], x0, demo["c_a"], 2.0,
                                   GRID, SCHED, iterations=5, step_size=1e5)
        assert len(res.diagnostics) > 0
        assert all("reverted" in d for d in res.diagnostics)
        assert all(np.isfinite(v) for v in res.objectives)
        assert any("diverged" in rec.message for rec in caplog.records)
