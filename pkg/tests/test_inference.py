import numpy as np
import pytest

import smdp.exceptions
import smdp.inference.langevin
import smdp.inference.solver
import smdp.models.base
import smdp.models.mlp
import smdp.physics.toy
import smdp.sde.storage

Solver = smdp.inference.solver


@pytest.fixture(scope="module")
def toy_spec():
    return smdp.physics.toy.QuadraticDrift1D().spec()


@pytest.fixture(scope="module")
def mlp():
    return smdp.models.mlp.MlpScore(dim=1, seed=3, widths=(8, 8))


def _config(mode, **kwargs):
    return Solver.InferenceConfig(**dict({"mode": mode, "steps": 10, "dt": 0.02, "seed": 7}, **kwargs))


# configuration


def test_correction_defaults():
    assert _config("ode").correction == 1.0
    assert _config("sde").correction == 2.0
    assert _config("separated").correction == 1.0
    assert _config("sde", c=1.5).correction == 1.5


def test_separated_mode_defaults_to_unit_diffusion(toy_spec):
    assert _config("separated").diffusion(toy_spec, 0.1) == 1.0
    assert _config("sde").diffusion(toy_spec, 0.1) == pytest.approx(0.03)
    assert _config("sde", g_infer=0.5).diffusion(toy_spec, 0.1) == 0.5


@pytest.mark.parametrize("fields", [
    {"mode": "euler", "steps": 10, "dt": 0.02},
    {"mode": "ode", "steps": 0, "dt": 0.02},
    {"mode": "ode", "steps": 10, "dt": 0.0},
    {"mode": "sde", "steps": 10, "dt": 0.02, "c": 0.0},
    {"mode": "sde", "steps": 10, "dt": 0.02, "g_infer": -1.0},
    {"mode": "sde", "steps": 10, "dt": 0.02, "temperature": 1.0},
])
def test_invalid_inference_settings(fields):
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        Solver.InferenceConfig.from_dict(fields)


def test_times_end_exactly_at_t0():
    times = _config("ode", steps=3, dt=0.1).times()
    np.testing.assert_allclose(times, [0.3, 0.2, 0.1, 0.0])
    assert times[-1] == 0.0


# single steps


def test_ode_step_by_hand(toy_spec):
    model = smdp.models.base.ZeroScore(dim=1)
    x_prev = Solver.reverse_step(model, toy_spec, [[0.5]], 1.0, 0.1, _config("ode"))
    assert x_prev.item() == pytest.approx(0.5 + 0.1 * 7.0 * 0.25)


def test_noise_free_sde_with_unit_correction_is_the_ode(toy_spec, mlp):
    x = np.array([[0.3], [-0.8], [0.05]])
    ode = Solver.reverse_step(mlp, toy_spec, x, 0.5, 0.02, _config("ode"))
    sde = Solver.reverse_step(mlp, toy_spec, x, 0.5, 0.02, _config("sde", c=1.0))
    np.testing.assert_array_equal(ode.numpy(), sde.numpy())


def test_sde_correction_scales_the_score(toy_spec):
    model = smdp.models.base.AnalyticScore(lambda x, t: np.ones_like(x), dim=1)
    zero = smdp.models.base.ZeroScore(dim=1)
    config = _config("sde")
    with_score = Solver.reverse_step(model, toy_spec, [[0.0]], 0.5, 0.1, config)
    without = Solver.reverse_step(zero, toy_spec, [[0.0]], 0.5, 0.1, config)
    assert with_score.item() - without.item() == pytest.approx(2 * 0.1)


def test_reverse_step_rejects_nonpositive_dt(toy_spec, mlp):
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        Solver.reverse_step(mlp, toy_spec, [[0.1]], 0.5, 0.0, _config("ode"))


def test_reverse_step_reports_divergence(toy_spec):
    model = smdp.models.base.AnalyticScore(lambda x, t: np.full_like(x, 1e12), dim=1)
    with pytest.raises(smdp.exceptions.DivergenceError):
        Solver.reverse_step(model, toy_spec, [[0.1]], 0.5, 0.1, _config("ode"))


# whole solves


def test_ode_solve_is_deterministic(toy_spec, mlp):
    first = Solver.solve_inverse(mlp, toy_spec, [0.4], _config("ode", seed=1))
    second = Solver.solve_inverse(mlp, toy_spec, [0.4], _config("ode", seed=2))
    np.testing.assert_array_equal(first.trajectory, second.trajectory)
    assert first.trajectory.shape == (11, 1)
    assert first.trajectory[0, 0] == 0.4
    assert not first.diverged
    assert len(first.diagnostics) == 11


def test_sde_solve_depends_only_on_seed(toy_spec, mlp):
    a = Solver.solve_inverse(mlp, toy_spec, [0.4], _config("sde", seed=11))
    b = Solver.solve_inverse(mlp, toy_spec, [0.4], _config("sde", seed=11))
    c = Solver.solve_inverse(mlp, toy_spec, [0.4], _config("sde", seed=12))
    np.testing.assert_array_equal(a.trajectory, b.trajectory)
    assert not np.array_equal(a.trajectory, c.trajectory)


def test_batch_solve_does_not_depend_on_workers(toy_spec, mlp):
    x_end = np.linspace(-0.1, 0.1, 9)[:, None]
    one = Solver.solve_inverse_batch(mlp, toy_spec, x_end, _config("sde"), workers=1)
    three = Solver.solve_inverse_batch(mlp, toy_spec, x_end, _config("sde"), workers=3)
    np.testing.assert_array_equal(one.trajectories, three.trajectories)


def test_first_posterior_sample_is_the_single_solve(toy_spec, mlp):
    config = _config("sde", seed=5)
    samples = Solver.posterior_sample(mlp, toy_spec, [0.02], config, n_samples=4)
    single = Solver.solve_inverse(mlp, toy_spec, [0.02], config)
    assert len(samples) == 4
    np.testing.assert_array_equal(samples[0].trajectory, single.trajectory)
    assert len({float(s.endpoint[0]) for s in samples}) == 4


def test_posterior_sampling_needs_a_stochastic_mode(toy_spec, mlp):
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        Solver.posterior_sample(mlp, toy_spec, [0.02], _config("ode"), n_samples=2)


def test_divergent_rows_are_truncated(toy_spec):
    model = smdp.models.base.AnalyticScore(lambda x, t: np.where(x > 0, 1e12, 0.0), dim=1)
    batch = Solver.solve_inverse_batch(model, toy_spec, np.array([[0.05], [-0.05]]), _config("ode"))
    assert list(batch.diverged) == [True, False]
    assert batch.diverged_at[0] == 1
    assert np.all(np.isnan(batch.trajectories[0, 1:]))
    assert np.all(np.isfinite(batch.trajectories[1]))

    result = batch.result(0)
    assert result.diverged and result.truncated_at == 1
    assert [row["flag"] for row in result.diagnostics][:2] == [0, 1]


def test_end_states_must_be_finite(toy_spec, mlp):
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        Solver.solve_inverse_batch(mlp, toy_spec, np.array([[np.nan]]), _config("ode"))


def test_write_inference(tmp_path, toy_spec, mlp):
    config = _config("sde", steps=4, dt=0.25)
    batch = Solver.solve_inverse_batch(mlp, toy_spec, np.zeros((3, 1)), config)
    path = Solver.write_inference(str(tmp_path / "inference.bin"), batch, config, spec_name="toy")
    header = smdp.sde.storage.read_header(path)
    assert (header.n, header.m, header.d) == (3, 4, 1)
    assert header.t0 == pytest.approx(1.0)
    assert header.dt == pytest.approx(-0.25)

    diagnostics = Solver.write_diagnostics(str(tmp_path / "diagnostics.csv"), batch.result(0))
    with open(diagnostics) as f:
        assert f.readline().strip() == "step,t,x_norm,score_norm,flag"


# Langevin


def test_langevin_with_zero_score_diffuses():
    model = smdp.models.base.ZeroScore(dim=1)
    result = smdp.inference.langevin.langevin_refine(model, np.zeros((4000, 1)), 0.5, epsilon=0.01, n_steps=50)
    assert np.var(result.states) == pytest.approx(2 * 0.01 * 50, rel=0.1)
    assert result.n_diverged == 0


def test_langevin_samples_a_standard_normal():
    model = smdp.models.base.AnalyticScore(lambda x, t: -x, dim=1)
    result = smdp.inference.langevin.langevin_refine(model, np.zeros((2000, 1)), 0.5, epsilon=0.01, n_steps=1000)
    assert np.mean(result.states) == pytest.approx(0.0, abs=0.1)
    assert np.var(result.states) == pytest.approx(1.0, rel=0.1)


def test_langevin_scales_model_output_by_diffusion():
    model = smdp.models.base.AnalyticScore(lambda x, t: -4.0 * x, dim=1)
    result = smdp.inference.langevin.langevin_refine(
        model, np.zeros((2000, 1)), 0.5, epsilon=0.01, n_steps=1000, diffusion=2.0)
    assert np.var(result.states) == pytest.approx(1.0, rel=0.1)


def test_langevin_keeps_the_affine_marginal():
    system = smdp.physics.toy.AffineDrift1D(lam=0.5, g=0.5)
    t = 1.0
    model = smdp.models.base.AnalyticScore(
        lambda x, tt: smdp.physics.toy.analytic_score_affine(system, x, float(tt[0, 0])), dim=1)

    rng = np.random.default_rng(4)
    signs = rng.choice([-1.0, 1.0], size=(4000, 1))
    start = system.mean(t, 1.0) * signs + np.sqrt(system.variance(t)) * rng.standard_normal((4000, 1))

    result = smdp.inference.langevin.langevin_refine(model, start, t, epsilon=0.01, n_steps=500, seed=2)
    assert result.n_diverged == 0
    assert np.mean(result.states) == pytest.approx(0.0, abs=0.05)
    assert np.var(result.states) == pytest.approx(system.mixture_variance(t), rel=0.1)


def test_langevin_is_seeded():
    model = smdp.models.base.ZeroScore(dim=2)
    a = smdp.inference.langevin.langevin_refine(model, np.zeros((3, 2)), 0.5, n_steps=5, seed=1)
    b = smdp.inference.langevin.langevin_refine(model, np.zeros((3, 2)), 0.5, n_steps=5, seed=1)
    np.testing.assert_array_equal(a.states, b.states)


def test_langevin_freezes_divergent_chains():
    model = smdp.models.base.AnalyticScore(lambda x, t: np.where(x > 0, 1e12, 0.0), dim=1)
    start = np.array([[0.5], [-5.0]])
    result = smdp.inference.langevin.langevin_refine(model, start, 0.5, epsilon=0.01, n_steps=3)
    assert list(result.diverged) == [True, False]
    assert result.states[0, 0] == 0.5


@pytest.mark.parametrize("kwargs", [{"epsilon": 0.0}, {"diffusion": 0.0}])
def test_langevin_rejects_bad_settings(kwargs):
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        smdp.inference.langevin.langevin_refine(smdp.models.base.ZeroScore(dim=1), np.zeros((1, 1)), 0.5, **kwargs)
