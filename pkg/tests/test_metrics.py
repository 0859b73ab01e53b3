import itertools

import numpy as np
import pytest

import smdp.exceptions
import smdp.metrics.posterior
import smdp.metrics.reconstruction
import smdp.metrics.reports
import smdp.metrics.score_field
import smdp.metrics.spectrum
import smdp.models.base
import smdp.physics.heat
import smdp.physics.toy
import smdp.sde.simulation


# posterior metric


def test_q_of_a_perfect_posterior():
    report = smdp.metrics.posterior.posterior_metric_q([-1.0] * 500 + [1.0] * 500)
    assert report.q == 1.0
    assert report.n == 1000


def test_q_of_a_collapsed_posterior():
    assert smdp.metrics.posterior.posterior_metric_q([1.0] * 20).q == 0.0


def test_q_by_hand():
    report = smdp.metrics.posterior.posterior_metric_q([-1.05, 1.02, 0.5, -0.99])
    assert report.rho_minus == 0.5
    assert report.rho_plus == 0.25
    assert report.q == 0.5
    assert report.unlabeled == pytest.approx(0.25)


def test_q_is_invariant_under_permutation_and_label_swap():
    endpoints = [-1.05, 1.02, 0.5, -0.99, 0.95, 1.3]
    expected = smdp.metrics.posterior.posterior_metric_q(endpoints).q
    for permuted in itertools.permutations(endpoints):
        assert smdp.metrics.posterior.posterior_metric_q(list(permuted)).q == expected
    assert smdp.metrics.posterior.posterior_metric_q([-x for x in endpoints]).q == expected


def test_q_matches_a_two_pass_count():
    endpoints = np.random.default_rng(0).uniform(-1.5, 1.5, size=300)
    minus = sum(1 for x in endpoints if abs(x + 1) < 0.1)
    plus = sum(1 for x in endpoints if abs(x - 1) < 0.1)
    report = smdp.metrics.posterior.posterior_metric_q(endpoints)
    assert report.q == pytest.approx(2 * min(minus, plus) / 300)


def test_divergent_endpoints_lower_q():
    report = smdp.metrics.posterior.posterior_metric_q([-1.0, 1.0, np.nan, 1.0], diverged=[False, False, False, True])
    assert report.n_divergent == 2
    assert report.rho_minus == 0.25
    assert report.rho_plus == 0.25
    assert report.q == 0.5


def test_q_needs_endpoints():
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        smdp.metrics.posterior.posterior_metric_q([])


# reconstruction


def test_reconstruction_of_the_true_initial_state_is_exact():
    heat = smdp.physics.heat.HeatEquation2D(d=8, g=0.0)
    spec = heat.spec()
    grid = smdp.sde.simulation.TimeGrid.validated(0.0, 0.02, 5)
    x0 = smdp.physics.heat.grf_values(8, 4.0, np.random.default_rng(0), count=3).reshape(3, 64)
    x_end = smdp.metrics.reconstruction.resimulate(spec, x0, grid)
    assert smdp.metrics.reconstruction.reconstruction_mse(x0, x_end, spec, grid) < 1e-20


def test_reconstruction_of_zero_is_the_reference_energy():
    heat = smdp.physics.heat.HeatEquation2D(d=8, g=0.1)
    spec = heat.spec()
    grid = smdp.sde.simulation.TimeGrid.validated(0.0, 0.02, 5)
    x_end = np.random.default_rng(1).normal(size=(2, 64))
    mse = smdp.metrics.reconstruction.reconstruction_mse(np.zeros((2, 64)), x_end, spec, grid)
    assert mse == pytest.approx(float(np.mean(x_end ** 2)))


def test_reconstruction_rejects_bad_inputs():
    spec = smdp.physics.toy.QuadraticDrift1D().spec()
    grid = smdp.sde.simulation.TimeGrid.validated(0.0, 0.02, 5)
    with pytest.raises(smdp.exceptions.ShapeError):
        smdp.metrics.reconstruction.reconstruction_mse(np.zeros((2, 1)), np.zeros((3, 1)), spec, grid)
    with pytest.raises(smdp.exceptions.NonFiniteError):
        smdp.metrics.reconstruction.reconstruction_mse(np.array([[np.nan]]), np.zeros((1, 1)), spec, grid)


def test_reconstruction_reports_divergence():
    spec = smdp.physics.toy.QuadraticDrift1D().spec()
    grid = smdp.sde.simulation.TimeGrid.validated(0.0, 1.0, 3)
    with pytest.raises(smdp.exceptions.DivergenceError):
        smdp.metrics.reconstruction.resimulate(spec, np.array([[-1e4]]), grid)


# spectrum


def test_constant_field_has_all_power_in_bin_zero():
    profile = smdp.metrics.spectrum.radial_spectrum(np.full((16, 16), 0.5))
    assert profile.power[0] == pytest.approx(0.25 * 16 * 16)
    np.testing.assert_allclose(profile.power[1:], 0.0, atol=1e-20)


def test_single_mode_lands_in_its_bin():
    d = 32
    x = np.arange(d)
    field = np.cos(2 * np.pi * 5 * x / d)[None, :] * np.ones((d, 1))
    profile = smdp.metrics.spectrum.radial_spectrum(field)
    assert int(np.argmax(profile.power)) == 5
    assert profile.power[5] * profile.counts[5] == pytest.approx(profile.total)


def test_spectrum_conserves_power():
    values = np.random.default_rng(2).normal(size=(16, 16))
    profile = smdp.metrics.spectrum.radial_spectrum(smdp.physics.heat.HeatField2D(values))
    assert profile.total == pytest.approx(float(np.sum(values ** 2)))
    assert int(np.sum(profile.counts)) == 256


def test_flat_and_square_fields_agree():
    values = np.random.default_rng(3).normal(size=(8, 8))
    square = smdp.metrics.spectrum.radial_spectrum(values)
    flat = smdp.metrics.spectrum.radial_spectrum(values.reshape(-1))
    np.testing.assert_array_equal(square.power, flat.power)


def test_grf_spectrum_slope():
    fields = smdp.physics.heat.grf_values(64, 4.0, np.random.default_rng(4), count=64)
    profile = smdp.metrics.spectrum.mean_radial_spectrum(fields)
    assert smdp.metrics.spectrum.spectrum_slope(profile, 2, 10) == pytest.approx(-4.0, abs=0.5)


def test_spectral_loss_of_identical_profiles_is_zero():
    profile = smdp.metrics.spectrum.radial_spectrum(np.random.default_rng(5).normal(size=(16, 16)))
    assert smdp.metrics.spectrum.spectral_loss(profile, profile) == 0.0


def test_spectral_loss_counts_weighted_bins():
    s1 = np.linspace(1.0, 2.0, 16)
    s2 = s1 * np.e
    assert smdp.metrics.spectrum.spectral_loss(s1, s2) == pytest.approx(11.0)


def test_spectral_loss_is_a_pseudometric():
    rng = np.random.default_rng(6)
    a, b, c = (rng.uniform(0.1, 10.0, size=12) for _ in range(3))
    loss = smdp.metrics.spectrum.spectral_loss
    assert loss(a, b) == pytest.approx(loss(b, a))
    assert loss(a, c) <= loss(a, b) + loss(b, c) + 1e-12


def test_spectral_loss_floors_empty_bins():
    assert np.isfinite(smdp.metrics.spectrum.spectral_loss(np.zeros(4), np.ones(4)))


def test_spectral_loss_needs_matching_lengths():
    with pytest.raises(smdp.exceptions.ShapeError):
        smdp.metrics.spectrum.spectral_loss(np.ones(4), np.ones(5))


def test_slope_needs_enough_bins():
    profile = smdp.metrics.spectrum.radial_spectrum(np.ones((4, 4)))
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        smdp.metrics.spectrum.spectrum_slope(profile, 2, 10)


# score field


@pytest.fixture(scope="module")
def affine():
    return smdp.physics.toy.AffineDrift1D(lam=0.5, g=0.04)


def _analytic(affine):
    return lambda x, t: smdp.physics.toy.analytic_score_affine(affine, x, t)


def test_exact_model_has_no_score_error(affine):
    model = smdp.models.base.AnalyticScore(
        lambda x, t: smdp.physics.toy.analytic_score_affine(affine, x, float(t[0, 0])),
        dim=1, diffusion=affine.diffusion)
    samples = np.random.default_rng(7).normal(size=(200, 1))
    error = smdp.metrics.score_field.score_field_error(model, _analytic(affine), samples, 0.5, affine.g)
    assert error == pytest.approx(0.0, abs=1e-12)


def test_zero_model_error_is_the_mean_square_score(affine):
    samples = np.random.default_rng(8).normal(size=(200, 1))
    error = smdp.metrics.score_field.score_field_error(
        smdp.models.base.ZeroScore(dim=1), _analytic(affine), samples, 0.5, affine.g)
    expected = np.mean(smdp.physics.toy.analytic_score_affine(affine, samples, 0.5) ** 2)
    assert error == pytest.approx(float(expected))


def test_score_error_region_and_time(affine):
    model = smdp.models.base.ZeroScore(dim=1)
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        smdp.metrics.score_field.score_field_error(model, _analytic(affine), np.zeros((3, 1)), 0.0, affine.g)
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        smdp.metrics.score_field.score_field_error(
            model, _analytic(affine), np.full((3, 1), 5.0), 0.5, affine.g, region=(-1.0, 1.0))


def test_score_field_grid_shape():
    model = smdp.models.base.AnalyticScore(lambda x, t: x * t, dim=1)
    grid = smdp.metrics.score_field.score_field_grid(model, [0.5, 1.0], np.linspace(-1, 1, 5), diffusion=0.5)
    assert grid.shape == (2, 5)
    assert grid[1, -1] == pytest.approx(4.0)


# reports


def test_aggregate_groups_and_skips_failures():
    Row = smdp.metrics.reports.MetricRow
    rows = smdp.metrics.reports.aggregate([
        Row("toy", "Q", 0.8), Row("toy", "Q", 0.6), Row("toy", "Q", float("nan")),
        Row("heat", "mse", float("nan")),
    ])
    assert [(r.experiment, r.metric) for r in rows] == [("toy", "Q"), ("heat", "mse")]
    assert rows[0].value == pytest.approx(0.7)
    assert rows[0].n == 2
    assert rows[0].std == pytest.approx(np.std([0.8, 0.6], ddof=1))
    assert np.isnan(rows[1].value) and rows[1].n == 0


def test_report_roundtrip(tmp_path):
    Row = smdp.metrics.reports.MetricRow
    rows = [Row("toy", "Q", 0.75, 3, 0.1), Row("toy", "n_divergent", 2.0)]
    path = smdp.metrics.reports.write_report(str(tmp_path / "nested" / "metrics.csv"), rows)
    assert smdp.metrics.reports.read_report(path) == rows


def test_missing_report(tmp_path):
    with pytest.raises(smdp.exceptions.MissingArtifactError):
        smdp.metrics.reports.read_report(str(tmp_path / "nope.csv"))
