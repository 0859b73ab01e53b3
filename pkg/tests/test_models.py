import numpy as np
import pytest

import smdp.autodiff.tensor
import smdp.exceptions
import smdp.models.base
import smdp.models.checkpoint
import smdp.models.conv
import smdp.models.grid
import smdp.models.mlp


def test_mlp_shapes_and_seeding():
    a = smdp.models.mlp.MlpScore(dim=1, seed=0, widths=(8, 4))
    b = smdp.models.mlp.MlpScore(dim=1, seed=0, widths=(8, 4))
    c = smdp.models.mlp.MlpScore(dim=1, seed=1, widths=(8, 4))
    assert a.parameter_shapes == [(2, 8), (8,), (8, 4), (4,), (4, 1), (1,)]
    np.testing.assert_array_equal(a.flat_parameters(), b.flat_parameters())
    assert not np.array_equal(a.flat_parameters(), c.flat_parameters())
    assert a.evaluate(np.zeros((5, 1)), 0.5).shape == (5, 1)


def test_mlp_single_state_is_promoted_to_batch():
    model = smdp.models.mlp.MlpScore(dim=2, widths=(4,))
    assert model(np.zeros(2), 0.0).shape == (1, 2)
    with pytest.raises(smdp.exceptions.ShapeError):
        model(np.zeros((3, 5)), 0.0)


def test_per_sample_times_must_match_batch():
    model = smdp.models.mlp.MlpScore(dim=1, widths=(4,))
    assert model(np.zeros((3, 1)), [0.1, 0.2, 0.3]).shape == (3, 1)
    with pytest.raises(smdp.exceptions.ShapeError):
        model(np.zeros((3, 1)), [0.1, 0.2])


def test_mlp_jvp_matches_finite_differences():
    model = smdp.models.mlp.MlpScore(dim=2, seed=3, widths=(6, 5))
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 2))
    v = rng.normal(size=(4, 2))
    value, tangent = model.jvp(x, 0.7, v)
    h = 1e-6
    numeric = (model(x + h * v, 0.7).data - model(x - h * v, 0.7).data) / (2 * h)
    np.testing.assert_allclose(value.data, model(x, 0.7).data)
    np.testing.assert_allclose(tangent.data, numeric, rtol=1e-5, atol=1e-8)


def test_parameter_gradient_matches_finite_differences():
    model = smdp.models.mlp.MlpScore(dim=1, seed=2, widths=(3,))
    x = np.linspace(-1, 1, 6).reshape(-1, 1)

    def loss_of(flat):
        model.load_flat_parameters(flat)
        return float(np.mean(model(x, 0.5).data ** 2))

    flat = model.flat_parameters()
    with smdp.autodiff.tensor.Tape() as tape:
        tape.watch(*model.parameters())
        loss = smdp.autodiff.tensor.mean(smdp.autodiff.tensor.square(model(x, 0.5)))
    analytic = smdp.models.base.parameter_gradient(model, tape, loss)

    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        shifted = flat.copy()
        shifted[i] += 1e-6
        plus = loss_of(shifted)
        shifted[i] -= 2e-6
        minus = loss_of(shifted)
        numeric[i] = (plus - minus) / 2e-6
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-9)


def test_set_parameters_checks_shapes():
    model = smdp.models.mlp.MlpScore(dim=1, widths=(3,))
    with pytest.raises(smdp.exceptions.ShapeError):
        model.set_parameters(model.parameters()[:-1])
    with pytest.raises(smdp.exceptions.ShapeError):
        model.load_flat_parameters(np.zeros(3))


def test_zero_score():
    model = smdp.models.base.init_model("zero", dim=3)
    np.testing.assert_array_equal(model(np.ones((2, 3)), 1.0).data, np.zeros((2, 3)))
    assert model.parameter_count == 0


def test_grid_score_interpolates_constant_grid():
    model = smdp.models.grid.GridScore(n_t=10, n_x=8)
    model.set_parameters([smdp.autodiff.tensor.Tensor(np.full((10, 8), 2.0))])
    out = model(np.array([[-1.0], [0.0], [0.7]]), [1.0, 5.0, 9.0])
    np.testing.assert_allclose(out.data, 2.0)


def test_grid_score_is_exact_at_cell_centres():
    model = smdp.models.grid.GridScore(n_t=6, n_x=5)
    values = np.random.default_rng(0).normal(size=(6, 5))
    model.set_parameters([smdp.autodiff.tensor.Tensor(values)])
    t, x = model.cell_centers()
    tt, xx = np.meshgrid(t, x, indexing="ij")
    out = model(xx.reshape(-1, 1), tt.reshape(-1))
    np.testing.assert_allclose(out.data.reshape(6, 5), values, atol=1e-10)


def test_grid_score_gradient_is_local():
    model = smdp.models.grid.GridScore(n_t=20, n_x=16)
    model.set_parameters([smdp.autodiff.tensor.Tensor(np.random.default_rng(1).normal(size=(20, 16)))])
    rng = np.random.default_rng(2)
    for (x, t) in zip(rng.uniform(-1.5, 1.5, size=10), rng.uniform(-1.0, 11.0, size=10)):
        with smdp.autodiff.tensor.Tape() as tape:
            tape.watch(*model.parameters())
            out = smdp.autodiff.tensor.reduce_sum(model(np.array([[x]]), [t]))
        gradient = smdp.models.base.parameter_gradient(model, tape, out)
        assert np.count_nonzero(gradient) <= 4
        assert np.sum(gradient) == pytest.approx(1.0)


def test_grid_score_is_one_dimensional():
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        smdp.models.grid.GridScore(dim=2)


def test_conv_score_shapes():
    model = smdp.models.conv.ConvScore2D(dim=16, filters=2, blocks=1)
    out = model(np.random.default_rng(0).normal(size=(3, 16)), 0.1)
    assert out.shape == (3, 16)
    assert out.is_finite()
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        smdp.models.conv.ConvScore2D(dim=15)


def test_conv_score_has_no_jvp():
    model = smdp.models.conv.ConvScore2D(dim=16, filters=2, blocks=1)
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        model.jvp(np.zeros((1, 16)), 0.0, np.zeros((1, 16)))


def test_init_model_rejects_unknown_kind():
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        smdp.models.base.init_model("transformer", dim=1)


@pytest.mark.parametrize("kind,dim,options", [
    ("mlp", 1, {"widths": (5, 3)}),
    ("grid", 1, {"n_t": 6, "n_x": 5}),
    ("conv", 16, {"filters": 2, "blocks": 1}),
    ("zero", 2, {}),
])
def test_checkpoint_roundtrip(tmp_path, kind, dim, options):
    model = smdp.models.base.init_model(kind, dim=dim, seed=4, **options)
    if kind == "grid":
        model.set_parameters([smdp.autodiff.tensor.Tensor(np.random.default_rng(1).normal(size=(6, 5)))])
    model.step = 17
    path = str(tmp_path / "model" / "checkpoint.bin")
    smdp.models.checkpoint.save_checkpoint(path, model)

    loaded = smdp.models.checkpoint.load_checkpoint(path)
    assert loaded.kind == kind
    assert loaded.step == 17
    np.testing.assert_array_equal(loaded.flat_parameters(), model.flat_parameters())
    x = np.random.default_rng(2).normal(size=(3, dim)) * 0.5
    np.testing.assert_array_equal(loaded(x, 0.5).data, model(x, 0.5).data)
    assert smdp.models.checkpoint.read_checkpoint_header(path)["kind"] == kind


def test_load_checkpoint_errors(tmp_path):
    with pytest.raises(smdp.exceptions.MissingArtifactError) as exc_info:
        smdp.models.checkpoint.load_checkpoint(str(tmp_path / "missing.bin"))
    assert exc_info.value.exit_code == smdp.exceptions.EXIT_CONFIG_ERROR

    bogus = tmp_path / "bogus.bin"
    bogus.write_bytes(b"not a checkpoint")
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        smdp.models.checkpoint.load_checkpoint(str(bogus))
