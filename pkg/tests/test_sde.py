import numpy as np
import pytest

import smdp.autodiff.tensor
import smdp.exceptions
import smdp.physics.toy
import smdp.sde.simulation
import smdp.sde.storage


@pytest.fixture
def toy_spec():
    return smdp.physics.toy.QuadraticDrift1D().spec()


@pytest.fixture
def small_grid():
    return smdp.sde.simulation.TimeGrid.validated(0.0, 0.02, 50)


def test_time_grid_rejects_bad_steps():
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        smdp.sde.simulation.TimeGrid.validated(0.0, 0.0, 10)
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        smdp.sde.simulation.TimeGrid.validated(0.0, 0.1, 0)


def test_time_grid_times():
    grid = smdp.sde.simulation.TimeGrid.validated(0.0, 0.02, 500)
    assert grid.t_end == pytest.approx(10.0)
    assert grid.times.shape == (501,)
    assert grid.time(250) == pytest.approx(5.0)


def test_generate_dataset_is_deterministic(toy_spec, small_grid):
    a = smdp.sde.simulation.generate_dataset(toy_spec, smdp.physics.toy.binary_initial_sampler, 20, small_grid, 7)
    b = smdp.sde.simulation.generate_dataset(toy_spec, smdp.physics.toy.binary_initial_sampler, 20, small_grid, 7)
    c = smdp.sde.simulation.generate_dataset(toy_spec, smdp.physics.toy.binary_initial_sampler, 20, small_grid, 8)
    np.testing.assert_array_equal(a.states, b.states)
    assert not np.array_equal(a.states, c.states)
    assert a.states.shape == (20, 51, 1)


def test_generate_dataset_slots_do_not_depend_on_chunking(toy_spec, small_grid):
    sampler = smdp.physics.toy.binary_initial_sampler
    whole = smdp.sde.simulation.generate_dataset(toy_spec, sampler, 12, small_grid, 3, chunk_size=500)
    chunked = smdp.sde.simulation.generate_dataset(toy_spec, sampler, 12, small_grid, 3, chunk_size=5)
    prefix = smdp.sde.simulation.generate_dataset(toy_spec, sampler, 6, small_grid, 3)
    np.testing.assert_array_equal(whole.states, chunked.states)
    np.testing.assert_array_equal(whole.states[:6], prefix.states)


def test_initial_states_are_binary(toy_spec, small_grid):
    ts = smdp.sde.simulation.generate_dataset(toy_spec, smdp.physics.toy.binary_initial_sampler, 200, small_grid, 0)
    assert set(np.unique(ts.initial_states)) <= {-1.0, 1.0}
    # the quadratic drift pulls both modes towards zero
    assert np.mean(np.abs(ts.end_states)) < 0.5


def test_generate_dataset_rejects_empty(toy_spec, small_grid):
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        smdp.sde.simulation.generate_dataset(toy_spec, smdp.physics.toy.binary_initial_sampler, 0, small_grid, 0)


def test_fraction_is_prefix(toy_spec, small_grid):
    ts = smdp.sde.simulation.generate_dataset(toy_spec, smdp.physics.toy.binary_initial_sampler, 100, small_grid, 0)
    assert ts.fraction(0.1).n == 10
    assert ts.fraction(0.001).n == 1
    np.testing.assert_array_equal(ts.fraction(0.1).states, ts.states[:10])


def test_euler_maruyama_without_noise_is_physics_step():
    spec = smdp.physics.toy.AffineDrift1D(lam=0.5, g=0.0).spec()
    x = smdp.autodiff.tensor.Tensor([[1.0], [-2.0]])
    y = smdp.sde.simulation.euler_maruyama_step(spec, x, 0.0, 0.1, np.ones((2, 1)))
    np.testing.assert_allclose(y.data, x.data * (1.0 - 0.05))


def test_euler_maruyama_rejects_non_positive_step(toy_spec):
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        smdp.sde.simulation.euler_maruyama_step(toy_spec, np.zeros((1, 1)), 0.0, -0.1, np.zeros((1, 1)))


def test_check_finite_reports_step():
    with pytest.raises(smdp.exceptions.DivergenceError) as exc_info:
        smdp.sde.simulation.check_finite(smdp.autodiff.tensor.Tensor([1.0, np.inf]), step=4)
    assert exc_info.value.exit_code == smdp.exceptions.EXIT_DIVERGENCE
    assert "step 4" in exc_info.value.message


def test_trajectory_set_rejects_non_finite(small_grid):
    states = np.zeros((2, 51, 1))
    states[1, 3, 0] = np.nan
    with pytest.raises(smdp.exceptions.NonFiniteError):
        smdp.sde.simulation.TrajectorySet(small_grid, states, seed=0)


def test_affine_moments_of_simulated_paths():
    system = smdp.physics.toy.AffineDrift1D(lam=0.5, g=0.5)
    grid = smdp.sde.simulation.TimeGrid.validated(0.0, 0.01, 100)
    noise = np.random.default_rng(0).standard_normal((20000, grid.steps, 1))
    states, diverged_at = smdp.sde.simulation.simulate_batch(system.spec(), np.ones((20000, 1)), grid, noise)
    assert np.all(diverged_at == -1)

    end = states[:, -1, 0]
    standard_error = np.sqrt(system.variance(1.0) / end.size)
    assert np.mean(end) == pytest.approx(system.mean(1.0, 1.0), abs=4 * standard_error)
    assert np.var(end) == pytest.approx(system.variance(1.0), rel=0.05)


def test_strong_order_of_multiplicative_noise_is_one_half():
    spec = smdp.physics.toy.MultiplicativeAffine1D(lam=0.5, g=1.0).spec()
    order = smdp.sde.simulation.strong_convergence_order(
        spec, [1 / 8, 1 / 16, 1 / 32, 1 / 64], n_paths=2000, seed=0)
    assert 0.3 < order < 0.8


def test_strong_order_without_noise_is_one():
    spec = smdp.physics.toy.AffineDrift1D(lam=0.5, g=0.0).spec()
    order = smdp.sde.simulation.strong_convergence_order(spec, [0.1, 0.05, 0.025, 0.0125], n_paths=10, seed=0)
    assert order == pytest.approx(1.0, abs=0.15)


def test_strong_order_of_additive_noise_is_one():
    # additive noise: Euler-Maruyama coincides with Milstein
    spec = smdp.physics.toy.AffineDrift1D(lam=0.5, g=0.5).spec()
    order = smdp.sde.simulation.strong_convergence_order(spec, [0.1, 0.05, 0.025, 0.0125], n_paths=500, seed=0)
    assert 0.8 < order < 1.2


def test_strong_errors_vanish_without_drift():
    spec = smdp.physics.toy.AffineDrift1D(lam=0.0, g=0.04).spec()
    dts = [1 / 8, 1 / 16, 1 / 32]
    errors = smdp.sde.simulation.strong_convergence_errors(spec, dts, n_paths=50, seed=0)
    assert list(errors) == [0.0, 0.0, 0.0]
    with pytest.raises(smdp.exceptions.NonFiniteError):
        smdp.sde.simulation.strong_convergence_order(spec, dts, n_paths=50, seed=0)


def test_strong_errors_decrease_with_step():
    spec = smdp.physics.toy.AffineDrift1D(lam=0.5, g=0.5).spec()
    errors = smdp.sde.simulation.strong_convergence_errors(spec, [0.1, 0.05, 0.025], n_paths=500, refine=4)
    assert errors[0] > errors[1] > errors[2]


def test_strong_errors_need_exact_solution(toy_spec):
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        smdp.sde.simulation.strong_convergence_errors(toy_spec, [0.1, 0.05, 0.025])


def test_container_roundtrip(tmp_path, toy_spec, small_grid):
    ts = smdp.sde.simulation.generate_dataset(toy_spec, smdp.physics.toy.binary_initial_sampler, 8, small_grid, 5)
    path = str(tmp_path / "data" / "dataset.smdp")
    smdp.sde.storage.write_trajectories(path, ts)

    back = smdp.sde.storage.read_trajectories(path)
    np.testing.assert_array_equal(back.states, ts.states)
    assert back.grid == ts.grid
    assert back.seed == 5
    assert back.spec_name == "toy-sde"
    assert back.spec_params == {"lambda1": 7.0, "lambda2": 0.03}


def test_container_without_sidecar(tmp_path, small_grid):
    path = str(tmp_path / "states.smdp")
    smdp.sde.storage.write_states(path, np.ones((3, 51, 2)), small_grid, seed=1)
    back = smdp.sde.storage.read_trajectories(path)
    assert back.states.shape == (3, 51, 2)
    assert back.spec_name == ""


def test_container_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.smdp"
    path.write_bytes(b"NOPE" + bytes(60))
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        smdp.sde.storage.read_trajectories(str(path))


def test_container_rejects_truncated_data(tmp_path, small_grid):
    path = str(tmp_path / "states.smdp")
    smdp.sde.storage.write_states(path, np.ones((3, 51, 1)), small_grid, seed=1)
    with open(path, "rb") as f:
        raw = f.read()
    with open(path, "wb") as f:
        f.write(raw[:-8])
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        smdp.sde.storage.read_trajectories(path)
