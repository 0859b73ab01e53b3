"""
This submodule runs a :py:class:`smdp.training.plan.TrainPlan`: it walks
the phases in order, builds the batches of each epoch, evaluates the loss
and its parameter gradient (optionally sharded over worker threads), clips
the gradient and applies Adam. The loss history is kept per epoch next to
the irreducible loss floor.
"""

import math
import typing

import loguru
import numpy as np
import tqdm

import smdp.autodiff.tensor
import smdp.exceptions
import smdp.helpers.parallel
import smdp.metrics.reports
import smdp.models.base
import smdp.sde.simulation
import smdp.training.losses
import smdp.training.optimizer
import smdp.training.plan


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "ABORT_LOSS",
    "HISTORY_FIELDS",

    "TrainingResult",
    "loss_and_gradient",
    "run_training",
    "write_history",
]


ABORT_LOSS = 1e8
"""Training aborts once a batch loss exceeds this value (or is NaN)."""

HISTORY_FIELDS: typing.List[str] = ["epoch", "phase", "S", "lr", "train_loss", "loss_floor"]


logger = loguru.logger

Batch = typing.Union[smdp.training.plan.WindowBatch, smdp.training.plan.StateBatch]


class TrainingResult(typing.NamedTuple):
    model: smdp.models.base.ScoreModel
    history: typing.List[typing.Dict[str, typing.Any]]
    optimizer: smdp.training.optimizer.AdamState

    @property
    def final_loss(self) -> float:
        return self.history[-1]["train_loss"] if self.history else float("nan")


def _batch_loss(
        plan: smdp.training.plan.TrainPlan,
        model: smdp.models.base.ScoreModel,
        spec: smdp.sde.simulation.SdeSpec,
        batch: Batch,
        rng: np.random.Generator,
) -> smdp.autodiff.tensor.Tensor:
    kind = plan.loss

    if kind in (smdp.training.plan.LOSS_ONE_STEP, smdp.training.plan.LOSS_MULTI_STEP):
        return smdp.training.losses.multi_step_loss(model, spec, batch)

    if kind == smdp.training.plan.LOSS_ISM:
        return smdp.training.losses.ism_loss(model, batch.states, batch.times)

    if kind == smdp.training.plan.LOSS_SSM_VR:
        return smdp.training.losses.ssm_vr_loss(
            model, batch.states, batch.times, rng=rng, n_projections=plan.n_projections)

    if kind == smdp.training.plan.LOSS_DSM:
        dt = batch.steps[:, 0]
        if not np.allclose(dt, dt[0]):
            raise smdp.exceptions.SmdpConfigError("the denoising loss needs a regular time grid (disable jitter)")
        dt = float(dt[0])
        sigma = plan.dsm_sigma if plan.dsm_sigma is not None else math.sqrt(dt)
        return smdp.training.losses.denoising_sm_loss(
            model, spec,
            x_prev=batch.states[:, 0],
            x_next=batch.states[:, 1],
            t_prev=batch.times[:, 0],
            dt=dt,
            g_infer=sigma / math.sqrt(dt),
            z=rng.standard_normal(batch.states[:, 1].shape),
        )

    raise smdp.exceptions.SmdpConfigError("unknown loss '{}'".format(kind))


def _shard(batch: Batch, index: slice) -> Batch:
    return type(batch)(*[field[index] for field in batch])


def loss_and_gradient(
        plan: smdp.training.plan.TrainPlan,
        model: smdp.models.base.ScoreModel,
        spec: smdp.sde.simulation.SdeSpec,
        batch: Batch,
        rng: np.random.Generator,
        workers: int = 1,
) -> typing.Tuple[float, np.ndarray]:
    """
    Returns the batch loss and its flat parameter gradient. With several
    workers the batch is split into fixed contiguous shards, each
    evaluated under its own tape, and the shard results are combined in
    shard order with weights proportional to the shard sizes.
    """
    size = batch.states.shape[0]
    shards = smdp.helpers.parallel.partition(size, workers)
    # one stream per shard, drawn up front so results do not depend on scheduling
    shard_rngs = [np.random.default_rng(seed) for seed in rng.integers(0, 2 ** 63, size=len(shards))]

    def _evaluate(item: typing.Tuple[slice, np.random.Generator]) -> typing.Tuple[float, np.ndarray]:
        index, shard_rng = item
        with smdp.autodiff.tensor.Tape() as tape:
            tape.watch(*model.parameters())
            loss = _batch_loss(plan, model, spec, _shard(batch, index), shard_rng)
        return loss.item(), smdp.models.base.parameter_gradient(model, tape, loss)

    results = smdp.helpers.parallel.parallel_map(_evaluate, list(zip(shards, shard_rngs)), workers=workers)

    loss = 0.0
    grads = np.zeros(model.parameter_count)
    for (index, (shard_loss, shard_grads)) in zip(shards, results):
        weight = (index.stop - index.start) / size
        loss += weight * shard_loss
        grads = grads + weight * shard_grads
    return loss, grads


def _batches(
        plan: smdp.training.plan.TrainPlan,
        phase: smdp.training.plan.Phase,
        window: int,
        dataset: smdp.sde.simulation.TrajectorySet,
        rng: np.random.Generator,
) -> typing.Iterator[Batch]:
    if plan.loss in (smdp.training.plan.LOSS_ISM, smdp.training.plan.LOSS_SSM_VR):
        return smdp.training.plan.iterate_states(dataset, phase.stride, phase.batch_size, rng)
    return smdp.training.plan.iterate_windows(
        dataset, window, phase.stride, phase.batch_size, rng, jitter=plan.jitter)


def run_training(
        plan: smdp.training.plan.TrainPlan,
        model: smdp.models.base.ScoreModel,
        spec: smdp.sde.simulation.SdeSpec,
        dataset: smdp.sde.simulation.TrajectorySet,
        workers: int = 1,
        progress: bool = False,
) -> TrainingResult:
    """
    Trains :py:data:`model` in place according to :py:data:`plan` and
    returns it together with the per-epoch loss history. The run is a pure
    function of the plan (its seed included), the initial model and the
    dataset, for a fixed number of workers.

    :raises SmdpConfigError: if the dataset does not match the system
    :raises TrainingAbortedError: if a loss exceeds :py:data:`ABORT_LOSS`,
        is NaN, or a rollout diverges; the phase and epoch are attached
    """
    plan.validate()
    if dataset.dim != spec.dim:
        raise smdp.exceptions.SmdpConfigError(
            "dataset dimension {} does not match system '{}' (D={})".format(dataset.dim, spec.name, spec.dim))
    if model.dim != spec.dim:
        raise smdp.exceptions.SmdpConfigError(
            "model dimension {} does not match system '{}' (D={})".format(model.dim, spec.name, spec.dim))

    if not plan.reverse_physics:
        spec = spec.without_reverse_physics()

    rng = np.random.default_rng(np.random.SeedSequence([int(plan.seed), 0x7a1]))
    state = smdp.training.optimizer.AdamState.zeros(model.parameter_count)
    history: typing.List[typing.Dict[str, typing.Any]] = []
    global_epoch = 0

    logger.info(
        "Training {} model ({} parameters) with {} loss over {} phases, {} epochs.",
        model.kind, model.parameter_count, plan.loss, len(plan.phases), plan.total_epochs,
    )

    bar = tqdm.tqdm(total=plan.total_epochs, desc="train", unit="epoch", disable=not progress)

    for (phase_index, phase) in enumerate(plan.phases):
        logger.info(
            "Phase {}: {} epochs, lr={}, batch={}, stride={}, S={}..{}.",
            phase_index, phase.epochs, phase.lr, phase.batch_size, phase.stride, phase.window, phase.s_max,
        )
        dt = dataset.grid.dt * phase.stride

        for epoch in range(int(phase.epochs)):
            window = phase.window_at(epoch)
            lr = phase.lr_at(epoch)
            if epoch > 0 and window != phase.window_at(epoch - 1):
                logger.debug("Window size grows to S={} at epoch {}.", window, global_epoch)

            losses = []
            weights = []
            for batch in _batches(plan, phase, window, dataset, rng):
                try:
                    loss, grads = loss_and_gradient(plan, model, spec, batch, rng, workers=workers)
                except (smdp.exceptions.DivergenceError, smdp.exceptions.NonFiniteError) as exc:
                    logger.error("Training aborted in phase {} epoch {}: {}", phase_index, epoch, exc.message)
                    bar.close()
                    raise smdp.exceptions.TrainingAbortedError(
                        "training aborted in phase {} epoch {}: {}".format(phase_index, epoch, exc.message),
                        phase=phase_index, epoch=epoch, loss=None,
                    )

                if not np.isfinite(loss) or loss > ABORT_LOSS:
                    logger.error("Training aborted in phase {} epoch {}: loss {}", phase_index, epoch, loss)
                    bar.close()
                    raise smdp.exceptions.TrainingAbortedError(
                        "loss {} in phase {} epoch {} exceeds {:g}".format(loss, phase_index, epoch, ABORT_LOSS),
                        phase=phase_index, epoch=epoch, loss=loss,
                    )

                grads = smdp.training.optimizer.clip_by_global_norm(grads, plan.clip_norm)
                params, state = smdp.training.optimizer.adam_step(state, model.flat_parameters(), grads, lr)
                model.load_flat_parameters(params)
                model.step += 1

                losses.append(loss)
                weights.append(batch.states.shape[0])

            history.append({
                "epoch": global_epoch,
                "phase": phase_index,
                "S": window,
                "lr": lr,
                "train_loss": float(np.average(losses, weights=weights)) if losses else float("nan"),
                "loss_floor": smdp.training.losses.loss_floor(spec, dt, window=window),
            })
            global_epoch += 1
            bar.update(1)
            bar.set_postfix(loss="{:.4g}".format(history[-1]["train_loss"]), S=window)

    bar.close()
    logger.info("Training done after {} optimizer steps; final loss {:.6g}.", model.step, history[-1]["train_loss"]
                if history else float("nan"))

    return TrainingResult(model=model, history=history, optimizer=state)


def write_history(path: str, history: typing.List[typing.Dict[str, typing.Any]]) -> str:
    """Writes the per-epoch loss history as CSV with the columns of :py:data:`HISTORY_FIELDS`."""
    return smdp.metrics.reports.write_csv(path, history, fields=HISTORY_FIELDS)
