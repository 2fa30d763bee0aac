"""Block coordinate descent between network weights and prior precisions.

One outer iteration first runs a block of minibatch SGD epochs on the
network (precisions frozen, the prior's trace-term gradient added to the
regularized layer at every step), then refreshes the precision pair with
two exact closed-form solves:

    omega_r <- inv_threshold(W @ omega_c @ W.T, d)   using the old omega_c
    omega_c <- inv_threshold(W.T @ omega_r @ W, p)   using the new omega_r

Each solve minimizes its subproblem exactly, so the precision step can
never increase the full objective.  With bounds pinned at u = v = 1 the
precisions stay at the identity and the whole procedure degenerates to SGD
with weight decay 2*lambda.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import net as net_mod
from .data import Dataset, DatasetKind, batches
from .diagnostics import explained_variance
from .errors import Diverged
from .net import Batch, Network
from .prior import PrecisionPair, regularizer_grad, regularizer_value
from .spectral import SpectralBounds, SymMatrix, inv_threshold

__all__ = [
    "AdaRegState",
    "BcdSchedule",
    "EpochRecord",
    "MetricLog",
    "full_objective",
    "update_precisions",
    "train_block",
    "run_adareg",
    "evaluate",
]

EVAL_CHUNK = 4096


@dataclass(frozen=True)
class AdaRegState:
    """Network plus current precision pair, lambda, and outer-loop counter."""

    net: Network
    precisions: PrecisionPair
    lam: float
    outer_iter: int = 0

    def __post_init__(self):
        w = self.net.regularized_weight
        if (self.precisions.p, self.precisions.d) != w.shape:
            raise ValueError(
                f"precision dims {(self.precisions.p, self.precisions.d)} do "
                f"not match regularized weight {w.shape}"
            )
        if self.lam < 0.0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")

    @classmethod
    def initial(cls, network: Network, bounds: SpectralBounds, lam: float) -> "AdaRegState":
        p, d = network.regularized_weight.shape
        return cls(network, PrecisionPair.identity(p, d, bounds), lam, 0)


@dataclass(frozen=True)
class BcdSchedule:
    """Outer-loop count, epochs per block, batch size, and learning rate.

    ``learning_rate`` may be zero for degenerate no-op schedules used in
    tests; everything else must be positive.
    """

    outer_loops: int
    epochs_per_block: int
    batch_size: int
    learning_rate: float

    def __post_init__(self):
        if self.outer_loops < 1 or self.batch_size < 1:
            raise ValueError("outer_loops and batch_size must be positive")
        if self.epochs_per_block < 0:
            raise ValueError("epochs_per_block must be >= 0")
        if self.learning_rate < 0.0:
            raise ValueError("learning_rate must be >= 0")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    outer_iter: int
    train_loss: float
    train_objective: float  # train loss plus the prior penalty
    test_loss: float
    train_metric: float
    test_metric: float


@dataclass
class MetricLog:
    """Per-epoch metrics plus end-of-run diagnostics.

    ``wall_seconds`` is measured, not derived from the config, so it never
    enters serialized metric files (those must be byte-reproducible).
    """

    records: list[EpochRecord] = field(default_factory=list)
    spectrum_per_layer: list[dict] = field(default_factory=list)
    correlation: np.ndarray | None = None
    per_task_explained_variance: np.ndarray | None = None
    wall_seconds: float = 0.0


def full_objective(state: AdaRegState, dataset: Dataset) -> float:
    """Dataset loss plus the prior penalty on the regularized weight."""
    loss = _dataset_loss(state.net, dataset)
    if state.lam == 0.0:
        return loss
    return loss + regularizer_value(
        state.net.regularized_weight, state.precisions, state.lam
    )


def _dataset_loss(network: Network, dataset: Dataset) -> float:
    """Mean loss over a dataset, evaluated in bounded-size chunks."""
    total = 0.0
    for lo in range(0, dataset.n, EVAL_CHUNK):
        batch = Batch(
            dataset.inputs[lo : lo + EVAL_CHUNK],
            dataset.targets[lo : lo + EVAL_CHUNK],
        )
        total += net_mod.loss_value(network, batch) * batch.size
    return total / dataset.n


def evaluate(network: Network, dataset: Dataset) -> tuple[float, float]:
    """(mean loss, headline metric): accuracy for classification, mean
    explained variance across tasks for regression."""
    loss = _dataset_loss(network, dataset)
    if dataset.kind == DatasetKind.CLASSIFICATION:
        hits = 0.0
        for lo in range(0, dataset.n, EVAL_CHUNK):
            batch = Batch(
                dataset.inputs[lo : lo + EVAL_CHUNK],
                dataset.targets[lo : lo + EVAL_CHUNK],
            )
            hits += net_mod.accuracy(network, batch) * batch.size
        return loss, hits / dataset.n
    preds = predict(network, dataset)
    return loss, float(np.mean(explained_variance(preds, dataset.targets)))


def predict(network: Network, dataset: Dataset) -> np.ndarray:
    chunks = []
    for lo in range(0, dataset.n, EVAL_CHUNK):
        out, _ = net_mod.forward(network, dataset.inputs[lo : lo + EVAL_CHUNK])
        chunks.append(out)
    return np.concatenate(chunks, axis=0)


def update_precisions(state: AdaRegState) -> AdaRegState:
    """Closed-form refresh of both precisions, in the order row then column.

    The row solve uses the stale column precision; the column solve uses the
    fresh row precision.  Both are exact minimizers of their subproblems, so
    the full objective cannot increase.
    """
    w = state.net.regularized_weight
    bounds = state.precisions.bounds
    d = w.shape[1]
    p = w.shape[0]
    delta_r = SymMatrix(w @ state.precisions.omega_c.entries @ w.T)
    omega_r = inv_threshold(delta_r, d, bounds)
    delta_c = SymMatrix(w.T @ omega_r.entries @ w)
    omega_c = inv_threshold(delta_c, p, bounds)
    return replace(
        state,
        precisions=PrecisionPair(omega_r, omega_c, bounds),
        outer_iter=state.outer_iter + 1,
    )


def train_block(
    state: AdaRegState,
    schedule: BcdSchedule,
    dataset: Dataset,
    seed,
    weight_decay: float = 0.0,
    dropout_rate: float = 0.0,
    epoch_callback=None,
) -> AdaRegState:
    """One SGD block: ``epochs_per_block`` epochs with precisions frozen.

    The prior gradient 2*lambda * O_r W O_c is added to the regularized
    layer at every step (it is part of the block's objective, not a
    boundary correction).  Batch order and dropout masks derive from
    ``seed``, the outer iteration, and the epoch index, so trajectories are
    reproducible.  Raises Diverged on a non-finite loss.
    """
    network = state.net
    for epoch in range(schedule.epochs_per_block):
        shuffle_seed = _derived_seed(seed, state.outer_iter, epoch, 0)
        dropout_rng = (
            np.random.default_rng(_derived_seed(seed, state.outer_iter, epoch, 1))
            if dropout_rate > 0.0
            else None
        )
        for batch in batches(dataset, schedule.batch_size, shuffle_seed):
            grads = net_mod.backward(network, batch, dropout_rate, dropout_rng)
            extra = None
            if state.lam > 0.0:
                extra = regularizer_grad(
                    network.regularized_weight, state.precisions, state.lam
                )
            network = net_mod.sgd_step(
                network,
                grads,
                schedule.learning_rate,
                weight_decay,
                extra,
            )
        if epoch_callback is not None:
            epoch_callback(network, epoch)
    return replace(state, net=network)


def _derived_seed(seed, outer_iter: int, epoch: int, stream: int):
    return [int(seed), int(outer_iter), int(epoch), int(stream)]


def run_adareg(
    network: Network,
    schedule: BcdSchedule,
    dataset: Dataset,
    bounds: SpectralBounds,
    lam: float,
    seed,
    test_dataset: Dataset | None = None,
    weight_decay: float = 0.0,
    dropout_rate: float = 0.0,
) -> tuple[AdaRegState, MetricLog]:
    """Alternate SGD blocks with precision refreshes for ``outer_loops``
    rounds, starting from identity precisions.

    Per-epoch logging records train/test loss and metric plus the full
    training objective (loss with the prior penalty, evaluated against the
    precisions the block trained under); test columns repeat the train
    values when no test set is given.  When ``lam`` is zero the prior is
    inert and the precision refresh is skipped: the solve would not affect
    the network or the objective.
    """
    state = AdaRegState.initial(network, bounds, lam)
    log = MetricLog()
    epoch_counter = 0

    def record(current: Network, outer: int, precisions: PrecisionPair):
        nonlocal epoch_counter
        train_loss, train_metric = evaluate(current, dataset)
        objective = train_loss
        if lam > 0.0:
            objective += regularizer_value(
                current.regularized_weight, precisions, lam
            )
        if test_dataset is not None:
            test_loss, test_metric = evaluate(current, test_dataset)
        else:
            test_loss, test_metric = train_loss, train_metric
        if not (np.isfinite(train_loss) and np.isfinite(test_loss)):
            raise Diverged(f"loss became non-finite at epoch {epoch_counter}")
        log.records.append(
            EpochRecord(
                epoch_counter,
                outer,
                train_loss,
                objective,
                test_loss,
                train_metric,
                test_metric,
            )
        )
        epoch_counter += 1

    for _ in range(schedule.outer_loops):
        state = train_block(
            state,
            schedule,
            dataset,
            seed,
            weight_decay,
            dropout_rate,
            epoch_callback=lambda n, _e, o=state.outer_iter, pp=state.precisions: record(
                n, o, pp
            ),
        )
        if lam > 0.0:
            state = update_precisions(state)
        else:
            state = replace(state, outer_iter=state.outer_iter + 1)
    return state, log
