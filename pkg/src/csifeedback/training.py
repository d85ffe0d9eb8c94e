"""Mini-batch training loop shared by every trainable pipeline.

Everything here is single-threaded and deterministic for a fixed seed:
the shuffle stream is the only randomness, parameter initialization
happens at build time, and numpy kernels are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .nn import AdamState, ModelGraph, TrainSchedule, adam_step, mse_loss, plateau_lr_update


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    lr: float


def fit(
    graph: ModelGraph,
    inputs,
    labels,
    schedule: TrainSchedule,
    *,
    seed,
    loss_fn=None,
    epoch_callback=None,
    recalibrate=True,
) -> list[EpochRecord]:
    """Train ``graph`` to map inputs -> labels with Adam + plateau decay.

    ``loss_fn(pred, label) -> (value, grad)`` defaults to plain MSE.
    ``epoch_callback(epoch, graph, loss)`` runs after each epoch (used
    for validation logging). Returns one record per epoch.

    After the last epoch the batchnorm running statistics are
    recalibrated with one stat-only pass over the training inputs
    (``recalibrate=False`` skips it): the exponential averages gathered
    during training lag the final weights, and through a deep stack
    that staleness compounds into a visible train/inference gap.
    """
    inputs = np.asarray(inputs, dtype=graph.dtype)
    labels = np.asarray(labels, dtype=graph.dtype)
    if inputs.shape[0] != labels.shape[0]:
        raise ValueError("inputs and labels disagree on sample count")
    loss_fn = loss_fn or mse_loss
    n = inputs.shape[0]
    rng = np.random.default_rng(seed)
    state = AdamState.for_graph(graph, learning_rate=schedule.lr)
    history: list[EpochRecord] = []
    for epoch in range(schedule.epochs):
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, schedule.batch_size):
            idx = order[start : start + schedule.batch_size]
            xb, yb = inputs[idx], labels[idx]
            values, caches = graph.forward_with_cache(xb, mode="train")
            out_nodes = graph.output_nodes()
            pred = values[out_nodes[-1]]
            value, grad = loss_fn(pred, yb)
            if not math.isfinite(value):
                raise NumericError(
                    f"loss diverged at epoch {epoch} step {start // schedule.batch_size}"
                )
            grads_out = [None] * (len(out_nodes) - 1) + [grad.astype(graph.dtype, copy=False)]
            param_grads, _ = graph.backward(xb, values, caches, grads_out)
            adam_step(graph, param_grads, state, learning_rate=schedule.lr)
            total += value * len(idx)
            seen += len(idx)
        epoch_loss = total / seen
        plateau_lr_update(schedule, epoch_loss)
        history.append(EpochRecord(epoch, epoch_loss, schedule.lr))
        if epoch_callback is not None:
            epoch_callback(epoch, graph, epoch_loss)
    if recalibrate:
        recalibrate_batchnorm(graph, inputs, schedule.batch_size)
    graph.meta["trained"] = True
    return history


def recalibrate_batchnorm(graph: ModelGraph, inputs, batch_size=200):
    """Recompute running statistics under the current weights.

    Resets every batchnorm's moving averages and accumulates them fresh
    over one deterministic pass (the warmup counter makes the result the
    plain mean of the per-batch statistics).
    """
    has_bn = False
    for spec, params in zip(graph.layers, graph.params):
        if spec.kind == "batchnorm":
            has_bn = True
            spec.bn_updates = 0
            params["running_mean"][...] = 0.0
            params["running_var"][...] = 1.0
    if not has_bn:
        return
    inputs = np.asarray(inputs, dtype=graph.dtype)
    for start in range(0, inputs.shape[0], batch_size):
        batch = inputs[start : start + batch_size]
        if batch.shape[0] < 2:
            continue
        graph.forward(batch, mode="train")


def forward_batched(graph: ModelGraph, inputs, batch_size=200, mode="infer"):
    """Inference in slices to bound peak memory; concatenates outputs."""
    inputs = np.asarray(inputs, dtype=graph.dtype)
    nodes = graph.output_nodes()
    parts = [[] for _ in nodes]
    for start in range(0, inputs.shape[0], batch_size):
        out = graph.forward(inputs[start : start + batch_size], mode=mode)
        if len(nodes) == 1:
            parts[0].append(out)
        else:
            for slot, o in zip(parts, out):
                slot.append(o)
    stacked = [np.concatenate(p, axis=0) for p in parts]
    return stacked[0] if len(nodes) == 1 else stacked
