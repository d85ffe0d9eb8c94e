"""Adam optimizer and the plateau learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError
from .graph import GRAD_PARAMS, ModelGraph


@dataclass
class AdamState:
    """Per-parameter moment accumulators plus the shared step counter."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_graph(cls, graph: ModelGraph, learning_rate=1e-3, **kw):
        state = cls(learning_rate=learning_rate, **kw)
        for spec, params in zip(graph.layers, graph.params):
            slot_m, slot_v = {}, {}
            for key in GRAD_PARAMS.get(spec.kind, ()):
                slot_m[key] = np.zeros_like(params[key])
                slot_v[key] = np.zeros_like(params[key])
            state.m.append(slot_m)
            state.v.append(slot_v)
        return state


def adam_step(graph: ModelGraph, grads, state: AdamState, learning_rate=None):
    """One Adam update with bias correction; frozen layers are untouched.

    ``grads`` aligns with graph.params (None entries are skipped). The
    update is applied in place so graphs sharing parameter storage see it.
    """
    lr = state.learning_rate if learning_rate is None else learning_rate
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for i, g in enumerate(grads):
        if g is None or not graph.trainable[i]:
            continue
        spec = graph.layers[i]
        for key in GRAD_PARAMS.get(spec.kind, ()):
            gk = g[key]
            if not np.isfinite(gk).all():
                raise NumericError(
                    f"non-finite gradient for layer {spec.name!r} param {key!r}"
                )
            m = state.m[i][key]
            v = state.v[i][key]
            m *= state.beta1
            m += (1.0 - state.beta1) * gk
            v *= state.beta2
            v += (1.0 - state.beta2) * (gk * gk)
            update = (lr / c1) * m / (np.sqrt(v / c2) + state.eps)
            graph.params[i][key] -= update.astype(graph.params[i][key].dtype, copy=False)
    return state


@dataclass
class TrainSchedule:
    """Batch/epoch budget plus reduce-on-plateau learning-rate state.

    The learning rate starts at ``initial_lr`` and halves (well,
    multiplies by ``decay_factor``) whenever the best loss seen so far
    has not improved for ``patience`` consecutive epochs.
    """

    batch_size: int = 200
    epochs: int = 100
    initial_lr: float = 1e-3
    patience: int = 20
    decay_factor: float = 0.5
    best_loss: float = math.inf
    stall: int = 0
    decays: int = 0
    loss_history: list = field(default_factory=list)

    @property
    def lr(self) -> float:
        return self.initial_lr * self.decay_factor ** self.decays


def plateau_lr_update(schedule: TrainSchedule, epoch_loss: float) -> TrainSchedule:
    """Record one epoch loss and decay the rate if improvement stalled."""
    if not math.isfinite(epoch_loss):
        raise NumericError(f"non-finite epoch loss {epoch_loss}")
    schedule.loss_history.append(float(epoch_loss))
    if epoch_loss < schedule.best_loss:
        schedule.best_loss = float(epoch_loss)
        schedule.stall = 0
    else:
        schedule.stall += 1
        if schedule.stall >= schedule.patience:
            schedule.decays += 1
            schedule.stall = 0
    return schedule
