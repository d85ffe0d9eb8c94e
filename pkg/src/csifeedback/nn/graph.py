"""Layered model graph with forward evaluation and reverse-mode gradients.

A ModelGraph is an ordered list of LayerSpec nodes; each node consumes the
outputs of earlier nodes (index -1 is the graph input), so the list order
is already a topological order. Parameters live in per-layer dicts of
numpy arrays, and a per-layer trainable flag controls whether gradients
are produced for them.
"""

from __future__ import annotations

import hashlib

import numpy as np

from ..errors import ConfigurationError
from . import layers as L

# parameter tensor order per layer kind (serialization and Adam rely on it)
PARAM_ORDER = {
    "conv2d": ("kernel", "bias"),
    "dense": ("weight", "bias"),
    "batchnorm": ("gamma", "beta", "running_mean", "running_var"),
}

# batchnorm running statistics are state, not gradient-trained weights
GRAD_PARAMS = {
    "conv2d": ("kernel", "bias"),
    "dense": ("weight", "bias"),
    "batchnorm": ("gamma", "beta"),
}


class ModelGraph:
    """Layer list + parameters + trainable mask + output node indices."""

    def __init__(self, name="", dtype=np.float32):
        self.name = name
        self.dtype = np.dtype(dtype)
        self.layers: list[L.LayerSpec] = []
        self.params: list[dict] = []
        self.trainable: list[bool] = []
        self.outputs: list[int] = []
        self.meta: dict = {}

    # ------------------------------------------------------------------
    # construction

    def add(self, spec: L.LayerSpec, params=None, trainable=True) -> int:
        spec.validate()
        idx = len(self.layers)
        if not spec.inputs:
            spec.inputs = (idx - 1,)
        for j in spec.inputs:
            if not (-1 <= j < idx):
                raise ConfigurationError(
                    f"layer {spec.name!r} references node {j}, not yet defined"
                )
        params = params or {}
        for key in params:
            params[key] = np.ascontiguousarray(params[key], dtype=self.dtype)
        expected = PARAM_ORDER.get(spec.kind, ())
        if tuple(params.keys()) != expected:
            if expected or params:
                raise ConfigurationError(
                    f"layer {spec.name!r} ({spec.kind}) expects params {expected}, "
                    f"got {tuple(params.keys())}"
                )
        self.layers.append(spec)
        self.params.append(params)
        self.trainable.append(bool(trainable))
        return idx

    def append_graph(self, other: "ModelGraph", input_node: int) -> list[int]:
        """Splice another graph in, feeding it from ``input_node``.

        Parameter arrays are shared by reference, so updates through the
        combined graph are visible in the source graph. Returns the
        remapped output node indices of the spliced graph.
        """
        if other.dtype != self.dtype:
            raise ConfigurationError(
                f"cannot splice {other.dtype} graph into {self.dtype} graph"
            )
        offset = len(self.layers)
        for spec, params, trainable in zip(other.layers, other.params, other.trainable):
            remapped = tuple(input_node if j == -1 else j + offset for j in spec.inputs)
            clone = L.LayerSpec(**{**spec.__dict__, "inputs": remapped})
            self.layers.append(clone)
            self.params.append(params)  # shared storage, deliberate
            self.trainable.append(trainable)
        return [o + offset for o in other.output_nodes()]

    def output_nodes(self) -> list[int]:
        if self.outputs:
            return list(self.outputs)
        return [len(self.layers) - 1]

    def freeze(self):
        self.trainable = [False] * len(self.layers)
        return self

    def is_frozen(self) -> bool:
        return not any(self.trainable)

    def param_digest(self) -> str:
        """SHA-256 over all parameter bytes in layer/tensor order."""
        h = hashlib.sha256()
        for spec, params in zip(self.layers, self.params):
            for key in PARAM_ORDER.get(spec.kind, ()):
                h.update(np.ascontiguousarray(params[key]).tobytes())
        return h.hexdigest()

    def num_scalars(self) -> int:
        return sum(
            int(params[key].size)
            for spec, params in zip(self.layers, self.params)
            for key in PARAM_ORDER.get(spec.kind, ())
        )

    # ------------------------------------------------------------------
    # execution

    def forward(self, x, mode="infer", substitutions=None):
        """Evaluate the graph; returns one array or a list (multi-output).

        ``substitutions`` maps node index -> value, forcing those node
        outputs instead of computing them (used to probe structural
        dependencies between taps).
        """
        outs, _ = self._run(x, mode, substitutions)
        nodes = self.output_nodes()
        if len(nodes) == 1:
            return outs[nodes[0]]
        return [outs[i] for i in nodes]

    def forward_with_cache(self, x, mode="train"):
        return self._run(x, mode, None, keep_cache=True)

    def _run(self, x, mode, substitutions, keep_cache=False):
        x = np.asarray(x, dtype=self.dtype)
        values = [None] * len(self.layers)
        caches = [None] * len(self.layers) if keep_cache else None

        def val(j):
            return x if j == -1 else values[j]

        for i, spec in enumerate(self.layers):
            if substitutions and i in substitutions:
                values[i] = np.asarray(substitutions[i], dtype=self.dtype)
                continue
            p = self.params[i]
            ins = [val(j) for j in spec.inputs]
            kind = spec.kind
            if kind == "conv2d":
                out = L.conv2d_forward(ins[0], p["kernel"], p["bias"])
                cache = ins[0]
            elif kind == "dense":
                out = L.dense_forward(ins[0], p["weight"], p["bias"])
                cache = ins[0]
            elif kind == "batchnorm":
                out, cache = L.batchnorm_forward(
                    ins[0], p, mode, spec.bn_eps, spec.bn_momentum,
                    updates=spec.bn_updates,
                )
                if mode == "train":
                    spec.bn_updates += 1
            elif kind == "activation":
                out, cache = L.activation_forward(ins[0], spec.activation, spec.alpha)
            elif kind == "reshape":
                out = ins[0].reshape((ins[0].shape[0],) + tuple(spec.target_shape))
                cache = ins[0].shape
            elif kind == "concat":
                out = np.concatenate(ins, axis=-1)
                cache = [a.shape[-1] for a in ins]
            elif kind == "slice":
                if spec.slice_stop > ins[0].shape[-1]:
                    raise ConfigurationError(
                        f"slice {spec.name!r}: stop {spec.slice_stop} exceeds "
                        f"width {ins[0].shape[-1]}"
                    )
                out = ins[0][..., spec.slice_start : spec.slice_stop]
                cache = ins[0].shape
            elif kind == "residual_add":
                if ins[0].shape != ins[1].shape:
                    raise ConfigurationError(
                        f"residual_add {spec.name!r}: shape mismatch "
                        f"{ins[0].shape} vs {ins[1].shape}"
                    )
                out = ins[0] + ins[1]
                cache = None
            else:  # pragma: no cover - validated at add()
                raise ConfigurationError(f"unknown layer kind {kind!r}")
            values[i] = out
            if keep_cache:
                caches[i] = cache
        return values, caches

    def backward(self, x, values, caches, grad_outputs, want_input_grad=False):
        """Chain-rule gradients for every trainable parameter.

        ``grad_outputs`` aligns with output_nodes(); entries may be None.
        Returns (param_grads, input_grad); param_grads[i] is None for
        frozen or parameterless layers.
        """
        x = np.asarray(x, dtype=self.dtype)
        node_grads = [None] * len(self.layers)
        input_grad = [None]
        nodes = self.output_nodes()
        if len(grad_outputs) != len(nodes):
            raise ConfigurationError(
                f"expected {len(nodes)} output grads, got {len(grad_outputs)}"
            )
        for node, g in zip(nodes, grad_outputs):
            if g is not None:
                _accumulate(node_grads, node, np.asarray(g, dtype=self.dtype))

        param_grads = [None] * len(self.layers)

        def send(j, g):
            if j == -1:
                if want_input_grad:
                    if input_grad[0] is None:
                        input_grad[0] = g.copy()
                    else:
                        input_grad[0] += g
            else:
                _accumulate(node_grads, j, g)

        for i in range(len(self.layers) - 1, -1, -1):
            g = node_grads[i]
            if g is None:
                continue
            spec = self.layers[i]
            p = self.params[i]
            need_pg = self.trainable[i] and spec.kind in GRAD_PARAMS
            need_ig = want_input_grad or any(j >= 0 for j in spec.inputs)
            kind = spec.kind
            if kind == "conv2d":
                gx, gk, gb = L.conv2d_backward(caches[i], p["kernel"], g, need_ig)
                if need_pg:
                    param_grads[i] = {"kernel": gk, "bias": gb}
                if need_ig:
                    send(spec.inputs[0], gx)
            elif kind == "dense":
                gx, gw, gb = L.dense_backward(caches[i], p["weight"], g, need_ig)
                if need_pg:
                    param_grads[i] = {"weight": gw, "bias": gb}
                if need_ig:
                    send(spec.inputs[0], gx)
            elif kind == "batchnorm":
                gx, ggamma, gbeta = L.batchnorm_backward(caches[i], p, g)
                if need_pg:
                    param_grads[i] = {"gamma": ggamma, "beta": gbeta}
                if need_ig:
                    send(spec.inputs[0], gx)
            elif kind == "activation":
                if need_ig:
                    send(
                        spec.inputs[0],
                        L.activation_backward(caches[i], spec.activation, spec.alpha, g),
                    )
            elif kind == "reshape":
                if need_ig:
                    send(spec.inputs[0], g.reshape(caches[i]))
            elif kind == "concat":
                if need_ig:
                    widths = caches[i]
                    off = 0
                    for j, wdt in zip(spec.inputs, widths):
                        send(j, g[..., off : off + wdt])
                        off += wdt
            elif kind == "slice":
                if need_ig:
                    gx = np.zeros(caches[i], dtype=self.dtype)
                    gx[..., spec.slice_start : spec.slice_stop] = g
                    send(spec.inputs[0], gx)
            elif kind == "residual_add":
                if need_ig:
                    # the sum rule: both branches receive the gradient unchanged
                    send(spec.inputs[0], g)
                    send(spec.inputs[1], g.copy())
            node_grads[i] = None  # free as we go
        return param_grads, input_grad[0]


def _accumulate(slot_list, idx, g):
    if slot_list[idx] is None:
        slot_list[idx] = g
    else:
        slot_list[idx] = slot_list[idx] + g
