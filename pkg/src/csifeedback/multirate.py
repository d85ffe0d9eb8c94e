"""Series and parallel multiple-rate compression frameworks.

Both share one UE-side encoder across the four compression rates. The
series variant chains dense layers 2048->512->256->128->64 and taps a
codeword after each stage, so higher-rate codewords are functions of the
lower-rate ones. The parallel variant is exactly the rate-4 encoder;
higher-rate codewords are prefixes of its length-512 codeword. Training
concatenates the four decoder outputs channel-wise against a fourfold
repeated label under per-branch loss weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .metrics import nmse_db
from .models import (
    GEOMETRY,
    INIT_STDDEV,
    SUPPORTED_CR,
    _Builder,
    _conv_bn_act,
    build_csinet_plus_decoder,
    build_csinet_plus_encoder,
    codeword_length,
    count_params,
)
from .nn import LayerSpec, ModelGraph, mse_loss, weighted_channel_mse
from .training import fit, forward_batched


@dataclass(frozen=True)
class RateLossWeights:
    c4: float = 30.0
    c8: float = 6.0
    c16: float = 2.0
    c32: float = 1.0

    def __post_init__(self):
        if min(self.c4, self.c8, self.c16, self.c32) <= 0:
            raise ConfigurationError("loss weights must be strictly positive")

    def as_tuple(self):
        return (self.c4, self.c8, self.c16, self.c32)


def build_sm_encoder(*, seed=0, dtype=np.float32, stddev=INIT_STDDEV) -> ModelGraph:
    """Shared conv head + chained dense compression with one tap per rate.

    Each tap is the linear output of its dense stage; the next stage
    consumes the activated tap, so the rate-2k codeword is a
    deterministic function of the rate-k codeword alone.
    """
    b = _Builder("sm_encoder", seed, dtype, stddev)
    p = GEOMETRY.planes
    _conv_bn_act(b, "feat1", 7, p, p, "leaky_relu", inputs=(-1,))
    _conv_bn_act(b, "feat2", 7, p, p, "leaky_relu")
    node = b.reshape("flatten", (GEOMETRY.features,))
    taps = {}
    width_in = GEOMETRY.features
    for cr in SUPPORTED_CR:
        m = codeword_length(cr)
        taps[cr] = b.dense(f"compress_cr{cr}", width_in, m, inputs=(node,))
        if cr != SUPPORTED_CR[-1]:
            node = b.act(f"chain_lrelu_cr{cr}", "leaky_relu", inputs=(taps[cr],))
        width_in = m
    b.g.outputs = [taps[cr] for cr in SUPPORTED_CR]
    b.g.meta.update(kind="encoder", arch="sm", taps={cr: taps[cr] for cr in SUPPORTED_CR})
    return b.g


def build_pm_encoder(*, seed=0, dtype=np.float32, stddev=INIT_STDDEV) -> ModelGraph:
    """The rate-4 encoder with prefix slices exposing the other rates."""
    g = build_csinet_plus_encoder(4, seed=seed, dtype=dtype, stddev=stddev)
    g.name = "pm_encoder"
    base = g.output_nodes()[0]
    taps = {4: base}
    for cr in SUPPORTED_CR[1:]:
        m = codeword_length(cr)
        taps[cr] = g.add(
            LayerSpec("slice", f"prefix_cr{cr}", inputs=(base,),
                      slice_start=0, slice_stop=m)
        )
    g.outputs = [taps[cr] for cr in SUPPORTED_CR]
    g.meta.update(kind="encoder", arch="pm", taps=taps)
    return g


def pm_slice(codeword, cr) -> np.ndarray:
    """First M(cr) elements of a length-512 base codeword."""
    codeword = np.asarray(codeword)
    base = codeword_length(SUPPORTED_CR[0])
    if codeword.shape[-1] != base:
        raise ConfigurationError(
            f"expected base codewords of length {base}, got {codeword.shape[-1]}"
        )
    return codeword[..., : codeword_length(cr)]


def multirate_loss(outputs, label, weights: RateLossWeights) -> float:
    """Weighted sum of per-branch MSEs: c4*L4 + c8*L8 + c16*L16 + c32*L32."""
    if len(outputs) != 4:
        raise ConfigurationError(f"expected 4 branch outputs, got {len(outputs)}")
    total = 0.0
    for out, c in zip(outputs, weights.as_tuple()):
        value, _ = mse_loss(np.asarray(out), np.asarray(label))
        total += c * value
    return total


@dataclass
class MultirateFramework:
    """Combined training graph: shared encoder, four decoders, concat output."""

    kind: str
    graph: ModelGraph
    encoder: ModelGraph  # same parameter storage as the combined graph
    taps: dict
    branch_outputs: dict

    def reconstructions(self, samples, batch_size=200) -> dict:
        """Per-rate reconstructions from the concatenated forward pass."""
        concat = forward_batched(self.graph, samples, batch_size=batch_size)
        planes = GEOMETRY.planes
        return {
            cr: concat[..., i * planes : (i + 1) * planes]
            for i, cr in enumerate(SUPPORTED_CR)
        }


def build_framework(kind, *, seed=0, dtype=np.float32) -> MultirateFramework:
    if kind == "sm":
        encoder = build_sm_encoder(seed=seed, dtype=dtype)
    elif kind == "pm":
        encoder = build_pm_encoder(seed=seed, dtype=dtype)
    else:
        raise ConfigurationError(f"unknown multirate framework {kind!r}")
    graph = ModelGraph(f"{kind}_framework", dtype=dtype)
    tap_nodes = graph.append_graph(encoder, input_node=-1)
    branch_outputs = {}
    for i, (cr, tap) in enumerate(zip(SUPPORTED_CR, tap_nodes)):
        decoder = build_csinet_plus_decoder(cr, seed=seed + 101 + i, dtype=dtype)
        branch_outputs[cr] = graph.append_graph(decoder, input_node=tap)[0]
    graph.outputs = [
        graph.add(
            LayerSpec(
                "concat",
                "branch_concat",
                inputs=tuple(branch_outputs[cr] for cr in SUPPORTED_CR),
            )
        )
    ]
    graph.meta.update(kind="framework", arch=kind)
    return MultirateFramework(
        kind=kind,
        graph=graph,
        encoder=encoder,
        taps=dict(zip(SUPPORTED_CR, tap_nodes)),
        branch_outputs=branch_outputs,
    )


def tile_label(samples) -> np.ndarray:
    """Channel-axis repetition of the target to match the concat output."""
    return np.tile(np.asarray(samples), (1, 1, 1, len(SUPPORTED_CR)))


def train_multirate(
    framework: MultirateFramework,
    samples,
    weights: RateLossWeights,
    schedule,
    *,
    seed=0,
    val_samples=None,
    val_scale=None,
    nmse_callback=None,
):
    """End-to-end joint training of the shared encoder and all decoders.

    If validation samples are given, per-rate NMSE is computed each epoch
    and passed to ``nmse_callback(epoch, {cr: nmse_db})``.
    """
    loss_fn = weighted_channel_mse(weights.as_tuple(), GEOMETRY.planes)
    labels = tile_label(samples)

    callback = None
    if val_samples is not None:
        from .channel import denormalize_sample

        val = np.asarray(val_samples)
        truth = denormalize_sample(val.astype(np.float64), val_scale or 1.0)

        def callback(epoch, graph, loss):
            recon = framework.reconstructions(val)
            per_cr = {}
            for cr, est in recon.items():
                est_c = denormalize_sample(est.astype(np.float64), val_scale or 1.0)
                per_cr[cr] = nmse_db(truth, est_c).nmse_db
            if nmse_callback is not None:
                nmse_callback(epoch, per_cr)

    history = fit(
        framework.graph, samples, labels, schedule, seed=seed, loss_fn=loss_fn,
        epoch_callback=callback,
    )
    framework.encoder.meta["trained"] = True
    return history


# ---------------------------------------------------------------------------
# UE-side parameter accounting

FOUR_STANDALONE_TOTAL = 1_968_688  # sum of the four single-rate encoder totals


@dataclass
class UeParamReport:
    """Encoder-side storage for one framework vs four standalone encoders.

    ``total_with_bias`` counts every tensor. ``total_mixed`` reproduces
    the published accounting for the series framework, which includes
    the first dense stage's bias but drops the chained stages' biases.
    """

    kind: str
    total_with_bias: int
    total_mixed: int
    four_standalone: int = FOUR_STANDALONE_TOTAL

    @property
    def reduction_with_bias(self) -> float:
        return 100.0 * (1.0 - self.total_with_bias / self.four_standalone)

    @property
    def reduction_mixed(self) -> float:
        return 100.0 * (1.0 - self.total_mixed / self.four_standalone)


def count_ue_params(framework: MultirateFramework) -> UeParamReport:
    report = count_params(framework.encoder)
    dense_rows = [r for r in report.rows if r.kind == "dense"]
    mixed = report.total_with_bias
    for row in dense_rows[1:]:
        mixed -= row.with_bias - row.weights_only
    return UeParamReport(
        kind=framework.kind,
        total_with_bias=report.total_with_bias,
        total_mixed=mixed,
    )
