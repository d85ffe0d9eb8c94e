"""Encoder/decoder graph builders, parameter counting, and FC heatmaps.

Two architectures share one geometry (32x32 channel image, 2 planes):

* the enhanced network: 7x7 feature extraction at the encoder, an extra
  initial-estimate convolution at the decoder, refinement blocks with
  7x7/5x5/3x3 stages, and no convolution after the last block;
* the reference network it improves on: a single 3x3 feature extraction
  layer, 3x3 refinement blocks, and a trailing 3x3 convolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .nn import LayerSpec, ModelGraph, truncated_normal_init

SUPPORTED_CR = (4, 8, 16, 32)
LEAKY_SLOPE = 0.3
BN_EPS = 1e-3
BN_MOMENTUM = 0.99
INIT_STDDEV = 0.05


@dataclass(frozen=True)
class Geometry:
    rows: int = 32
    cols: int = 32
    planes: int = 2

    @property
    def features(self) -> int:
        return self.rows * self.cols * self.planes


GEOMETRY = Geometry()


def codeword_length(cr: int, geometry: Geometry = GEOMETRY) -> int:
    if cr not in SUPPORTED_CR:
        raise ConfigurationError(
            f"unsupported compression rate {cr}, choose from {SUPPORTED_CR}"
        )
    if geometry.features % cr:
        raise ConfigurationError(
            f"geometry {geometry} not divisible by compression rate {cr}"
        )
    return geometry.features // cr


@dataclass(frozen=True)
class RefineBlockSpec:
    """Three conv stages with an identity shortcut around them."""

    kernels: tuple = (7, 5, 3)
    widths: tuple = (8, 16, 2)


def _seeds(seed, count):
    return [np.random.SeedSequence((int(seed), i)) for i in range(count)]


class _Builder:
    """Accumulates layers with per-layer deterministic init seeds."""

    def __init__(self, name, seed, dtype, stddev):
        self.g = ModelGraph(name, dtype=dtype)
        self.seed = int(seed)
        self.stddev = stddev
        self.counter = 0

    def _next_seed(self):
        self.counter += 1
        return np.random.SeedSequence((self.seed, self.counter))

    def conv(self, name, k, c_in, c_out, inputs=()):
        kernel = truncated_normal_init((k, k, c_in, c_out), self.stddev, self._next_seed())
        return self.g.add(
            LayerSpec(
                "conv2d", name, inputs=inputs, kernel_size=k,
                in_channels=c_in, out_channels=c_out,
            ),
            {"kernel": kernel, "bias": np.zeros(c_out)},
        )

    def bn(self, name, channels, inputs=(), gamma=1.0, beta=0.0):
        return self.g.add(
            LayerSpec("batchnorm", name, inputs=inputs, out_channels=channels,
                      bn_eps=BN_EPS, bn_momentum=BN_MOMENTUM),
            {
                "gamma": np.full(channels, gamma),
                "beta": np.full(channels, beta),
                "running_mean": np.zeros(channels),
                "running_var": np.ones(channels),
            },
        )

    def act(self, name, fn, inputs=()):
        return self.g.add(
            LayerSpec("activation", name, inputs=inputs, activation=fn,
                      alpha=LEAKY_SLOPE)
        )

    def dense(self, name, n_in, n_out, inputs=()):
        weight = truncated_normal_init((n_in, n_out), self.stddev, self._next_seed())
        return self.g.add(
            LayerSpec("dense", name, inputs=inputs, n_in=n_in, n_out=n_out),
            {"weight": weight, "bias": np.zeros(n_out)},
        )

    def reshape(self, name, target, inputs=()):
        return self.g.add(
            LayerSpec("reshape", name, inputs=inputs, target_shape=tuple(target))
        )

    def add_residual(self, name, a, b):
        return self.g.add(LayerSpec("residual_add", name, inputs=(a, b)))


def _conv_bn_act(b: _Builder, tag, k, c_in, c_out, fn, inputs=(), gamma=1.0, beta=0.0):
    b.conv(f"{tag}_conv", k, c_in, c_out, inputs=inputs)
    b.bn(f"{tag}_bn", c_out, gamma=gamma, beta=beta)
    return b.act(f"{tag}_{fn}", fn)


# Initialization of the decoder head. Residual blocks start as identity
# maps (closing BN gamma = 0), the initial-estimate path starts as a
# gentle wiggle around sigmoid(0) = 0.5, and the last block's closing BN
# beta centers the final sigmoid on the data midpoint. Without this, a
# fixed-budget run burns most of its steps drifting biases toward the
# [0,1] data band instead of learning structure.
INITIAL_ESTIMATE_GAMMA = 0.1
FINAL_SHIFT_BETA = -0.5


def _refine_block(b: _Builder, tag, block: RefineBlockSpec, entry, post_activation,
                  closing_beta=0.0):
    """Conv stages + identity shortcut, then the block's own activation."""
    if block.widths[-1] != GEOMETRY.planes:
        raise ConfigurationError(
            f"refine block must end with {GEOMETRY.planes} channels to match "
            f"its shortcut, got {block.widths[-1]}"
        )
    node = entry
    for s, (k, c_out) in enumerate(zip(block.kernels, block.widths)):
        c_in = GEOMETRY.planes if s == 0 else block.widths[s - 1]
        b.conv(f"{tag}_s{s}_conv", k, c_in, c_out, inputs=(node,))
        closing = s == len(block.kernels) - 1
        node = b.bn(f"{tag}_s{s}_bn", c_out,
                    gamma=0.0 if closing else 1.0,
                    beta=closing_beta if closing else 0.0)
        if not closing:
            node = b.act(f"{tag}_s{s}_lrelu", "leaky_relu")
    shortcut = b.add_residual(f"{tag}_shortcut", entry, node)
    return b.act(f"{tag}_{post_activation}", post_activation, inputs=(shortcut,))


def build_csinet_plus_encoder(cr, *, seed=0, dtype=np.float32,
                              stddev=INIT_STDDEV) -> ModelGraph:
    """Two 7x7 conv stages then one dense layer down to the codeword."""
    m = codeword_length(cr)
    b = _Builder(f"encoder_cr{cr}", seed, dtype, stddev)
    p = GEOMETRY.planes
    _conv_bn_act(b, "feat1", 7, p, p, "leaky_relu", inputs=(-1,))
    _conv_bn_act(b, "feat2", 7, p, p, "leaky_relu")
    b.reshape("flatten", (GEOMETRY.features,))
    b.dense("compress", GEOMETRY.features, m)
    b.g.meta.update(kind="encoder", arch="csinet-plus", cr=cr, codeword=m)
    return b.g


def build_csinet_plus_decoder(cr, *, seed=1, dtype=np.float32,
                              stddev=INIT_STDDEV) -> ModelGraph:
    """Dense expansion, initial-estimate conv, two refinement blocks.

    The second block ends in the output sigmoid directly; there is no
    convolution after the last block.
    """
    m = codeword_length(cr)
    b = _Builder(f"decoder_cr{cr}", seed, dtype, stddev)
    p = GEOMETRY.planes
    b.dense("expand", m, GEOMETRY.features, inputs=(-1,))
    b.reshape("unflatten", (GEOMETRY.rows, GEOMETRY.cols, p))
    initial = _conv_bn_act(b, "initial", 7, p, p, "sigmoid",
                           gamma=INITIAL_ESTIMATE_GAMMA)
    block = RefineBlockSpec()
    mid = _refine_block(b, "refine1", block, initial, "leaky_relu")
    _refine_block(b, "refine2", block, mid, "sigmoid", closing_beta=FINAL_SHIFT_BETA)
    b.g.meta.update(kind="decoder", arch="csinet-plus", cr=cr, codeword=m)
    return b.g


def build_csinet_baseline(cr, *, seed=0, dtype=np.float32, stddev=INIT_STDDEV):
    """Reference architecture: 3x3 kernels, no initial-estimate conv,
    and a trailing conv + BN + sigmoid after the second block."""
    m = codeword_length(cr)
    p = GEOMETRY.planes

    e = _Builder(f"baseline_encoder_cr{cr}", seed, dtype, stddev)
    _conv_bn_act(e, "feat1", 3, p, p, "leaky_relu", inputs=(-1,))
    e.reshape("flatten", (GEOMETRY.features,))
    e.dense("compress", GEOMETRY.features, m)
    e.g.meta.update(kind="encoder", arch="csinet", cr=cr, codeword=m)

    d = _Builder(f"baseline_decoder_cr{cr}", seed + 1, dtype, stddev)
    d.dense("expand", m, GEOMETRY.features, inputs=(-1,))
    entry = d.reshape("unflatten", (GEOMETRY.rows, GEOMETRY.cols, p))
    block = RefineBlockSpec(kernels=(3, 3, 3))
    mid = _refine_block(d, "refine1", block, entry, "leaky_relu")
    mid = _refine_block(d, "refine2", block, mid, "leaky_relu")
    _conv_bn_act(d, "final", 3, p, p, "sigmoid", inputs=(mid,),
                 gamma=INITIAL_ESTIMATE_GAMMA)
    d.g.meta.update(kind="decoder", arch="csinet", cr=cr, codeword=m)
    return e.g, d.g


# ---------------------------------------------------------------------------
# parameter counting

@dataclass
class ParamCountRow:
    name: str
    kind: str
    with_bias: int
    weights_only: int


@dataclass
class ParamCountReport:
    """Per-layer counts plus totals under two dense-layer conventions.

    ``total_with_bias`` counts every parameter tensor. In
    ``total_fc_weights_only`` dense layers contribute weights only
    (their biases are dropped), which is how the reference tables count
    the dominant dense layer.
    """

    rows: list
    total_with_bias: int
    total_fc_weights_only: int
    fc_weights: int

    @property
    def fc_fraction(self) -> float:
        """Weights-only dense share of the full (with-bias) total."""
        if self.total_with_bias == 0:
            return 0.0
        return self.fc_weights / self.total_with_bias


def count_params(graph: ModelGraph) -> ParamCountReport:
    """Count trainable storage per layer.

    conv: C_out * (C_in * K^2 + 1) -- kernels carry a bias term;
    batchnorm: 4 * C (gamma, beta, running mean, running variance);
    dense: N_out * (N_in + 1) with bias, N_in * N_out weights-only.
    """
    rows = []
    fc_weights = 0
    for spec in graph.layers:
        if spec.kind == "conv2d":
            n = spec.out_channels * (spec.in_channels * spec.kernel_size ** 2 + 1)
            rows.append(ParamCountRow(spec.name, spec.kind, n, n))
        elif spec.kind == "batchnorm":
            n = 4 * spec.out_channels
            rows.append(ParamCountRow(spec.name, spec.kind, n, n))
        elif spec.kind == "dense":
            w = spec.n_in * spec.n_out
            rows.append(ParamCountRow(spec.name, spec.kind, spec.n_out * (spec.n_in + 1), w))
            fc_weights += w
    return ParamCountReport(
        rows=rows,
        total_with_bias=sum(r.with_bias for r in rows),
        total_fc_weights_only=sum(r.weights_only for r in rows),
        fc_weights=fc_weights,
    )


# ---------------------------------------------------------------------------
# FC-parameter heatmaps

def fc_heatmap(encoder: ModelGraph, geometry: Geometry = GEOMETRY) -> np.ndarray:
    """Mean |weight| of the compression layer per input pixel, (2, rows, cols).

    Weights are mapped back through the flatten order to (row, col,
    plane), averaged in magnitude over the codeword axis, then min-max
    normalized to [0, 1] over both planes. A flat (constant) map
    degenerates to 0.5 everywhere.
    """
    dense = [
        (spec, params)
        for spec, params in zip(encoder.layers, encoder.params)
        if spec.kind == "dense"
    ]
    if len(dense) != 1:
        raise ConfigurationError(
            f"fc_heatmap needs exactly one dense layer, found {len(dense)}"
        )
    spec, params = dense[0]
    if spec.n_in != geometry.features:
        raise ConfigurationError(
            f"dense layer takes {spec.n_in} inputs, expected {geometry.features}"
        )
    mean_abs = np.abs(params["weight"]).mean(axis=1)  # (features,)
    grid = mean_abs.reshape(geometry.rows, geometry.cols, geometry.planes)
    grid = grid.transpose(2, 0, 1)  # (planes, rows, cols)
    lo, hi = float(grid.min()), float(grid.max())
    if hi - lo < 1e-30:
        return np.full_like(grid, 0.5, dtype=np.float64)
    return ((grid - lo) / (hi - lo)).astype(np.float64)


def write_heatmap_text(heatmap: np.ndarray, path):
    """Two row-major blocks of 6-decimal fixed point, blank line between."""
    with open(path, "w") as fh:
        for p, plane in enumerate(heatmap):
            if p:
                fh.write("\n")
            for row in plane:
                fh.write(" ".join(f"{v:.6f}" for v in row) + "\n")


def write_heatmap_pgm(heatmap: np.ndarray, path_prefix):
    """One 8-bit binary PGM per plane: <prefix>_plane<i>.pgm."""
    paths = []
    for p, plane in enumerate(heatmap):
        img = np.clip(np.round(plane * 255.0), 0, 255).astype(np.uint8)
        path = f"{path_prefix}_plane{p}.pgm"
        with open(path, "wb") as fh:
            fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
            fh.write(img.tobytes())
        paths.append(path)
    return paths
