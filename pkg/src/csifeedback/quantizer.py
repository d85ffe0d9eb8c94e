"""Bit-level feedback path.

Codewords are affinely scaled into [-1, 1] (bounds recorded from the
training set), optionally companded with the mu-law curve, uniformly
quantized to B-bit level indices, and packed MSB-first into a byte
stream with a 5-byte header. The decoder side reverses each step,
reconstructing level midpoints, and can run a residual offset network
to pull dequantized codewords back toward their pre-quantization values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigurationError,
    ContractViolationError,
    DecodingError,
    EncodingError,
)
from .nn import LayerSpec, ModelGraph, TrainSchedule, truncated_normal_init
from .training import fit, forward_batched

MODES = ("uniform", "mulaw")
CR_CODES = {4: 0, 8: 1, 16: 2, 32: 3}
CODE_CRS = {v: k for k, v in CR_CODES.items()}
LEAKY_SLOPE = 0.3


@dataclass(frozen=True)
class QuantizerConfig:
    mode: str = "mulaw"
    bits: int = 3
    # default chosen empirically for the 3..6-bit regime on near-Gaussian
    # measurement vectors; classic telephony values (mu=255) over-resolve
    # the center at these depths and lose to uniform quantization
    mu: float = 12.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown quantizer mode {self.mode!r}")
        if not 1 <= self.bits <= 16:
            raise ConfigurationError(f"bit depth must be in 1..16, got {self.bits}")
        if self.mode == "mulaw" and self.mu <= 0:
            raise ConfigurationError(f"mu must be positive, got {self.mu}")

    @property
    def levels(self) -> int:
        return 2 ** self.bits


def compand(x, mu):
    """Mu-law curve mapping [-1,1] onto [-1,1]: sign(x)*ln(1+mu|x|)/ln(1+mu)."""
    if mu <= 0:
        raise ConfigurationError(f"mu must be positive, got {mu}")
    x = np.asarray(x)
    return np.sign(x) * np.log1p(mu * np.abs(x)) / math.log1p(mu)


def expand(y, mu):
    """Exact inverse of compand: sign(y)*((1+mu)^|y| - 1)/mu."""
    if mu <= 0:
        raise ConfigurationError(f"mu must be positive, got {mu}")
    y = np.asarray(y)
    return np.sign(y) * np.expm1(np.abs(y) * math.log1p(mu)) / mu


def quantize(values, cfg: QuantizerConfig) -> np.ndarray:
    """Values in [-1,1] -> uint16 level indices (out-of-range is clipped)."""
    x = np.clip(np.asarray(values), -1.0, 1.0)
    if cfg.mode == "mulaw":
        x = compand(x, cfg.mu)
    delta = 2.0 / cfg.levels
    idx = np.floor((x + 1.0) / delta)
    return np.clip(idx, 0, cfg.levels - 1).astype(np.uint16)


def dequantize(indices, cfg: QuantizerConfig) -> np.ndarray:
    """Level indices -> midpoints of their cells (expanded for mu-law)."""
    idx = np.asarray(indices)
    if idx.size and int(idx.max()) >= cfg.levels:
        raise ConfigurationError(
            f"index {int(idx.max())} out of range for {cfg.bits}-bit quantizer"
        )
    delta = 2.0 / cfg.levels
    mid = -1.0 + (idx.astype(np.float64) + 0.5) * delta
    if cfg.mode == "mulaw":
        mid = expand(mid, cfg.mu)
    return mid


# ---------------------------------------------------------------------------
# codeword scaling and end-to-end codec

@dataclass
class CodewordCodec:
    """Quantizer plus the affine codeword scaling fitted on training data."""

    cfg: QuantizerConfig
    lo: float
    hi: float
    clipped: int = 0

    @classmethod
    def fit(cls, cfg: QuantizerConfig, codewords) -> "CodewordCodec":
        codewords = np.asarray(codewords)
        if codewords.size == 0:
            raise ConfigurationError("cannot fit a codec on empty codewords")
        lo = float(codewords.min())
        hi = float(codewords.max())
        if not (math.isfinite(lo) and math.isfinite(hi)) or hi - lo < 1e-12:
            raise ConfigurationError(
                f"degenerate codeword range [{lo}, {hi}] cannot be scaled"
            )
        return cls(cfg=cfg, lo=lo, hi=hi)

    def to_unit(self, codewords) -> np.ndarray:
        x = (np.asarray(codewords, dtype=np.float64) - self.lo) / (self.hi - self.lo)
        x = 2.0 * x - 1.0
        out_of_range = int((x < -1.0).sum() + (x > 1.0).sum())
        self.clipped += out_of_range
        return np.clip(x, -1.0, 1.0)

    def from_unit(self, unit) -> np.ndarray:
        return (np.asarray(unit) + 1.0) / 2.0 * (self.hi - self.lo) + self.lo

    def encode(self, codewords) -> np.ndarray:
        return quantize(self.to_unit(codewords), self.cfg)

    def decode(self, indices) -> np.ndarray:
        return self.from_unit(dequantize(indices, self.cfg))

    def roundtrip(self, codewords) -> np.ndarray:
        return self.decode(self.encode(codewords))

    def to_json(self) -> str:
        return json.dumps(
            {
                "mode": self.cfg.mode,
                "bits": self.cfg.bits,
                "mu": self.cfg.mu,
                "lo": self.lo,
                "hi": self.hi,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text) -> "CodewordCodec":
        d = json.loads(text)
        cfg = QuantizerConfig(mode=d["mode"], bits=d["bits"], mu=d["mu"])
        return cls(cfg=cfg, lo=float(d["lo"]), hi=float(d["hi"]))


# ---------------------------------------------------------------------------
# bitstream packing

@dataclass
class FeedbackBitstream:
    """Wire unit for one quantized codeword.

    Bytes: [0] CR code (0..3 -> 4/8/16/32), [1] bit depth, [2] mode
    (0 uniform, 1 mulaw), [3:5] codeword length little-endian u16, then
    ceil(M*B/8) payload bytes, indices packed MSB-first, zero padding.
    """

    cr: int
    bits: int
    mode: str
    length: int
    payload: bytes

    def to_bytes(self) -> bytes:
        header = bytes(
            [CR_CODES[self.cr], self.bits, MODES.index(self.mode)]
        ) + self.length.to_bytes(2, "little")
        return header + self.payload

    @property
    def payload_bits(self) -> int:
        return self.length * self.bits


def pack_bitstream(indices, cr, cfg: QuantizerConfig) -> FeedbackBitstream:
    idx = np.asarray(indices)
    if idx.ndim != 1:
        raise EncodingError(f"expected a flat index vector, got shape {idx.shape}")
    if cr not in CR_CODES:
        raise EncodingError(f"unsupported compression rate {cr}")
    if idx.size and int(idx.max()) >= cfg.levels:
        raise EncodingError(
            f"index {int(idx.max())} does not fit in {cfg.bits} bits"
        )
    if idx.size and int(idx.min()) < 0:
        raise EncodingError("negative level index")
    shifts = np.arange(cfg.bits - 1, -1, -1, dtype=np.uint16)
    bits = ((idx.astype(np.uint16)[:, None] >> shifts) & 1).astype(np.uint8)
    payload = np.packbits(bits.reshape(-1)).tobytes()  # MSB-first, zero tail pad
    return FeedbackBitstream(
        cr=cr, bits=cfg.bits, mode=cfg.mode, length=idx.size, payload=payload
    )


def unpack_bitstream(blob) -> tuple[np.ndarray, FeedbackBitstream]:
    """bytes -> (index vector, parsed header/payload record)."""
    if isinstance(blob, FeedbackBitstream):
        blob = blob.to_bytes()
    if len(blob) < 5:
        raise DecodingError("bitstream shorter than its 5-byte header")
    cr_code, bits, mode_code = blob[0], blob[1], blob[2]
    if cr_code not in CODE_CRS:
        raise DecodingError(f"unknown CR code {cr_code}")
    if mode_code >= len(MODES):
        raise DecodingError(f"unknown mode code {mode_code}")
    if not 1 <= bits <= 16:
        raise DecodingError(f"bad bit depth {bits}")
    length = int.from_bytes(blob[3:5], "little")
    n_payload = (length * bits + 7) // 8
    payload = blob[5:]
    if len(payload) < n_payload:
        raise DecodingError(
            f"truncated payload: {len(payload)} bytes, need {n_payload}"
        )
    payload = payload[:n_payload]
    raw = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))[: length * bits]
    weights = 1 << np.arange(bits - 1, -1, -1, dtype=np.uint32)
    indices = (raw.reshape(length, bits).astype(np.uint32) * weights).sum(axis=1)
    stream = FeedbackBitstream(
        cr=CODE_CRS[cr_code],
        bits=bits,
        mode=MODES[mode_code],
        length=length,
        payload=payload,
    )
    return indices.astype(np.uint16), stream


# ---------------------------------------------------------------------------
# offset network

def build_offset_net(m, *, width=None, seed=7, dtype=np.float32,
                     stddev=0.05) -> ModelGraph:
    """Residual correction stack: three dense layers plus input shortcut.

    Hidden layers use leaky-ReLU, the last layer is linear and
    zero-initialized so a fresh network is exactly the identity map.
    """
    n = m if width is None else int(width)
    g = ModelGraph(f"offset_m{m}", dtype=dtype)
    dims = [(m, n), (n, n), (n, m)]
    last = -1
    for i, (a, b) in enumerate(dims):
        final = i == len(dims) - 1
        if final:
            weight = np.zeros((a, b))
        else:
            weight = truncated_normal_init(
                (a, b), stddev, np.random.SeedSequence((int(seed), i))
            )
        last = g.add(
            LayerSpec("dense", f"offset_fc{i}", inputs=(last,), n_in=a, n_out=b),
            {"weight": weight, "bias": np.zeros(b)},
        )
        if not final:
            last = g.add(
                LayerSpec("activation", f"offset_lrelu{i}", activation="leaky_relu",
                          alpha=LEAKY_SLOPE)
            )
    g.add(LayerSpec("residual_add", "offset_shortcut", inputs=(-1, last)))
    g.meta.update(kind="offset", codeword=m)
    return g


def offset_forward(offset: ModelGraph, dequantized) -> np.ndarray:
    """Apply the residual correction: y + g(y)."""
    y = np.asarray(dequantized)
    m = offset.layers[0].n_in
    if y.shape[-1] != m:
        raise ConfigurationError(
            f"offset network expects length {m}, got {y.shape[-1]}"
        )
    return offset.forward(y, mode="infer")


def train_offset(
    encoder: ModelGraph,
    samples,
    qcfg: QuantizerConfig,
    schedule: TrainSchedule | None = None,
    *,
    seed=0,
    codec: CodewordCodec | None = None,
):
    """Train the correction network on (dequantized, pre-quantization) pairs.

    The encoder must already be trained; its codewords over ``samples``
    define both the codec scaling (unless one is supplied) and the
    training pairs. Returns (offset graph, codec, history).
    """
    if not encoder.meta.get("trained"):
        raise ConfigurationError(
            "offset training needs a trained encoder (meta['trained'] is not set)"
        )
    schedule = schedule or TrainSchedule(epochs=100, initial_lr=1e-3)
    codewords = forward_batched(encoder, samples)
    if codec is None:
        codec = CodewordCodec.fit(qcfg, codewords)
    dequantized = codec.roundtrip(codewords).astype(encoder.dtype)
    m = codewords.shape[1]
    offset = build_offset_net(m, seed=seed, dtype=encoder.dtype)
    history = fit(
        offset, dequantized, codewords.astype(encoder.dtype), schedule, seed=seed
    )
    return offset, codec, history


def finetune_quantized(
    encoder: ModelGraph,
    decoder: ModelGraph,
    offset: ModelGraph,
    samples,
    codec: CodewordCodec,
    schedule: TrainSchedule | None = None,
    *,
    seed=0,
):
    """Joint decoder+offset refinement with the quantizer in the loop.

    The encoder must be frozen; its parameters are not touched (the
    quantizer is not differentiated through -- gradients stop at the
    offset input). Updates decoder and offset parameters in place and
    returns the training history.
    """
    if not encoder.is_frozen():
        raise ContractViolationError(
            "finetune_quantized requires a frozen encoder (call encoder.freeze())"
        )
    schedule = schedule or TrainSchedule(epochs=200, initial_lr=1e-4)
    samples = np.asarray(samples, dtype=encoder.dtype)
    codewords = forward_batched(encoder, samples)
    dequantized = codec.roundtrip(codewords).astype(encoder.dtype)
    combined = ModelGraph(f"finetune_{decoder.name}", dtype=encoder.dtype)
    off_out = combined.append_graph(offset, input_node=-1)
    combined.outputs = combined.append_graph(decoder, input_node=off_out[-1])
    history = fit(combined, dequantized, samples, schedule, seed=seed)
    decoder.meta["finetuned"] = True
    return history
