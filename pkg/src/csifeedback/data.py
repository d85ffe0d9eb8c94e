"""Dataset container and the binary sample-file format.

File layout: magic "CSID", u8 version, u32 sample count, u16 delay rows,
u16 antennas, f32 normalization scale, 32-byte generator-config digest,
then per sample 2 * rows * cols little-endian float32 values stored
plane-major (real plane row-major, then imaginary plane).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import channel as ch
from .errors import ConfigurationError, FormatError

MAGIC = b"CSID"
VERSION = 1
HEADER = struct.Struct("<4sBIHHf32s")


@dataclass
class Dataset:
    """Normalized samples in network layout (N, rows, cols, 2) float32."""

    samples: np.ndarray
    scale: float
    config_digest: bytes

    @property
    def rows(self):
        return self.samples.shape[1]

    @property
    def cols(self):
        return self.samples.shape[2]

    def __len__(self):
        return self.samples.shape[0]

    def complex_matrices(self) -> np.ndarray:
        """Denormalized complex channels, (N, rows, cols)."""
        return ch.denormalize_sample(self.samples.astype(np.float64), self.scale)


def write_dataset(ds: Dataset, path):
    if ds.samples.ndim != 4 or ds.samples.shape[3] != 2:
        raise ConfigurationError(f"expected (N, rows, cols, 2), got {ds.samples.shape}")
    if len(ds.config_digest) != 32:
        raise ConfigurationError("config digest must be 32 bytes")
    n, rows, cols, _ = ds.samples.shape
    header = HEADER.pack(MAGIC, VERSION, n, rows, cols, ds.scale, ds.config_digest)
    payload = np.ascontiguousarray(
        ds.samples.transpose(0, 3, 1, 2), dtype="<f4"
    ).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_dataset(path, expected_digest: bytes | None = None) -> Dataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, n, rows, cols, scale, digest = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic, not a dataset file")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expect = HEADER.size + 4 * n * 2 * rows * cols
    if len(raw) != expect:
        raise FormatError(
            f"{path}: payload is {len(raw) - HEADER.size} bytes, expected {expect - HEADER.size}"
        )
    if expected_digest is not None and digest != expected_digest:
        raise FormatError(f"{path}: generator config digest mismatch")
    flat = np.frombuffer(raw, dtype="<f4", offset=HEADER.size)
    samples = flat.reshape(n, 2, rows, cols).transpose(0, 2, 3, 1)
    return Dataset(np.ascontiguousarray(samples), float(scale), digest)


def generate_channels(cfg: ch.ClusterModelConfig, count, start_index=0):
    """Truncated angular-delay channels plus the retained-energy fraction.

    Returns (complex array (count, n_delay_rows, n_antennas), energy
    fraction retained by the delay truncation, averaged over the batch).
    """
    cfg.validate()
    kept = np.empty((count, cfg.n_delay_rows, cfg.n_antennas), dtype=np.complex128)
    energy_total = 0.0
    energy_kept = 0.0
    for i in range(count):
        h_sf = ch.synth_channel(cfg, start_index + i)
        h_ad = ch.angular_delay_truncated(h_sf, cfg.n_delay_rows)
        kept[i] = h_ad
        # the full 2-D transform is unitary, so |H_sf|^2 equals the
        # untruncated angular-delay energy
        energy_total += float(np.sum(np.abs(h_sf) ** 2))
        energy_kept += float(np.sum(np.abs(h_ad) ** 2))
    return kept, energy_kept / energy_total


def build_dataset(
    cfg: ch.ClusterModelConfig,
    count,
    start_index=0,
    scale=None,
    min_energy_fraction=0.99,
):
    """Generate, truncate, and normalize ``count`` samples.

    Raises ConfigurationError if delay truncation discards more than
    1 - min_energy_fraction of the mean energy. If ``scale`` is None the
    dataset-global scale (max |component|) is computed from this batch.
    """
    matrices, fraction = generate_channels(cfg, count, start_index)
    if fraction < min_energy_fraction:
        raise ConfigurationError(
            f"delay truncation keeps only {fraction:.4f} of mean energy; reduce "
            f"delay_spread_ns={cfg.delay_spread_ns} or the mean delay range"
        )
    if scale is None:
        scale = float(max(np.max(np.abs(matrices.real)), np.max(np.abs(matrices.imag))))
    planes = np.stack([matrices.real, matrices.imag], axis=-1)
    samples = (planes / (2.0 * scale) + 0.5).astype(np.float32)
    ds = Dataset(samples, float(scale), cfg.digest())
    ds_meta = {"energy_fraction": fraction, "start_index": start_index}
    return ds, ds_meta


def generate_splits(cfg, counts=(5000, 1000, 1000), min_energy_fraction=0.99):
    """Train/val/test datasets with contiguous sample indices and one shared scale."""
    n_train, n_val, n_test = counts
    total = n_train + n_val + n_test
    matrices, fraction = generate_channels(cfg, total, 0)
    if fraction < min_energy_fraction:
        raise ConfigurationError(
            f"delay truncation keeps only {fraction:.4f} of mean energy; reduce "
            f"delay_spread_ns={cfg.delay_spread_ns} or the mean delay range"
        )
    scale = float(max(np.max(np.abs(matrices.real)), np.max(np.abs(matrices.imag))))
    planes = np.stack([matrices.real, matrices.imag], axis=-1)
    samples = (planes / (2.0 * scale) + 0.5).astype(np.float32)
    digest = cfg.digest()
    out = []
    offset = 0
    for n in counts:
        out.append(Dataset(samples[offset : offset + n], scale, digest))
        offset += n
    return tuple(out), fraction
