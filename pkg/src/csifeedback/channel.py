"""Synthetic downlink channels and the sparse angular-delay representation.

A channel snapshot is generated in the spatial-frequency domain as a sum
of clustered multipath components over a uniform linear array, then
rotated into the angular-delay domain with unitary 2-D DFT matrices,
where the energy concentrates in the first few delay rows and can be
truncated before compression.
"""

from __future__ import annotations

import functools
import hashlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError, RangeError

# sparsity presets: rough analogue of an easier / harder propagation scene
PRESETS = {
    "default": {},
    "more-sparse": {
        "clusters": 2,
        "subpaths": 12,
        "angular_spread_deg": 4.0,
        "delay_spread_ns": 25.0,
        "max_mean_delay_ns": 600.0,
    },
    "less-sparse": {
        "clusters": 8,
        "subpaths": 20,
        "angular_spread_deg": 14.0,
        "delay_spread_ns": 70.0,
        "max_mean_delay_ns": 1050.0,
    },
}


@dataclass(frozen=True)
class ClusterModelConfig:
    """Clustered multipath generator settings.

    Cluster mean departure angles are spread evenly across the sector and
    mean delays evenly across [min_mean_delay_ns, max_mean_delay_ns];
    subpaths jitter around those means. Delays must stay small enough
    that nearly all delay-domain energy lands in the first
    ``n_delay_rows`` taps, i.e. below n_delay_rows / bandwidth.
    """

    n_subcarriers: int = 1024
    n_antennas: int = 32
    n_delay_rows: int = 32
    clusters: int = 6
    subpaths: int = 8
    angular_spread_deg: float = 10.0
    delay_spread_ns: float = 80.0
    sector_deg: float = 120.0
    min_mean_delay_ns: float = 50.0
    max_mean_delay_ns: float = 1000.0
    bandwidth_hz: float = 20e6
    antenna_spacing: float = 0.5  # in carrier wavelengths
    # tapped-delay-line gridding: snap subpath delays to multiples of
    # 1/bandwidth so delay energy lands on exact taps (no DFT leakage
    # past the retained rows); disable for continuous delays
    snap_delays: bool = True
    seed: int = 0

    def cluster_angles_rad(self):
        half = math.radians(self.sector_deg) / 2.0
        l = self.clusters
        return np.array([-half + (c + 0.5) * 2 * half / l for c in range(l)])

    def cluster_delays_s(self):
        l = self.clusters
        lo, hi = self.min_mean_delay_ns * 1e-9, self.max_mean_delay_ns * 1e-9
        if l == 1:
            return np.array([lo])
        return lo + (hi - lo) * np.arange(l) / (l - 1)

    def validate(self):
        if self.clusters < 1 or self.subpaths < 1:
            raise ConfigurationError("need at least one cluster and one subpath")
        if min(self.n_subcarriers, self.n_antennas, self.n_delay_rows) < 1:
            raise ConfigurationError("dimensions must be positive")
        if self.n_delay_rows > self.n_subcarriers:
            raise ConfigurationError("cannot keep more delay rows than subcarriers")
        # worst-case delay reach, means plus a generous jitter allowance
        reach_s = self.max_mean_delay_ns * 1e-9 + 6.0 * self.delay_spread_ns * 1e-9
        reach_taps = reach_s * self.bandwidth_hz
        if reach_taps > self.n_delay_rows - 1.5:
            raise ConfigurationError(
                f"delay spread {self.delay_spread_ns} ns with mean delays up to "
                f"{self.max_mean_delay_ns} ns reaches tap {reach_taps:.1f}, beyond "
                f"the {self.n_delay_rows} retained delay rows"
            )
        return self

    def digest(self) -> bytes:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).digest()

    @classmethod
    def preset(cls, name, **overrides):
        if name not in PRESETS:
            raise ConfigurationError(
                f"unknown preset {name!r}, choose from {sorted(PRESETS)}"
            )
        return cls(**{**PRESETS[name], **overrides})


def synth_channel(cfg: ClusterModelConfig, index) -> np.ndarray:
    """One spatial-frequency channel snapshot, (n_subcarriers, n_antennas).

    Deterministic per (cfg.seed, index). Each subpath contributes a
    complex gain, a linear phase across subcarriers set by its delay, and
    a steering vector across the array set by its departure angle.
    """
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, int(index))))
    n_paths = cfg.clusters * cfg.subpaths
    spread = math.radians(cfg.angular_spread_deg)

    angles = np.repeat(cfg.cluster_angles_rad(), cfg.subpaths)
    angles = angles + rng.normal(0.0, spread, n_paths)
    delays = np.repeat(cfg.cluster_delays_s(), cfg.subpaths)
    delays = delays + rng.exponential(cfg.delay_spread_ns * 1e-9, n_paths)
    if cfg.snap_delays:
        delays = np.round(delays * cfg.bandwidth_hz) / cfg.bandwidth_hz
    gains = (rng.normal(size=n_paths) + 1j * rng.normal(size=n_paths)) / math.sqrt(
        2.0 * n_paths
    )

    freqs = np.arange(cfg.n_subcarriers) * (cfg.bandwidth_hz / cfg.n_subcarriers)
    # +j phase ramp across subcarriers puts the delay peak at tap ~ delay*bandwidth
    subc_phase = np.exp(2j * np.pi * np.outer(freqs, delays))  # (N_c, P)
    ant = np.arange(cfg.n_antennas)
    steering = np.exp(
        -2j * np.pi * cfg.antenna_spacing * np.outer(np.sin(angles), ant)
    )  # (P, N_t)
    h = subc_phase @ (gains[:, None] * steering)
    # remove the large-scale gain: unit mean power per entry, so sample
    # magnitudes are comparable across the dataset
    h *= math.sqrt(cfg.n_subcarriers * cfg.n_antennas) / np.linalg.norm(h)
    return h


@functools.lru_cache(maxsize=8)
def _unitary_dft(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / math.sqrt(n)


def to_angular_delay(h_spatial_freq: np.ndarray) -> np.ndarray:
    """Full unitary 2-D transform: delay along rows, angle along columns."""
    n_c, n_t = h_spatial_freq.shape
    return _unitary_dft(n_c) @ h_spatial_freq @ _unitary_dft(n_t)


def from_angular_delay(h_angular_delay: np.ndarray) -> np.ndarray:
    """Inverse of to_angular_delay (conjugate transposes of unitary DFTs)."""
    n_c, n_t = h_angular_delay.shape
    return _unitary_dft(n_c).conj().T @ h_angular_delay @ _unitary_dft(n_t).conj().T


def truncate_delay(h_angular_delay: np.ndarray, n_rows: int) -> np.ndarray:
    if n_rows > h_angular_delay.shape[0]:
        raise ConfigurationError(
            f"cannot keep {n_rows} rows of a {h_angular_delay.shape[0]}-row matrix"
        )
    return h_angular_delay[:n_rows]


def angular_delay_truncated(h_spatial_freq: np.ndarray, n_rows: int) -> np.ndarray:
    """First n_rows of the angular-delay matrix without the full row DFT."""
    n_c, n_t = h_spatial_freq.shape
    if n_rows > n_c:
        raise ConfigurationError(f"cannot keep {n_rows} of {n_c} delay rows")
    return (_unitary_dft(n_c)[:n_rows] @ h_spatial_freq) @ _unitary_dft(n_t)


# ---------------------------------------------------------------------------
# [0,1] normalization shared by samples and network outputs

def normalize_sample(h: np.ndarray, scale: float) -> np.ndarray:
    """Complex (rows, cols) -> real (rows, cols, 2) with values in [0, 1].

    Plane 0 is the real part, plane 1 the imaginary part; v maps to
    v / (2*scale) + 0.5. ``scale`` must bound max |component| over the
    dataset this sample belongs to.
    """
    planes = np.stack([h.real, h.imag], axis=-1)
    peak = float(np.max(np.abs(planes), initial=0.0))
    if peak > scale * (1.0 + 1e-9):
        raise RangeError(
            f"component magnitude {peak:.6g} exceeds dataset scale {scale:.6g}"
        )
    return planes / (2.0 * scale) + 0.5


def denormalize_sample(t: np.ndarray, scale: float) -> np.ndarray:
    """Inverse of normalize_sample; accepts (..., rows, cols, 2)."""
    v = (t - 0.5) * (2.0 * scale)
    return v[..., 0] + 1j * v[..., 1]


def awgn_corrupt(codewords: np.ndarray, snr_db: float, seed) -> np.ndarray:
    """Add white Gaussian noise at the given SNR relative to mean power.

    snr_db may be math.inf, which returns the input unchanged.
    Deterministic per seed.
    """
    codewords = np.asarray(codewords)
    if codewords.size == 0:
        raise ConfigurationError("cannot corrupt an empty codeword")
    if math.isinf(snr_db) and snr_db > 0:
        return codewords.copy()
    if not math.isfinite(snr_db):
        raise ConfigurationError(f"snr_db must be finite or +inf, got {snr_db}")
    power = float(np.mean(np.square(codewords, dtype=np.float64)))
    sigma = math.sqrt(power / 10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=codewords.shape)
    return codewords + noise.astype(codewords.dtype, copy=False)
