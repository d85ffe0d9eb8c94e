"""Reconstruction quality metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

NMSE_FLOOR_DB = -100.0


@dataclass
class NmseResult:
    nmse_db: float
    samples: int
    excluded: int  # zero-norm truth samples skipped


def nmse_db(truth: np.ndarray, estimate: np.ndarray) -> NmseResult:
    """10*log10 of E[|H - H_hat|^2 / |H|^2] over complex channel matrices.

    Computed on denormalized complex matrices so the [0,1] affine shift
    used for network I/O cannot distort the ratio. Perfect reconstruction
    reports the -100 dB floor instead of -inf; zero-norm truth samples
    are excluded and counted.
    """
    truth = np.asarray(truth)
    estimate = np.asarray(estimate)
    if truth.shape != estimate.shape:
        raise ConfigurationError(f"shape mismatch {truth.shape} vs {estimate.shape}")
    if truth.ndim == 2:
        truth = truth[None]
        estimate = estimate[None]
    flat_t = truth.reshape(truth.shape[0], -1)
    flat_e = estimate.reshape(estimate.shape[0], -1)
    norms = np.sum(np.abs(flat_t) ** 2, axis=1)
    keep = norms > 0
    excluded = int((~keep).sum())
    if not keep.any():
        raise ConfigurationError("every truth sample has zero norm")
    err = np.sum(np.abs(flat_e[keep] - flat_t[keep]) ** 2, axis=1)
    ratio = float(np.mean(err / norms[keep]))
    if ratio <= 10.0 ** (NMSE_FLOOR_DB / 10.0):
        db = NMSE_FLOOR_DB
    else:
        db = 10.0 * math.log10(ratio)
    return NmseResult(db, int(keep.sum()), excluded)
