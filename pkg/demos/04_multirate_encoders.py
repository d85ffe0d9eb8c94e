"""Series and parallel multiple-rate encoders: structure and savings.

Shows the two ways one stored encoder serves all four compression
rates, and verifies the structural properties that make them work.
"""

import numpy as np

from csifeedback import multirate as mr
from csifeedback.models import SUPPORTED_CR

x = np.random.default_rng(0).random((4, 32, 32, 2), dtype=np.float32)

print("series encoder: each rate keeps compressing the previous codeword")
sm = mr.build_sm_encoder(seed=0)
for cr, z in zip(SUPPORTED_CR, sm.forward(x, mode="infer")):
    print(f"  CR={cr:2d} codeword length {z.shape[1]}")

print("\nparallel encoder: higher rates are prefixes of the CR=4 codeword")
pm = mr.build_pm_encoder(seed=0)
z4, z8, z16, z32 = pm.forward(x, mode="infer")
print(f"  prefix checks: CR8 {np.array_equal(z8, z4[:, :256])}, "
      f"CR16 {np.array_equal(z16, z4[:, :128])}, CR32 {np.array_equal(z32, z4[:, :64])}")
print(f"  pm_slice(z4, 32) -> first {mr.pm_slice(z4, 32).shape[1]} elements")

print("\nstorage on the device (vs four standalone encoders):")
for kind in ("sm", "pm"):
    rep = mr.count_ue_params(mr.build_framework(kind, seed=0))
    print(f"  {kind.upper()}: {rep.total_with_bias:,} parameters "
          f"({rep.reduction_with_bias:.1f}% less than {rep.four_standalone:,})")

w = mr.RateLossWeights()
print(f"\njoint training weights per rate: {w.as_tuple()} "
      "(equal branch losses would total 39x the single loss)")
