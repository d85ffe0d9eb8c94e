"""Generate synthetic channels and look at why they compress well.

Walks through the generator: spatial-frequency snapshots, the unitary
2-D transform into the angular-delay domain, row truncation, and the
[0,1] normalization the networks train on.
"""

import numpy as np

from csifeedback import channel as ch
from csifeedback import data as dataio

cfg = ch.ClusterModelConfig(seed=7)
print("generator:", cfg, "\n")

h = ch.synth_channel(cfg, index=0)
print(f"spatial-frequency snapshot: {h.shape}, mean power "
      f"{np.mean(np.abs(h) ** 2):.3f} per entry")

full = ch.to_angular_delay(h)
row_energy = (np.abs(full) ** 2).sum(axis=1)
top = np.argsort(row_energy)[::-1][:8]
print("delay rows holding the most energy:", sorted(top.tolist()))
print(f"first {cfg.n_delay_rows} rows hold "
      f"{row_energy[:cfg.n_delay_rows].sum() / row_energy.sum():.4%} of it")

kept = ch.truncate_delay(full, cfg.n_delay_rows)
print(f"kept matrix: {kept.shape} complex -> {2 * kept.size} real values\n")

train, meta = dataio.build_dataset(cfg, count=256)
print(f"dataset of {len(train)} samples, shared scale {train.scale:.2f}")
print(f"normalized values live in [{train.samples.min():.3f}, "
      f"{train.samples.max():.3f}], midpoint 0.5 = zero amplitude")

active = np.abs(train.samples - 0.5) > 0.01
print(f"fraction of cells carrying visible amplitude: {active.mean():.2%} "
      "(the rest is the 'blank' area large kernels exploit)")
