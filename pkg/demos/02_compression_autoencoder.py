"""Train a small channel-compression autoencoder end to end.

Uses a reduced dataset and epoch budget so it finishes in about a
minute; the acceptance suite runs the full desk-scale recipe.
"""

import numpy as np

from csifeedback import channel as ch
from csifeedback import data as dataio
from csifeedback import models
from csifeedback.metrics import nmse_db
from csifeedback.nn import ModelGraph, TrainSchedule
from csifeedback.training import fit, forward_batched

CR = 8

cfg = ch.ClusterModelConfig(seed=1)
(train, val, test), _ = dataio.generate_splits(cfg, counts=(600, 50, 100))
print(f"data: {len(train)} train / {len(test)} test, compressing "
      f"{models.GEOMETRY.features} values to {models.codeword_length(CR)} (CR={CR})")

encoder = models.build_csinet_plus_encoder(CR, seed=0)
decoder = models.build_csinet_plus_decoder(CR, seed=1)
print(f"encoder stores {models.count_params(encoder).total_with_bias:,} parameters")

graph = ModelGraph("autoencoder", dtype=encoder.dtype)
out = graph.append_graph(encoder, input_node=-1)
graph.outputs = graph.append_graph(decoder, input_node=out[-1])

schedule = TrainSchedule(batch_size=200, epochs=25, initial_lr=1e-3)
history = fit(graph, train.samples, train.samples, schedule, seed=42)
print("loss: " + " ".join(f"{history[i].loss:.1e}" for i in range(0, 25, 5)))

recon = forward_batched(graph, test.samples)
truth = test.complex_matrices()
estimate = ch.denormalize_sample(recon.astype(np.float64), test.scale)
result = nmse_db(truth, estimate)
print(f"NMSE on held-out channels after {schedule.epochs} epochs: "
      f"{result.nmse_db:.2f} dB over {result.samples} samples")
print("(longer budgets and the full 5000-sample set reach much lower)")
