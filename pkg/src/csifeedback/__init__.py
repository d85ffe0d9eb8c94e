"""Learned CSI feedback at desk scale.

Subpackages/modules:
  nn         minimal layer-graph engine (forward, gradients, Adam, files)
  channel    synthetic multipath channels and the angular-delay transform
  data       dataset container and binary sample files
  models     encoder/decoder builders, parameter counting, FC heatmaps
  quantizer  mu-law codec, bitstream packing, offset network, fine-tuning
  multirate  series and parallel multiple-rate compression frameworks
  metrics    NMSE evaluation
  cli        command-line harness
"""

__version__ = "0.1.0"
