"""Dynamic neural radiance pipeline: static + motion-centric fields, quadrature
volume rendering, occupancy pruning, mask blending, self-supervised training."""

__version__ = "0.1.0"
