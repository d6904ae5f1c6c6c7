"""Audio-driven co-speech gesture video toolkit.

Two stages: an audio-conditioned pose diffusion model that also emits
per-region motion masks, and a motion-mask-guided latent video diffusion
model with hierarchical audio attention. Ships with a synthetic corpus
generator, pose/video metrics, and a CLI for training, sampling,
ablations and sweeps.
"""

__version__ = "0.1.0"
