"""Latent talking-dot lab.

A desk-scale pipeline for few-step generator distillation on a synthetic
signal-driven sequence domain, a real-time chunked streaming engine, and a
calibrated multi-GPU pipeline latency model.
"""

__version__ = "0.1.0"
