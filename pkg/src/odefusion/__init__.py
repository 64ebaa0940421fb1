"""Joint trajectory prediction and symbolic recovery for ODE systems.

A multimodal encoder/fusion/decoder transformer maps a noisy trajectory
prefix plus a possibly-corrupted symbolic equation guess to trajectory
predictions at arbitrary query times and a corrected symbolic ODE,
together with the synthetic-data pipeline (chaotic ODE catalog, stiff
BDF integrator, corruption operators) and the evaluation harness.
"""

__version__ = "0.1.0"
