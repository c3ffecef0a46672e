"""Simulation lab for Bell correlations as collider-selection artefacts.

Quantum experiments (V- and W-shaped Bell tests, constrained teleportation)
run side by side with finite structural causal models so that their
statistics and counterfactual behaviour can be compared.
"""

__version__ = "0.1.0"
