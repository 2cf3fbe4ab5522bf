"""Gabor-noise evasion attacks on a neural grid contingency detector.

Subpackages cover trace generation, the Gabor noise field, a small
from-scratch MLP engine, the detector, the attack MDP environment, the
DDPG agent, and a CLI harness that orchestrates the full pipeline.
"""

__version__ = "0.1.0"
