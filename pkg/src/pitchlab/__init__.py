"""pitchlab: a self-contained multi-agent RL football-defense laboratory.

Spatial pitch-control fields and a possession-value grid combine into a
dense reward-shaping signal for a from-scratch value-decomposition learner
trained inside a deterministic 2D simulator.
"""

__version__ = "0.1.0"
