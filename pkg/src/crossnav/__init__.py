"""Cross-embodiment mobility: simulation, imitation, residual RL, distillation."""

__version__ = "0.1.0"
