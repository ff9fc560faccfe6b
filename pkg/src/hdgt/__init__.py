"""Heterogeneous driving-graph transformer for multi-agent trajectory prediction."""
from .estimator import HDGTPredictor, check_scene, check_scenes

__all__ = ["HDGTPredictor", "check_scene", "check_scenes"]
__version__ = "0.1.0"
