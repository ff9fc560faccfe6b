from .preprocess import Preprocessed, fill_observed, preprocess
from .schema import (
    AGENT_TYPES,
    MAP_KINDS,
    AgentTrack,
    MapPolyline,
    Scene,
    SceneValidationError,
    load_scene,
    load_scene_file,
    save_scene,
    save_scene_file,
    scene_from_dict,
    scene_to_dict,
)
from .synthetic import GeneratorConfig, generate_synthetic
from .transform import permute_agents, retarget, transform_scene

__all__ = [
    "AGENT_TYPES", "MAP_KINDS", "AgentTrack", "MapPolyline", "Scene", "SceneValidationError",
    "load_scene", "load_scene_file", "save_scene", "save_scene_file", "scene_from_dict",
    "scene_to_dict", "Preprocessed", "fill_observed", "preprocess", "GeneratorConfig",
    "generate_synthetic", "transform_scene", "permute_agents", "retarget",
]
