from .scene import SHAPES, SyntheticScene, fibonacci_cameras, generate_scene, render_mesh, shape_mesh
from .train import (TrainingDiverged, TrainState, build_networks, densify_and_prune, init_gaussians, load_state,
                    save_state, train, train_step)

__all__ = [
    "SHAPES", "SyntheticScene", "fibonacci_cameras", "generate_scene", "render_mesh", "shape_mesh",
    "TrainingDiverged", "TrainState", "build_networks", "densify_and_prune", "init_gaussians", "load_state",
    "save_state", "train", "train_step",
]
