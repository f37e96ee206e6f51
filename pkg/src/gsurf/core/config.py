from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path


@dataclass
class TrainConfig:
    # loss weights
    lambda_pos: float = 0.1
    lambda_eik: float = 0.01
    lambda_off: float = 0.01
    lambda_ori: float = 0.05
    lambda_nor: float = 0.05
    lambda_ent: float = 0.01
    alpha_off: float = 100.0
    ssim_weight: float = 0.2
    # composite masked targets and renders over a fresh random color each iteration
    random_background: bool = True
    lambda_dep: float = 100.0
    lambda_dnc: float = 0.05

    # schedule
    total_iters: int = 7000
    sdf_warmup_iters: int = 500
    # first iteration of the depth-distortion, depth-normal and entropy terms
    dep_from_iter: int = 1000
    dnc_from_iter: int = 1000
    ent_from_iter: int = 500
    checkpoint_interval: int = 0

    # gaussians and densification
    n_gaussians: int = 2000
    init_extent: float = 0.8
    prune_opacity_threshold: float = 0.05
    densify_interval: int = 100
    densify_from_iter: int = 500
    densify_until_frac: float = 0.7
    densify_grad_threshold: float = 2e-4
    split_scale_divisor: float = 1.6
    # at densification steps, drop disks whose peak blending weight stayed below this (0 disables)
    prune_hidden_threshold: float = 0.01
    opacity_reset_interval: int = 0
    opacity_reset_value: float = 0.1
    max_gaussians: int = 8000

    # learning rates
    lr_centroid_init: float = 1.6e-4
    lr_centroid_final: float = 1.6e-6
    lr_rotation: float = 5e-3
    lr_scale: float = 5e-3
    lr_opacity: float = 0.05
    lr_color: float = 2.5e-3
    lr_sdf: float = 5e-4
    # log-linear decay of the SDF rate, reached at total_iters
    lr_sdf_final: float = 5e-5
    lr_appearance: float = 5e-4

    # field networks
    hidden_width: int = 64
    sdf_layers: int = 8
    appearance_layers: int = 4
    skip_layer: int = 4
    pos_bands: int = 6
    dir_bands: int = 4
    sphere_radius: float = 0.5
    fd_step: float = 1e-4
    use_appearance_net: bool = True
    # arithmetic for network evaluation during training ("float32" or "float64")
    network_dtype: str = "float32"

    # sdf supervision batches
    sdf_surface_samples: int = 1024
    sdf_uniform_samples: int = 512
    sdf_near_samples: int = 512
    near_sigma: float = 0.05
    # surface samples come from disks whose peak blending weight in the view reaches this
    surface_sample_min_weight: float = 0.1
    normal_map_pixels: int = 512
    # "both", "gaussians" or "sdf": which side the normal-map loss updates
    normal_loss_updates: str = "both"
    # flip SDF normals toward the camera inside the normal-map loss (sign-agnostic)
    sdf_normals_face_camera: bool = False

    mc_resolution: int = 128
    seed: int = 0

    def __post_init__(self):
        for name in ("lambda_pos", "lambda_eik", "lambda_off", "lambda_ori", "lambda_nor", "lambda_ent",
                     "lambda_dep", "lambda_dnc"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.sdf_warmup_iters >= self.total_iters:
            raise ValueError("sdf_warmup_iters must be smaller than total_iters")
        if self.network_dtype not in ("float32", "float64"):
            raise ValueError("network_dtype must be 'float32' or 'float64'")
        if self.normal_loss_updates not in ("both", "gaussians", "sdf"):
            raise ValueError("normal_loss_updates must be 'both', 'gaussians' or 'sdf'")

    @property
    def densify_until_iter(self) -> int:
        return int(self.total_iters * self.densify_until_frac)

    def replace(self, **changes) -> TrainConfig:
        d = asdict(self)
        d.update(changes)
        return TrainConfig(**d)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> TrainConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))
