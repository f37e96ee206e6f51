from .losses import depth_distortion_loss, depth_normal_consistency_loss, rgb_loss, ssim_map
from .reference import reference_render
from .render import (
    Fragments,
    GaussianGrads,
    RenderOutput,
    RenderUpstream,
    ray_disk_intersect,
    rasterize,
    render,
    render_backward,
)
