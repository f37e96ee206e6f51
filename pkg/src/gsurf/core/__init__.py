from .config import TrainConfig
from .io import (
    Checkpoint,
    CheckpointError,
    PlyError,
    PointCloud,
    export_mesh_ply,
    export_pointcloud_ply,
    import_mesh_ply,
    import_pointcloud_ply,
    load_cameras,
    load_checkpoint,
    read_pfm,
    read_png,
    save_cameras,
    save_checkpoint,
    write_pfm,
    write_png,
)
from .types import (
    Camera,
    GaussianPrimitive,
    GaussianSet,
    TriangleMesh,
    logistic,
    logit,
    matrix_to_quaternion,
    normalize_quaternions,
    orthonormalize_frame,
    quaternion_matrix_backward,
    quaternion_to_matrix,
)
