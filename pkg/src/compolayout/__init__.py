"""Layout lifting and collision-aware layout refinement for point-splat scenes."""

from .collision import CollisionReport, collision_grad, collision_loss_pair, collision_loss_scene, mean_sparsity
from .errors import CompoLayoutError, NumericError, ValidationError
from .guidance import (
    ExternalGuidance,
    FeatureVec,
    ReferenceFeatureGuidance,
    SilhouetteDepthDescriptor,
    StubZeroGuidance,
    TimestepSchedule,
    extract_default_feature,
    masked_reference_feature,
    normal_smooth_loss,
    reference_loss,
    sample_timestep,
    tv_loss,
)
from .kernels import BACKEND
from .layout_init import (
    DepthInput,
    build_pose_grid,
    estimate_rotation,
    init_depth_z,
    init_scale,
    init_translation_xy,
)
from .optimizer import (
    InstanceRefineConfig,
    LayoutOptConfig,
    OptTrace,
    ReferenceTarget,
    assemble_instance_loss,
    feature_loss_gradient,
    refine_layout,
    refinement_plan,
)
from .raster import CameraModel, RenderBuffers, default_camera, normals_from_depth, render, scene_camera
from .scene import (
    BBox2D,
    GaussianCloud,
    InstanceTransform,
    LayoutSpec,
    Pose,
    Scene,
    SceneInstance,
    apply_transform,
    compose_scene,
    normalize_cloud,
)

__version__ = "0.1.0"
