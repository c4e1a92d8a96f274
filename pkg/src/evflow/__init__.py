"""evflow: deterministic event-camera data engine.

Renders procedural planar scenes along spline camera trajectories,
simulates contrast-threshold event streams at controllable densities,
emits exact optical-flow ground truth, and evaluates predictions.
"""

from .core import (
    Event,
    EventStream,
    FlowField,
    Frame,
    InvalidWindowError,
    Pose,
    Trajectory,
    ValidationReport,
    slice_by_time,
    validate_stream,
)
from .metrics import EvalReport, epe, evaluate, outlier_pct
from .representation import VoxelGrid, density, valid_mask, voxelize
from .sampler import PathologicalMotionError, SampleSchedule, plan_schedule
from .scene import (
    CameraIntrinsics,
    GenerationError,
    PlanarScene,
    PlaneTexture,
    SceneConfig,
    ScenePlane,
    TrajectoryConfig,
    analytic_flow,
    gen_scene,
    gen_trajectory,
    max_displacement,
    pose_at,
    render_frame,
)
from .simulator import AlignmentError, SimulatorConfig, generate_events, log_transform, multi_density

__version__ = "0.1.0"
