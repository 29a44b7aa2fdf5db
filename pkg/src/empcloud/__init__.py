"""empcloud: wireless echo simulation and diffusion-based reconstruction of
aerial targets as 5D electromagnetic point clouds."""

__version__ = "0.1.0"

from .config import RunConfig, desk_profile, load_config, paper_profile  # noqa: F401
from .scene import EmPoint, EmPointCloud, Pose, RegionSpec, Trajectory, UavShape  # noqa: F401
