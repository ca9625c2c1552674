"""worldforge: procedural scene generation with pixel-exact ground truth.

City, object-pile and fragmentation scenes rendered by a deterministic CPU
renderer into RGB plus depth, optical flow, surface normals, segmentation,
stereo and event-camera annotation passes.
"""

__version__ = "0.1.0"

from .mesh import TriMesh  # noqa: F401
from .scene_anim import Scene, Timeline  # noqa: F401
