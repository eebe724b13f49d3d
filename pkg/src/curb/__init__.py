"""curb: multi-agent collaborative mapping of synthetic towns.

Agents explore a deterministic grid town, run local odometry on panoptic
range scans, and stream keyframes to a central server that optimizes a
global pose graph, contracts redundant nodes, and assembles a six-layer
scene graph (city, partitions, landmarks, vehicles, lane graph, pose graph).
"""

__version__ = "0.1.0"

from .core import Pose, SemanticClass, SemanticPoint, SemanticPointCloud  # noqa: F401
