"""Contact-point grasp synthesis toolkit.

Wrench-space force-closure labeling, geometric candidate filtering, gripper
featurization from URDF, a staged learned point-set selector, dataset
tooling, and evaluation baselines.
"""

__version__ = "0.1.0"

from ._accel import backend_name

__all__ = ["backend_name", "__version__"]
