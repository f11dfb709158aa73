"""Exception taxonomy.

Maps onto the CLI exit codes: configuration problems (2), bad input data
(3), file-format violations (4), and numeric/solver indeterminacy (5).
"""


class GraspForgeError(Exception):
    """Base class for all package errors."""


class ConfigError(GraspForgeError):
    """Invalid or inconsistent configuration."""


class InputError(GraspForgeError):
    """Precondition violation on operation inputs."""


class FormatError(GraspForgeError):
    """Malformed file content (point clouds, meshes, checkpoints, shards)."""


class IndeterminateError(GraspForgeError):
    """A numeric routine could not produce a trustworthy result."""
