"""
Exception hierarchy for the contour snake pipeline
"""


class SnakeError(Exception):
    """Base error; carries the process exit code the CLI reports"""

    exit_code = 1

    def __init__(self, reason=None, detail=None):
        super().__init__(reason)
        self.reason = reason
        self.detail = detail

    def __str__(self):
        """Custom error messages for exception"""
        error_message = "({0}) {1}".format(type(self).__name__, self.reason)
        if self.detail:
            error_message += "\nDetail: {0}".format(self.detail)
        return error_message


class ShapeError(SnakeError):
    """Tensor or array dimensions do not agree"""
    exit_code = 2


DimensionError = ShapeError


class NumericError(SnakeError):
    """NaN or infinite values where finite ones are required"""
    exit_code = 3


class GeometryError(SnakeError):
    """Degenerate or inconsistent polygon, mask or box"""
    exit_code = 2


class DomainError(SnakeError):
    """Argument outside the domain of a function"""
    exit_code = 2


class GraphError(SnakeError):
    """Misuse of a recorded differentiation graph"""


class ConfigError(SnakeError):
    """Invalid or unknown configuration key"""
    exit_code = 2


class DataIOError(SnakeError):
    """Missing, unreadable or unwritable file"""
    exit_code = 2

    def __init__(self, reason=None, path=None):
        super().__init__(reason, detail=f"path: {path}" if path else None)
        self.path = path


class CheckpointError(SnakeError):
    """Checkpoint container with unknown magic or version"""
    exit_code = 2
