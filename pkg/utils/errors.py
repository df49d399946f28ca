"""Error types raised across the lab"""


class LabError(Exception):
    """Base class for every error the lab raises on purpose"""


class ConfigurationError(LabError, ValueError):
    """Invalid hyperparameters or shapes that do not conform for an op"""


class InputError(LabError, ValueError):
    """Bad data handed to an operation (ids, masks, empty sets)"""


class NumericalError(LabError, RuntimeError):
    """A NaN or infinity appeared where a finite value is required"""

    def __init__(self, message: str, diagnostics: dict = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class GraphError(LabError, RuntimeError):
    """Backward was asked for a tensor the recorded graph never saw"""


class CheckpointError(LabError, ValueError):
    """Checkpoint bytes do not match the expected format or config"""
