class DaveError(Exception):
    """Base error for the recommender. `exit_code` is what the CLI returns when it escapes a command."""

    exit_code = 1
    code = "DAVE_ERROR"

    def __init__(self, message: str, code: str = None):
        super().__init__(message)
        self.message = message
        if code:
            self.code = code


class ConfigError(DaveError):
    exit_code = 2
    code = "CONFIG_ERROR"


class DataError(DaveError):
    exit_code = 3
    code = "DATA_ERROR"


class CheckpointError(DataError):
    code = "CHECKPOINT_ERROR"


class ExportError(DataError):
    code = "EXPORT_ERROR"


class TrainingAbort(DaveError):
    exit_code = 4
    code = "TRAINING_ABORT"


class ShapeError(DaveError):
    """Raised by the tape when a primitive receives incompatible shapes."""

    exit_code = 4
    code = "SHAPE_ERROR"

    def __init__(self, message: str, node_id: int = None):
        super().__init__(f"node {node_id}: {message}" if node_id is not None else message)
        self.node_id = node_id


class NonFiniteError(DaveError):
    """Raised when a node produces NaN/Inf, or a gradient is non-finite."""

    exit_code = 4
    code = "NON_FINITE"

    def __init__(self, message: str, node_id: int = None):
        super().__init__(f"node {node_id}: {message}" if node_id is not None else message)
        self.node_id = node_id
