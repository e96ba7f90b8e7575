import numpy as np

from app.utils.exceptions import NonFiniteError, ShapeError

DenseArray = np.ndarray


def as_dense(values, name: str = "array") -> DenseArray:
    """
    Convert input to a float64 DenseArray and validate it.

    Args:
        values: Anything numpy can turn into an array.
        name (str): Label used in error messages.

    Returns:
        DenseArray: A row-major float64 array.

    Raises:
        ShapeError: If any dimension is zero.
        NonFiniteError: If any value is NaN or Inf.
    """
    array = np.ascontiguousarray(values, dtype=np.float64)
    if any(size <= 0 for size in array.shape):
        raise ShapeError(f"'{name}' has an empty dimension: shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise NonFiniteError(f"'{name}' contains NaN or Inf")
    return array


def is_binary(values: DenseArray) -> bool:
    return bool(np.all((values == 0.0) | (values == 1.0)))


def frozen(array: DenseArray) -> DenseArray:
    # Read-only view for parameter snapshots shared across evaluators
    array = np.asarray(array, dtype=np.float64)
    array.flags.writeable = False
    return array
