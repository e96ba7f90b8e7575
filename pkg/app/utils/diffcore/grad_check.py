from typing import Iterable, Mapping

import numpy as np

from app.utils.diffcore.tape import Tape, backward, forward


def _loss_at(tape: Tape, inputs: Mapping[str, np.ndarray], loss_node: int) -> float:
    forward(tape, inputs)
    return float(tape.values[loss_node].reshape(()))


def grad_check(
    tape: Tape,
    inputs: Mapping[str, np.ndarray],
    loss_node: int,
    epsilon: float = 1e-5,
    wrt: Iterable[str] = None,
) -> float:
    """
    Compare backward gradients with central finite differences.

    Args:
        tape (Tape): Graph of a scalar-valued function.
        inputs (Mapping[str, np.ndarray]): Point at which to check.
        loss_node (int): Scalar node to differentiate.
        epsilon (float): Perturbation size in (0, 1e-3].
        wrt (Iterable[str], optional): Input names to check; all differentiable inputs by default.

    Returns:
        float: Worst componentwise relative error. Components where both
        gradients are below 1e-8 in magnitude contribute their absolute error.
    """
    if not 0.0 < epsilon <= 1e-3:
        raise ValueError(f"epsilon must be in (0, 1e-3], got {epsilon}")
    inputs = {name: np.array(value, dtype=np.float64) for name, value in inputs.items()}

    forward(tape, inputs)
    analytic = backward(tape, loss_node)
    names = list(wrt) if wrt is not None else list(analytic)

    worst = 0.0
    for name in names:
        base = inputs[name]
        for index in np.ndindex(base.shape):
            plus, minus = base.copy(), base.copy()
            plus[index] += epsilon
            minus[index] -= epsilon
            f_plus = _loss_at(tape, {**inputs, name: plus}, loss_node)
            f_minus = _loss_at(tape, {**inputs, name: minus}, loss_node)
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            exact = float(analytic[name][index])
            error = abs(exact - numeric)
            magnitude = max(abs(exact), abs(numeric))
            worst = max(worst, error / magnitude if magnitude >= 1e-8 else error)

    # Leave the tape bound at the requested point
    forward(tape, inputs)
    return worst
