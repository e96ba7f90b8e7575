import logging
from pathlib import Path

import numpy as np
import pandas as pd

from app.models.networks import encode
from app.models.params import ModelParams
from app.services.manage_data.interactions import Split
from app.utils.exceptions import ExportError

logger = logging.getLogger(__name__)


def posterior_frame(params: ModelParams, split: Split, side: str, chunk_size: int = 2048) -> pd.DataFrame:
    """One row per entity: id, mu_0..mu_{d-1}, sigma_0..sigma_{d-1}."""
    matrix = split.train.side_matrix(side)
    means, stds = [], []
    for start in range(0, matrix.shape[0], chunk_size):
        posterior = encode(params, side, matrix[start:start + chunk_size].toarray())
        means.append(posterior.mean)
        stds.append(posterior.std)
    d = params.embedding_dim
    frame = pd.DataFrame(np.hstack([np.vstack(means), np.vstack(stds)]),
                         columns=[f"mu_{i}" for i in range(d)] + [f"sigma_{i}" for i in range(d)])
    frame.insert(0, "id", np.arange(matrix.shape[0]))
    return frame


def export_posteriors(params: ModelParams, split: Split, side: str, path) -> Path:
    """
    Write posterior means and standard deviations of every user or item as CSV.

    Raises:
        ExportError: If the path cannot be written.
    """
    path = Path(path)
    frame = posterior_frame(params, split, side)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False)
    except OSError as e:
        raise ExportError(f"cannot write posterior export {path}: {e}") from e
    logger.info(f"[Export] Wrote {len(frame)} {side} posteriors to {path}")
    return path
