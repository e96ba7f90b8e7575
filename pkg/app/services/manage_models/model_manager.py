import logging
from pathlib import Path
from typing import Dict

from app.database.checkpoint_store import load_checkpoint
from app.models.params import ModelParams

logger = logging.getLogger(__name__)


class ModelManager:
    """Keeps loaded parameter snapshots by name so commands share one copy."""

    def __init__(self):
        self.models: Dict[str, ModelParams] = {}
        self.sources: Dict[str, Path] = {}

    def load_checkpoint(self, path, name: str = "default") -> ModelParams:
        """
        Load a checkpoint and register it under `name`.

        Args:
            path: Checkpoint file written by `save_checkpoint`.
            name (str): Registry key.

        Returns:
            ModelParams: The loaded snapshot.

        Raises:
            CheckpointError: If the file is missing or corrupt.
        """
        path = Path(path)
        params = load_checkpoint(path)
        self.register(name, params, source=path)
        logger.info(f"[ModelManager] Loaded '{name}' ({params.config.variant}, d={params.embedding_dim}) from {path}")
        return params

    def register(self, name: str, params: ModelParams, source: Path = None) -> None:
        self.models[name] = params
        if source is not None:
            self.sources[name] = source
        else:
            self.sources.pop(name, None)

    def get_model(self, model_name: str) -> ModelParams:
        """
        Retrieve a loaded snapshot by its name.

        Raises:
            KeyError: If the model name is not registered.
        """
        if model_name not in self.models:
            raise KeyError(f"Model '{model_name}' not found. Available models: {list(self.models.keys())}")
        return self.models[model_name]

    def cleanup_models(self) -> None:
        logger.debug("[ModelManager] Releasing loaded models")
        self.models.clear()
        self.sources.clear()


# Global model manager instance
model_manager = ModelManager()
