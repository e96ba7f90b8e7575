import logging
from pathlib import Path
from typing import Mapping, Optional

from dotenv import dotenv_values, load_dotenv
from pydantic import ValidationError

from app.schemas.config import DATASET_PRESETS, RunConfig
from app.utils.exceptions import ConfigError

load_dotenv()

logger = logging.getLogger(__name__)

RESOLVED_NAME = "resolved.{command}.conf"


def _normalize(raw: Mapping[str, Optional[str]], source: str) -> dict:
    values = {}
    for key, value in raw.items():
        if value is None:
            raise ConfigError(f"{source}: key '{key}' has no value (expected key=value)")
        values[key.strip().lower().replace("-", "_")] = value
    return values


def read_config_file(path) -> dict:
    """
    Parse a key=value run configuration file.

    Raises:
        ConfigError: If the file is missing or a line has no value.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config '{path}' not found.")
    return _normalize(dotenv_values(path), str(path))


def get_run_config(path=None, overrides: Mapping[str, object] = None) -> RunConfig:
    """
    Resolve a RunConfig from an optional file plus command-line overrides.

    Precedence, lowest first: dataset preset, file, overrides.

    Args:
        path (optional): key=value config file.
        overrides (Mapping[str, object], optional): Values from flags; None values are ignored.

    Returns:
        RunConfig: The validated configuration.

    Raises:
        ConfigError: On unknown keys or presets, or values that fail validation.
    """
    values = read_config_file(path) if path is not None else {}
    values.update(_normalize({k: v for k, v in (overrides or {}).items() if v is not None}, "overrides"))

    unknown = sorted(set(values) - set(RunConfig.model_fields))
    if unknown:
        raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")

    preset = values.get("preset")
    if preset is not None:
        if preset not in DATASET_PRESETS:
            raise ConfigError(f"Unknown preset '{preset}'. Available presets: {sorted(DATASET_PRESETS)}")
        values = {**DATASET_PRESETS[preset], **values}

    if "dataset_path" not in values:
        raise ConfigError("dataset_path is required (set it in the config file or with --set dataset_path=...)")
    try:
        return RunConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_format(item) for item in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_config(config: RunConfig) -> str:
    lines = [f"{key}={_format(value)}" for key, value in config.model_dump().items() if value is not None]
    return "\n".join(lines) + "\n"


def write_resolved_config(config: RunConfig, directory, command: str) -> Path:
    """Echo the fully resolved configuration as `resolved.<command>.conf`; `--config` on that file reproduces the run."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / RESOLVED_NAME.format(command=command)
    path.write_text(render_config(config), encoding="utf-8")
    return path
