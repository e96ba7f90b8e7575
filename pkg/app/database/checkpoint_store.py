import json
import logging
import os
import struct
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from app.models.params import ModelParams, layer_shapes
from app.schemas.config import ModelConfig
from app.utils.diffcore import frozen
from app.utils.exceptions import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"DAVE1"
_LENGTH = struct.Struct("<I")
_COUNT = struct.Struct("<Q")


def _manifest(params: ModelParams) -> bytes:
    config = params.config
    manifest = {
        "embedding_dim": config.embedding_dim,
        "num_users": config.num_users,
        "num_items": config.num_items,
        "variant": config.variant,
        "widths": {
            "encoder": list(config.encoder_hidden),
            "decoder": list(config.decoder_hidden),
            "discriminator": list(config.discriminator_hidden),
            "predictor": list(config.predictor_hidden),
        },
        "tensors": [[name, list(tensor.shape)] for name, tensor in params.tensors.items()],
    }
    return json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")


def checkpoint_bytes(params: ModelParams) -> bytes:
    """
    Serialize parameters: magic, uint32 manifest length, JSON manifest, then
    per tensor a uint64 element count and its float64 values, all little-endian.
    """
    manifest = _manifest(params)
    parts = [MAGIC, _LENGTH.pack(len(manifest)), manifest]
    for tensor in params.tensors.values():
        parts.append(_COUNT.pack(tensor.size))
        parts.append(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(params: ModelParams, path) -> Path:
    """Write a checkpoint atomically; an existing file is only replaced once the new one is complete."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(checkpoint_bytes(params))
        os.replace(tmp, path)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e
    logger.info(f"[Checkpoint] Saved {params.num_parameters} parameters to {path}")
    return path


def load_checkpoint(path) -> ModelParams:
    """
    Read a checkpoint written by `save_checkpoint`.

    Raises:
        CheckpointError: If the file is missing, has a bad magic or manifest,
            is truncated, or carries trailing bytes.
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e

    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic, not a DAVE1 checkpoint")
    offset = len(MAGIC)
    if len(blob) < offset + _LENGTH.size:
        raise CheckpointError(f"{path}: truncated before the manifest length")
    (length,) = _LENGTH.unpack_from(blob, offset)
    offset += _LENGTH.size
    if len(blob) < offset + length:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(blob[offset:offset + length].decode("utf-8"))
        widths = manifest["widths"]
        config = ModelConfig(
            num_users=manifest["num_users"],
            num_items=manifest["num_items"],
            embedding_dim=manifest["embedding_dim"],
            encoder_hidden=tuple(widths["encoder"]),
            decoder_hidden=tuple(widths["decoder"]),
            discriminator_hidden=tuple(widths["discriminator"]),
            predictor_hidden=tuple(widths["predictor"]),
            variant=manifest["variant"],
        )
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValidationError) as e:
        raise CheckpointError(f"{path}: unreadable manifest ({e})") from e
    offset += length

    layout = [[name, list(shape)] for name, shape in layer_shapes(config)]
    if manifest.get("tensors") != layout:
        raise CheckpointError(f"{path}: tensor list does not match the {config.variant} layout")

    tensors = {}
    for name, shape in layer_shapes(config):
        if len(blob) < offset + _COUNT.size:
            raise CheckpointError(f"{path}: truncated at tensor '{name}'")
        (count,) = _COUNT.unpack_from(blob, offset)
        offset += _COUNT.size
        expected = int(np.prod(shape))
        if count != expected:
            raise CheckpointError(f"{path}: tensor '{name}' has {count} values, expected {expected}")
        end = offset + 8 * count
        if len(blob) < end:
            raise CheckpointError(f"{path}: truncated inside tensor '{name}'")
        values = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)
        tensors[name] = frozen(values)
        offset = end
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} unexpected trailing bytes")
    return ModelParams(config=config, tensors=tensors)
