import logging
from pathlib import Path
from typing import Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError

from app.schemas.split import SplitManifest
from app.services.manage_data.interactions import InteractionMatrix, Split
from app.utils.exceptions import DataError

logger = logging.getLogger(__name__)

PARTITIONS = ("train", "validation", "test")


def _write_pairs(path: Path, users: np.ndarray, items: np.ndarray) -> None:
    pd.DataFrame({"user": users, "item": items}).to_csv(path, sep="\t", header=False, index=False)


def _read_pairs(path: Path) -> Tuple[np.ndarray, np.ndarray]:
    if not path.is_file():
        raise DataError(f"split file missing: {path}")
    try:
        frame = pd.read_csv(path, sep="\t", header=None, names=["user", "item"], dtype=np.int64)
    except pd.errors.EmptyDataError:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    except (ValueError, pd.errors.ParserError) as e:
        raise DataError(f"{path}: malformed split file ({e})") from e
    return frame["user"].to_numpy(), frame["item"].to_numpy()


def save_split(split: Split, directory, manifest: SplitManifest) -> Path:
    """
    Persist a split as text files.

    Layout: train.txt, validation.txt and test.txt with "user<TAB>item" lines,
    negatives.txt with "user<TAB>i1,i2,...", manifest.json, and the raw id
    labels in user_ids.txt / item_ids.txt when known.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _write_pairs(directory / "train.txt", split.train.users, split.train.items)
    _write_pairs(directory / "validation.txt", split.eval_users, split.validation_items)
    _write_pairs(directory / "test.txt", split.eval_users, split.test_items)
    lines = [f"{user}\t{','.join(str(item) for item in row)}" for user, row in zip(split.eval_users, split.negatives)]
    (directory / "negatives.txt").write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    for name, labels in (("user_ids.txt", split.train.raw_user_ids), ("item_ids.txt", split.train.raw_item_ids)):
        if labels is not None:
            (directory / name).write_text("".join(f"{label}\n" for label in labels), encoding="utf-8")
    (directory / "manifest.json").write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info(f"[Split] Saved split of {manifest.dataset} to {directory}")
    return directory


def load_split(directory) -> Tuple[Split, SplitManifest]:
    """
    Read a split written by `save_split`.

    Raises:
        DataError: If a file is missing or malformed, or the partitions disagree.
    """
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise DataError(f"no prepared split at {directory} (run the prepare command first)")
    try:
        manifest = SplitManifest.model_validate_json(manifest_path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise DataError(f"{manifest_path}: invalid manifest ({e})") from e

    raw = {}
    for side, name in (("user", "user_ids.txt"), ("item", "item_ids.txt")):
        path = directory / name
        raw[side] = tuple(path.read_text(encoding="utf-8").splitlines()) if path.is_file() else None

    train = InteractionMatrix.from_pairs(
        *_read_pairs(directory / "train.txt"),
        num_users=manifest.num_users,
        num_items=manifest.num_items,
        raw_user_ids=raw["user"],
        raw_item_ids=raw["item"],
    )
    val_users, val_items = _read_pairs(directory / "validation.txt")
    test_users, test_items = _read_pairs(directory / "test.txt")
    if not np.array_equal(val_users, test_users):
        raise DataError(f"{directory}: validation and test list different users")

    negatives_path = directory / "negatives.txt"
    if not negatives_path.is_file():
        raise DataError(f"split file missing: {negatives_path}")
    negative_users, negatives = [], []
    for number, line in enumerate(negatives_path.read_text(encoding="utf-8").splitlines(), start=1):
        try:
            user, items = line.split("\t")
            negative_users.append(int(user))
            negatives.append([int(item) for item in items.split(",")])
        except ValueError as e:
            raise DataError(f"{negatives_path}: line {number}: malformed negatives ({e})") from e
        if len(negatives[-1]) != manifest.num_negatives:
            raise DataError(f"{negatives_path}: line {number}: expected {manifest.num_negatives} negatives, "
                            f"found {len(negatives[-1])}")
    if negative_users != test_users.tolist():
        raise DataError(f"{negatives_path}: users do not match test.txt")
    negatives = np.asarray(negatives, dtype=np.int64).reshape(len(negative_users), manifest.num_negatives)

    split = Split(
        train=train,
        eval_users=test_users,
        validation_items=val_items,
        test_items=test_items,
        negatives=negatives,
        dropped_users=tuple(manifest.dropped_users),
    )
    return split, manifest
