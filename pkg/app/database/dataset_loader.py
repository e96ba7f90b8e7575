import logging
from pathlib import Path
from typing import Tuple

import numpy as np
import pandas as pd

from app.services.manage_data.interactions import InteractionMatrix
from app.utils.exceptions import DataError

logger = logging.getLogger(__name__)

FORMATS = {
    "movielens-tab": {"sep": "\t", "engine": "c"},
    "movielens-double-colon": {"sep": "::", "engine": "python"},
}
POSITIONAL_COLUMNS = ["user", "item", "rating", "timestamp"]
COLUMN_ALIASES = {
    "user": {"user", "user_id", "userid", "uid"},
    "item": {"item", "item_id", "itemid", "movie_id", "movieid", "business_id", "iid"},
    "rating": {"rating", "score", "stars"},
    "timestamp": {"timestamp", "time", "ts", "unix_time"},
}


def _read_raw(path: Path, fmt: str) -> Tuple[pd.DataFrame, int]:
    """Frame of string columns plus the file line number of row 0."""
    try:
        if fmt == "csv":
            frame = pd.read_csv(path, dtype=str, skip_blank_lines=False)
            columns = {}
            for column in frame.columns:
                for role, aliases in COLUMN_ALIASES.items():
                    if column.strip().lower() in aliases and role not in columns.values():
                        columns[column] = role
            frame = frame.rename(columns=columns)[list(dict.fromkeys(columns.values()))]
            first_line = 2
        elif fmt in FORMATS:
            frame = pd.read_csv(path, header=None, dtype=str, skip_blank_lines=False, **FORMATS[fmt])
            if not 2 <= frame.shape[1] <= 4:
                raise DataError(f"{path}: expected 2 to 4 fields per line, found {frame.shape[1]}")
            frame.columns = POSITIONAL_COLUMNS[:frame.shape[1]]
            first_line = 1
        else:
            raise DataError(f"unknown dataset format '{fmt}'")
    except FileNotFoundError as e:
        raise DataError(f"dataset file not found: {path}") from e
    except pd.errors.EmptyDataError as e:
        raise DataError(f"{path}: file is empty") from e
    except pd.errors.ParserError as e:
        raise DataError(f"{path}: malformed input ({e})") from e

    if "user" not in frame.columns or "item" not in frame.columns:
        raise DataError(f"{path}: header must name a user column and an item column")
    # Blank lines come through as all-missing rows
    frame = frame[frame.notna().any(axis=1)].copy()
    return frame, first_line


def _first_bad_line(mask: pd.Series, first_line: int) -> int:
    return int(mask[mask].index[0]) + first_line


def _dense_ids(labels: pd.Series) -> Tuple[np.ndarray, list]:
    uniques = labels.unique().tolist()
    numeric = all(label.lstrip("-").isdigit() for label in uniques)
    ordered = sorted(uniques, key=int) if numeric else sorted(uniques)
    index = {label: i for i, label in enumerate(ordered)}
    return labels.map(index).to_numpy(dtype=np.int64), ordered


def load_interactions(path, format: str = "movielens-tab", min_user_interactions: int = 1,
                      min_item_interactions: int = 1) -> InteractionMatrix:
    """
    Read an implicit-feedback file into a binary InteractionMatrix.

    Every observed (user, item) record becomes a 1, whatever its rating;
    repeated pairs count once and keep their latest timestamp. Users and items
    below the thresholds are removed repeatedly until both hold, then ids are
    remapped to dense ranges (numerically when the raw labels are integers).

    Args:
        path: Dataset file.
        format (str): "movielens-tab" (user<TAB>item<TAB>rating<TAB>timestamp),
            "movielens-double-colon" (user::item::rating::timestamp) or "csv"
            (header naming the columns).
        min_user_interactions (int): Retention threshold for users.
        min_item_interactions (int): Retention threshold for items.

    Returns:
        InteractionMatrix: With timestamps when the file has them, and the raw labels.

    Raises:
        DataError: On unreadable or malformed records (with the line number), or
            when nothing survives filtering.
    """
    path = Path(path)
    frame, first_line = _read_raw(path, format)

    # Step 1: validate records
    for column in ("user", "item"):
        frame[column] = frame[column].str.strip()
        missing = frame[column].isna() | (frame[column] == "")
        if missing.any():
            raise DataError(f"{path}: line {_first_bad_line(missing, first_line)}: missing {column} id")
    timestamps = None
    if "timestamp" in frame.columns:
        parsed = pd.to_numeric(frame["timestamp"], errors="coerce")
        bad = parsed.isna() | (parsed != parsed.round())
        if bad.any():
            raise DataError(f"{path}: line {_first_bad_line(bad, first_line)}: timestamp is not an integer")
        timestamps = parsed.astype(np.int64)

    records = pd.DataFrame({"user": frame["user"], "item": frame["item"]})
    if timestamps is not None:
        records["timestamp"] = timestamps

    # Step 2: one record per pair, latest first
    if timestamps is not None:
        records = records.sort_values("timestamp", kind="stable")
    records = records.drop_duplicates(["user", "item"], keep="last")

    # Step 3: drop short users and items until both thresholds hold
    while True:
        user_counts = records["user"].map(records["user"].value_counts())
        item_counts = records["item"].map(records["item"].value_counts())
        keep = (user_counts >= min_user_interactions) & (item_counts >= min_item_interactions)
        if keep.all():
            break
        records = records[keep]
    if records.empty:
        raise DataError(
            f"{path}: no interactions left after filtering (users >= {min_user_interactions}, "
            f"items >= {min_item_interactions})"
        )

    # Step 4: dense ids
    users, user_labels = _dense_ids(records["user"])
    items, item_labels = _dense_ids(records["item"])
    matrix = InteractionMatrix.from_pairs(
        users,
        items,
        timestamps=records["timestamp"].to_numpy() if timestamps is not None else None,
        num_users=len(user_labels),
        num_items=len(item_labels),
        raw_user_ids=user_labels,
        raw_item_ids=item_labels,
    )
    logger.info(f"[Dataset] Loaded {matrix.num_users} users, {matrix.num_items} items, "
                f"{matrix.nnz} interactions from {path}")
    return matrix
