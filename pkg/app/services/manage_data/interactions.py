from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from app.utils.exceptions import DataError


@dataclass(frozen=True, eq=False)
class InteractionMatrix:
    """
    Binary user-item matrix R built from (user, item) pairs.

    Pairs are kept sorted by (user, item) with duplicates removed, so the CSR
    row view stores them in the same order as `users`/`items`/`timestamps`.
    Instances are immutable and safe to share between threads.
    """

    num_users: int
    num_items: int
    users: np.ndarray
    items: np.ndarray
    timestamps: Optional[np.ndarray] = None
    raw_user_ids: Optional[Tuple[str, ...]] = None
    raw_item_ids: Optional[Tuple[str, ...]] = None
    rows: sp.csr_matrix = field(init=False, repr=False)
    cols: sp.csc_matrix = field(init=False, repr=False)
    item_rows: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        indptr = np.zeros(self.num_users + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.users, minlength=self.num_users), out=indptr[1:])
        data = np.ones(len(self.items), dtype=np.float64)
        rows = sp.csr_matrix((data, self.items.copy(), indptr), shape=(self.num_users, self.num_items))
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", rows.tocsc())
        object.__setattr__(self, "item_rows", rows.T.tocsr())
        for array in (self.users, self.items) + ((self.timestamps,) if self.timestamps is not None else ()):
            array.flags.writeable = False

    @classmethod
    def from_pairs(
        cls,
        users: Sequence[int],
        items: Sequence[int],
        timestamps: Optional[Sequence[int]] = None,
        num_users: Optional[int] = None,
        num_items: Optional[int] = None,
        raw_user_ids: Optional[Sequence[str]] = None,
        raw_item_ids: Optional[Sequence[str]] = None,
    ) -> "InteractionMatrix":
        """
        Build a matrix from parallel id arrays.

        Args:
            users, items: Dense ids of each observed pair.
            timestamps (optional): Seconds per pair; a duplicated pair keeps its latest timestamp.
            num_users, num_items (optional): Matrix shape; inferred from the largest id when omitted.
            raw_user_ids, raw_item_ids (optional): Original labels indexed by dense id.

        Raises:
            DataError: If ids are negative or outside the given shape.
        """
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if users.shape != items.shape:
            raise DataError("users and items must have the same length")
        num_users = int(num_users if num_users is not None else (users.max() + 1 if users.size else 0))
        num_items = int(num_items if num_items is not None else (items.max() + 1 if items.size else 0))
        if num_users <= 0 or num_items <= 0:
            raise DataError("interaction matrix would be empty")
        if users.size and (users.min() < 0 or users.max() >= num_users or items.min() < 0 or items.max() >= num_items):
            raise DataError(f"ids out of range for a {num_users}x{num_items} matrix")

        if timestamps is not None:
            timestamps = np.asarray(timestamps, dtype=np.int64)
            # Latest timestamp first within each (user, item) group
            order = np.lexsort((-timestamps, items, users))
        else:
            order = np.lexsort((items, users))
        keys = users[order] * num_items + items[order]
        _, first = np.unique(keys, return_index=True)
        keep = order[first]

        return cls(
            num_users=num_users,
            num_items=num_items,
            users=users[keep],
            items=items[keep],
            timestamps=timestamps[keep] if timestamps is not None else None,
            raw_user_ids=tuple(raw_user_ids) if raw_user_ids is not None else None,
            raw_item_ids=tuple(raw_item_ids) if raw_item_ids is not None else None,
        )

    @property
    def nnz(self) -> int:
        return int(self.users.size)

    @property
    def has_timestamps(self) -> bool:
        return self.timestamps is not None

    def _check(self, side: str, entity: int) -> None:
        bound = self.num_users if side == "user" else self.num_items
        if not 0 <= entity < bound:
            raise DataError(f"{side} id {entity} out of range [0, {bound})")

    def items_of(self, user: int) -> np.ndarray:
        self._check("user", user)
        return self.rows.indices[self.rows.indptr[user]:self.rows.indptr[user + 1]]

    def users_of(self, item: int) -> np.ndarray:
        self._check("item", item)
        return self.cols.indices[self.cols.indptr[item]:self.cols.indptr[item + 1]]

    def timestamps_of(self, user: int) -> np.ndarray:
        if self.timestamps is None:
            raise DataError("matrix carries no timestamps")
        self._check("user", user)
        return self.timestamps[self.rows.indptr[user]:self.rows.indptr[user + 1]]

    def row_span(self, user: int) -> slice:
        return slice(int(self.rows.indptr[user]), int(self.rows.indptr[user + 1]))

    def user_counts(self) -> np.ndarray:
        return np.diff(self.rows.indptr)

    def side_matrix(self, side: str) -> sp.csr_matrix:
        """Rows are interaction vectors: users over items, or items over users."""
        if side == "user":
            return self.rows
        if side == "item":
            return self.item_rows
        raise ValueError(f"side must be 'user' or 'item', got {side!r}")

    def subset(self, mask: np.ndarray) -> "InteractionMatrix":
        """Keep the pairs selected by a boolean mask over `users`/`items`; the shape is unchanged."""
        return InteractionMatrix(
            num_users=self.num_users,
            num_items=self.num_items,
            users=self.users[mask].copy(),
            items=self.items[mask].copy(),
            timestamps=self.timestamps[mask].copy() if self.timestamps is not None else None,
            raw_user_ids=self.raw_user_ids,
            raw_item_ids=self.raw_item_ids,
        )


@dataclass(frozen=True, eq=False)
class Split:
    """
    Leave-one-out partition of an InteractionMatrix.

    `eval_users[j]` is held out with `validation_items[j]` and `test_items[j]`
    and ranked against `negatives[j]`. Users too short to split stay in `train`
    with all their interactions and are listed in `dropped_users`.
    """

    train: InteractionMatrix
    eval_users: np.ndarray
    validation_items: np.ndarray
    test_items: np.ndarray
    negatives: np.ndarray
    dropped_users: Tuple[int, ...] = ()
    _position: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_position", {int(u): j for j, u in enumerate(self.eval_users)})
        for array in (self.eval_users, self.validation_items, self.test_items, self.negatives):
            array.flags.writeable = False

    @property
    def num_users(self) -> int:
        return self.train.num_users

    @property
    def num_items(self) -> int:
        return self.train.num_items

    @property
    def num_negatives(self) -> int:
        return int(self.negatives.shape[1]) if self.negatives.ndim == 2 else 0

    def held_out(self, user: int) -> Tuple[int, int]:
        """(validation item, test item) of an evaluated user."""
        j = self._position[user]
        return int(self.validation_items[j]), int(self.test_items[j])

    def negatives_of(self, user: int) -> np.ndarray:
        return self.negatives[self._position[user]]

    def history(self, user: int) -> np.ndarray:
        """Every item the user interacted with in the full matrix."""
        items = self.train.items_of(user)
        if user in self._position:
            items = np.union1d(items, self.held_out(user))
        return items

    def validation_pairs(self) -> np.ndarray:
        return np.column_stack([self.eval_users, self.validation_items])

    def test_pairs(self) -> np.ndarray:
        return np.column_stack([self.eval_users, self.test_items])
