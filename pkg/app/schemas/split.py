from typing import List, Optional
from pydantic import BaseModel, Field

class SplitManifest(BaseModel):
    """Provenance of a persisted split, written as manifest.json next to the partition files."""

    dataset: str
    seed: int
    policy: str
    min_user_interactions: int = 1
    min_item_interactions: int = 1
    num_users: int
    num_items: int
    num_negatives: int = 99
    num_train: int
    dropped_users: List[int] = Field(default_factory=list)
    source: Optional[str] = None
