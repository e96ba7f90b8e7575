from typing import Dict, Optional
from pydantic import BaseModel, ConfigDict, Field

class RankResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    user: int = Field(..., ge=0)
    rank: int = Field(..., ge=1)  # 1-based among the test item and its negatives

class Metrics(BaseModel):
    """HR@k and NDCG@k keyed by k, over `num_users` ranked users."""

    hr: Dict[int, float]
    ndcg: Dict[int, float]
    num_users: int

    def as_table(self) -> Dict[str, Dict[str, float]]:
        return {str(k): {"hr": self.hr[k], "ndcg": self.ndcg[k]} for k in sorted(self.hr)}

# Serialized shape of metrics.json and of each robustness.json record
class MetricsReport(BaseModel):
    dataset: str
    variant: str
    seed: int
    metrics: Dict[str, Dict[str, float]]
    num_users: int
    noise_level: Optional[float] = None
    noise_mode: Optional[str] = None

    @classmethod
    def from_metrics(cls, metrics: Metrics, dataset: str, variant: str, seed: int, **extra) -> "MetricsReport":
        return cls(
            dataset=dataset,
            variant=variant,
            seed=seed,
            metrics=metrics.as_table(),
            num_users=metrics.num_users,
            **extra,
        )
