from typing import Literal, Optional
from pydantic import BaseModel, computed_field

class BatchLosses(BaseModel):
    """
    Per-batch objective values in the maximize convention.

    The five headline components are batch means. `recon_*` and `reg_*` split each
    side's VAE term into its reconstruction log-likelihood and its regularizer
    (discriminator logit, negative KL, or fooling term depending on the variant).
    """

    disc_user: float = 0.0
    disc_item: float = 0.0
    vae_user: float = 0.0
    vae_item: float = 0.0
    prediction: float = 0.0
    recon_user: float = 0.0
    reg_user: float = 0.0
    recon_item: float = 0.0
    reg_item: float = 0.0

    @computed_field
    @property
    def total(self) -> float:
        # Generator-phase objective; discriminator terms are optimized separately
        return self.vae_user + self.vae_item + self.prediction

class StepRecord(BaseModel):
    kind: Literal["step"] = "step"
    epoch: int
    step: int
    disc_user: float
    disc_item: float
    vae_user: float
    vae_item: float
    prediction: float
    total: float
    objective: float
    skipped: bool = False

class EpochRecord(BaseModel):
    kind: Literal["epoch"] = "epoch"
    epoch: int
    validation_hr: float
    validation_ndcg: float
    k: int
    mean_prediction: float
    skipped_steps: int
    improved: bool
    wall_time: Optional[float] = None
