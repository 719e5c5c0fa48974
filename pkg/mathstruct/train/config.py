from typing import Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..inputs.sampling import CCP_SWAP_RATE, MLM_RATE, MSP_NODE_RATE
from ..inputs.types import Ablation


class TrainConfig(BaseModel):
    """
    Optimisation and sampling knobs for pre-training and fine-tuning.
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = 0
    batch_size: int = Field(8, ge=1)
    steps: int = Field(100, ge=1)
    learning_rate: float = Field(2e-5, gt=0.0)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = Field(1e-8, gt=0.0)
    ablation: Ablation = Ablation.FULL
    mlm_rate: float = MLM_RATE
    ccp_rate: float = CCP_SWAP_RATE
    msp_rate: float = MSP_NODE_RATE
    checkpoint_every: int = Field(0, ge=0)
    log_every: int = Field(1, ge=1)
    warmup_steps: int = Field(0, ge=0)
    msp_mask_node_id: bool = False

    @field_validator("mlm_rate", "ccp_rate", "msp_rate")
    @classmethod
    def validate_rate(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"rate must lie in [0, 1], got {v}")
        return v

    @field_validator("beta1", "beta2")
    @classmethod
    def validate_beta(cls, v):
        if not 0.0 <= v < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {v}")
        return v

    @property
    def betas(self) -> Tuple[float, float]:
        return self.beta1, self.beta2

    def lr_at(self, step: int) -> float:
        """Learning rate for 1-based step, with optional linear warmup."""
        if self.warmup_steps and step <= self.warmup_steps:
            return self.learning_rate * step / self.warmup_steps
        return self.learning_rate
