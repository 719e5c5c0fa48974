import json
import math
from pathlib import Path
from typing import List, Optional, Union

from pydantic import BaseModel, field_validator

from ..errors import ArtifactIOError


class TrainRecord(BaseModel):
    step: int
    loss_total: float
    loss_mlm: float = 0.0
    loss_ccp: float = 0.0
    loss_msp: float = 0.0
    loss_cls: float = 0.0
    mlm_masked_accuracy: Optional[float] = None
    ccp_accuracy: Optional[float] = None
    msp_pair_accuracy: Optional[float] = None
    cls_accuracy: Optional[float] = None

    @field_validator("loss_total", "loss_mlm", "loss_ccp", "loss_msp", "loss_cls")
    @classmethod
    def validate_finite(cls, v):
        if not math.isfinite(v):
            raise ValueError(f"loss is not finite: {v}")
        return v

    @field_validator("mlm_masked_accuracy", "ccp_accuracy", "msp_pair_accuracy", "cls_accuracy")
    @classmethod
    def validate_accuracy(cls, v):
        if v is not None and not 0.0 <= v <= 1.0:
            raise ValueError(f"accuracy outside [0, 1]: {v}")
        return v


def read_train_log(path: Union[str, Path]) -> List[TrainRecord]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return [TrainRecord(**json.loads(line)) for line in fh if line.strip()]
    except OSError as e:
        raise ArtifactIOError(str(path), e.strerror or str(e)) from e


def smoothed(values: List[float], window: int) -> List[float]:
    """Trailing moving average; entry i covers values[max(0, i-window+1) : i+1]."""
    out = []
    total = 0.0
    for i, v in enumerate(values):
        total += v
        if i >= window:
            total -= values[i - window]
        out.append(total / min(i + 1, window))
    return out
