from pydantic import BaseModel, ConfigDict, Field, model_validator


class ModelConfig(BaseModel):
    """
    Encoder dimensions. Defaults are desk scale; the published model used
    layers=12, hidden=768, max_len=256.
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    layers: int = Field(2, ge=1)
    hidden: int = Field(64, ge=1)
    heads: int = Field(4, ge=1)
    ffn_mult: int = Field(4, ge=1)
    vocab_size: int = Field(..., ge=1)
    max_len: int = Field(128, ge=8)
    segment_count: int = Field(3, ge=1)
    dropout_rate: float = Field(0.0, ge=0.0, lt=1.0)
    num_classes: int = Field(0, ge=0)

    @model_validator(mode="after")
    def check_heads(self):
        if self.hidden % self.heads != 0:
            raise ValueError(f"hidden={self.hidden} is not divisible by heads={self.heads}")
        return self

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    @property
    def ffn_dim(self) -> int:
        return self.hidden * self.ffn_mult
