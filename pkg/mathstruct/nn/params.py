from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .config import ModelConfig

INIT_STD = 0.02


def parameter_shapes(cfg: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Every tensor of the model, in declaration (= checkpoint) order."""
    h, f, v = cfg.hidden, cfg.ffn_dim, cfg.vocab_size
    shapes: Dict[str, Tuple[int, ...]] = {
        "embed.token": (v, h),
        "embed.segment": (cfg.segment_count, h),
        "embed.position": (cfg.max_len, h),
    }
    for l in range(cfg.layers):
        p = f"layer{l}."
        for name in ("q", "k", "v", "o"):
            shapes[p + f"attn.w{name}"] = (h, h)
            shapes[p + f"attn.b{name}"] = (h,)
        shapes[p + "ln1.gamma"] = (h,)
        shapes[p + "ln1.beta"] = (h,)
        shapes[p + "ffn.w1"] = (h, f)
        shapes[p + "ffn.b1"] = (f,)
        shapes[p + "ffn.w2"] = (f, h)
        shapes[p + "ffn.b2"] = (h,)
        shapes[p + "ln2.gamma"] = (h,)
        shapes[p + "ln2.beta"] = (h,)
    shapes["mlm.w"] = (h, v)
    shapes["mlm.b"] = (v,)
    shapes["ccp.w"] = (h,)
    shapes["ccp.b"] = (1,)
    shapes["msp.wa"] = (h, h)
    shapes["msp.ba"] = (h,)
    shapes["msp.wb"] = (h, h)
    shapes["msp.bb"] = (h,)
    if cfg.num_classes > 0:
        shapes["cls.w"] = (h, cfg.num_classes)
        shapes["cls.b"] = (cfg.num_classes,)
    return shapes


class ParameterSet:
    """Named float64 tensors kept in declaration order."""

    def __init__(self, tensors: Dict[str, np.ndarray]):
        self.tensors: Dict[str, np.ndarray] = {
            k: np.asarray(v, dtype=np.float64) for k, v in tensors.items()
        }

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.tensors[name] = np.asarray(value, dtype=np.float64)

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def names(self) -> List[str]:
        return list(self.tensors)

    def items(self):
        return self.tensors.items()

    def copy(self) -> "ParameterSet":
        return ParameterSet({k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> "ParameterSet":
        return ParameterSet({k: np.zeros_like(v) for k, v in self.tensors.items()})

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.tensors.values())

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))

    def equals(self, other: "ParameterSet") -> bool:
        """Bit-exact comparison, names and order included."""
        if self.names() != other.names():
            return False
        return all(np.array_equal(self[k], other[k]) for k in self.tensors)


# Gradients share the container; one entry per parameter.
GradientSet = ParameterSet


def init_params(cfg: ModelConfig, seed: int = 0,
                rng: Optional[np.random.Generator] = None) -> ParameterSet:
    """N(0, 0.02) weights, zero biases, unit layer-norm gains."""
    rng = rng or np.random.default_rng(seed)
    tensors: Dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[1]
        if leaf == "gamma":
            tensors[name] = np.ones(shape)
        elif leaf == "beta" or leaf.startswith("b"):
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.normal(0.0, INIT_STD, size=shape)
    return ParameterSet(tensors)


def add_classifier(params: ParameterSet, cfg: ModelConfig, num_classes: int) -> Tuple[ParameterSet, ModelConfig]:
    """Attach a zero-initialised classification head over the [CLS] vector."""
    new_cfg = cfg.model_copy(update={"num_classes": num_classes})
    out = ParameterSet({k: v.copy() for k, v in params.items() if not k.startswith("cls.")})
    out["cls.w"] = np.zeros((cfg.hidden, num_classes))
    out["cls.b"] = np.zeros(num_classes)
    return out, new_cfg
