from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from ..errors import ConfigError, UnsupportedError

MODALITY_ORDER = ("flow", "segmentation", "normals")
COUPLINGS = ("zero", "loose", "tight")


@dataclass
class RefineConfig:
    """Architecture and loss configuration.

    coupling: ``zero`` single task; ``loose`` shared scale branches with a
    trunk and head per task; ``tight`` shared branches and trunk, one head
    per task. ``flow_scale`` divides flow entering the network and
    multiplies the flow head's residual. With ``seg_residual`` the
    segmentation head corrects the log input scores instead of emitting
    logits from scratch.
    """
    inputs: tuple = ("flow", "segmentation", "normals")
    outputs: tuple = ("flow",)
    coupling: str = "zero"
    scales: int = 4
    branch_channels: int = 32
    trunk_channels: int = 64
    kernel: int = 3
    class_count: int = 8
    flow_scale: float = 4.0
    seg_residual: bool = False  # logits = log(scores + SEG_PRIOR_EPS) + head
    loss_weights: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = tuple(m for m in MODALITY_ORDER if m in set(self.inputs))
        self.outputs = tuple(m for m in MODALITY_ORDER if m in set(self.outputs))
        self.loss_weights = {t: float(self.loss_weights.get(t, 1.0)) for t in self.outputs}
        self.validate()

    def validate(self):
        if not self.outputs:
            raise ConfigError("at least one output task is required")
        if not self.inputs:
            raise ConfigError("at least one input modality is required")
        missing = set(self.outputs) - set(self.inputs)
        if missing:
            raise ConfigError(f"output tasks {sorted(missing)} need their prediction as an input")
        if self.coupling == "tight+":
            raise UnsupportedError("tight+ coupling: requires learnable RGB baselines")
        if self.coupling not in COUPLINGS:
            raise ConfigError(f"unknown coupling {self.coupling!r}")
        if self.coupling == "zero" and len(self.outputs) != 1:
            raise ConfigError("zero coupling refines exactly one task")
        if self.scales < 1:
            raise ConfigError("scales must be >= 1")
        if self.kernel % 2 != 1:
            raise ConfigError("kernel must be odd")
        for t, w in self.loss_weights.items():
            if w <= 0:
                raise ConfigError(f"loss weight for {t} must be > 0")
        if self.class_count < 2:
            raise ConfigError("class_count must be >= 2")

    def channels(self, modality):
        return {"flow": 2, "segmentation": self.class_count, "normals": 3}[modality]

    @property
    def input_channels(self):
        return sum(self.channels(m) for m in self.inputs)

    def to_dict(self):
        d = asdict(self)
        d["inputs"], d["outputs"] = list(self.inputs), list(self.outputs)
        return d

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown RefineConfig keys {sorted(unknown)}")
        doc = dict(doc)
        for k in ("inputs", "outputs"):
            if k in doc:
                doc[k] = tuple(doc[k])
        return cls(**doc)

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:12]
