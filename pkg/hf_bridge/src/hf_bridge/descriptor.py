"""Anchor descriptor for specs generated on a real pretrained model.

The descriptor's identity hash uses the same rule as the dock: SHA-256 over
the canonical JSON (sorted keys, no whitespace) of the config fields. Any
party holding the same descriptor reconstructs the same frozen A factors and
therefore lands in the same comparable spec space.
"""

import hashlib
import json
from dataclasses import dataclass, field

TARGET_MODULES = ("q_proj", "k_proj", "v_proj")
KIND_EXTERNAL = "external-lm"


def canonical_json(data: dict) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class RealAnchorDescriptor:
    pretrained_model_id: str
    lora_seed: int = 314159
    rank: int = 16
    lora_alpha: float = 32.0
    target_modules: tuple[str, ...] = TARGET_MODULES

    def config_dict(self) -> dict:
        return {
            "pretrained_model_id": self.pretrained_model_id,
            "lora_seed": self.lora_seed,
            "rank": self.rank,
            "lora_alpha": self.lora_alpha,
            "target_modules": list(self.target_modules),
        }

    @property
    def anchor_id(self) -> str:
        return hashlib.sha256(
            canonical_json(self.config_dict()).encode("utf-8")
        ).hexdigest()

    def to_dict(self) -> dict:
        # same file shape the dock serves: {kind, config, presets, anchor_id}
        return {
            "kind": KIND_EXTERNAL,
            "config": self.config_dict(),
            "presets": {"paper": PAPER_PRESET},
            "anchor_id": self.anchor_id,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RealAnchorDescriptor":
        config = data["config"] if "config" in data else data
        desc = cls(
            pretrained_model_id=config["pretrained_model_id"],
            lora_seed=config["lora_seed"],
            rank=config["rank"],
            lora_alpha=config["lora_alpha"],
            target_modules=tuple(config["target_modules"]),
        )
        if "anchor_id" in data and data["anchor_id"] != desc.anchor_id:
            raise ValueError("descriptor anchor_id does not match its config hash")
        return desc


# Full-scale spec-generation schedule; steps and batch size follow the
# reference recipe, learning-rate decay is cosine after linear warmup.
PAPER_PRESET = {
    "steps": 400,
    "batch_size": 8,
    "peak_lr": 1e-5,
    "warmup_ratio": 0.03,
    "l2_decay": 0.5,
    "l1_decay": 1.0,
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-8,
}
