"""Specification generation: fit an adapter's B factors to a labeled dataset
and flatten them into a comparable vector.

Two target sources exist. A developer fits the outputs of their own model
(queried with no gradient flow), sketching what the model does; a user fits
ground-truth labels, sketching what the task needs. Either way only B moves;
the anchor and A stay frozen, so vectors from different parties live in the
same space and can be compared by cosine.
"""

import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .anchor import (
    AnchorModel,
    EncodedDataset,
    LabeledExample,
    LoraAdapter,
    init_adapter,
    tokenize,
)
from .errors import (
    BadRequestError,
    EmptyDatasetError,
    InvalidConfigError,
    LabelOutOfRangeError,
    NanGradientError,
    StepOutOfRangeError,
)


@dataclass(frozen=True)
class TrainConfig:
    """Fixed-step training schedule. Defaults are the reference preset used
    for full-scale spec generation; see PRESETS."""

    steps: int = 400
    batch_size: int = 8
    peak_lr: float = 1e-5
    warmup_ratio: float = 0.03
    l2_decay: float = 0.5
    l1_decay: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    shuffle_seed: int = 0
    preset_name: str = "paper"

    def validate(self) -> None:
        if self.steps < 1:
            raise InvalidConfigError("steps must be at least 1")
        if self.batch_size < 1:
            raise InvalidConfigError("batch_size must be at least 1")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise InvalidConfigError("warmup_ratio must lie in [0, 1)")
        if not 0 <= self.warmup_steps < self.steps:
            raise InvalidConfigError(
                f"warmup spans {self.warmup_steps} of {self.steps} steps"
            )
        if self.peak_lr <= 0:
            raise InvalidConfigError("peak_lr must be positive")
        if self.l2_decay < 0 or self.l1_decay < 0:
            raise InvalidConfigError("weight decays must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise InvalidConfigError("optimizer constants out of range")

    @property
    def warmup_steps(self) -> int:
        return math.ceil(self.warmup_ratio * self.steps)

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "batch_size": self.batch_size,
            "peak_lr": self.peak_lr,
            "warmup_ratio": self.warmup_ratio,
            "l2_decay": self.l2_decay,
            "l1_decay": self.l1_decay,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "shuffle_seed": self.shuffle_seed,
            "preset_name": self.preset_name,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        cfg = cls(**data)
        cfg.validate()
        return cfg


# "paper": full-scale constants, kept verbatim. "toy": the same schedule and
# decays with a learning rate sized for the tiny anchor (1e-5 barely moves
# it); the L1 term is what prunes shared low-magnitude directions and makes
# spec vectors discriminative between tasks. "toy-sft": plain fine-tuning for
# the toy learnware models themselves, where L1 would cripple accuracy.
PRESETS = {
    "paper": TrainConfig(),
    "toy": TrainConfig(peak_lr=2e-3, preset_name="toy"),
    "toy-sft": TrainConfig(steps=600, peak_lr=5e-3, l1_decay=0.0, preset_name="toy-sft"),
}


def preset(name: str, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise InvalidConfigError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    cfg = replace(PRESETS[name], **overrides)
    cfg.validate()
    return cfg


def lr_at(config: TrainConfig, step: int) -> float:
    """Linear warmup to peak_lr, then cosine decay to zero."""
    if not 0 <= step < config.steps:
        raise StepOutOfRangeError(f"step {step} outside [0, {config.steps})")
    w = config.warmup_steps
    if step < w:
        return config.peak_lr * (step + 1) / w
    return config.peak_lr * 0.5 * (1.0 + math.cos(math.pi * (step - w) / (config.steps - w)))


@dataclass
class AdamState:
    """First/second moment accumulators; t counts applied steps."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(params), v=np.zeros_like(params), t=0)


def opt_step(
    state: AdamState,
    params: np.ndarray,
    grads: np.ndarray,
    lr: float,
    config: TrainConfig,
) -> tuple[np.ndarray, AdamState]:
    """One adaptive-moment update with decoupled L2 and L1 decay.

    Decays act on the parameter directly (not folded into the gradient);
    sign(0) is 0 so an untouched zero parameter stays exactly zero.
    """
    if not np.isfinite(grads).all():
        raise NanGradientError("non-finite gradient; aborting the run")
    state.m = config.beta1 * state.m + (1.0 - config.beta1) * grads
    state.v = config.beta2 * state.v + (1.0 - config.beta2) * grads * grads
    state.t += 1
    m_hat = state.m / (1.0 - config.beta1**state.t)
    v_hat = state.v / (1.0 - config.beta2**state.t)
    update = m_hat / (np.sqrt(v_hat) + config.eps)
    update += config.l2_decay * params + config.l1_decay * np.sign(params)
    params -= lr * update
    return params, state


class GroundTruth:
    """Fit the dataset's own labels (user-side requirement sketch)."""

    mode = "user"

    def __repr__(self) -> str:
        return "GroundTruth()"


class ModelLabeler:
    """Fit an opaque model's outputs. The callable maps a list of texts to
    class indices; it is queried once per example per epoch pass and no
    gradient ever flows through it."""

    mode = "developer"

    def __init__(self, labeler: Callable[[list[str]], list[int]]):
        self.labeler = labeler

    def __repr__(self) -> str:
        return f"ModelLabeler({self.labeler!r})"


LabelSource = GroundTruth | ModelLabeler


@dataclass
class Specification:
    """Flattened trained B factors plus the compatibility header."""

    anchor_id: str
    spec_dim: int
    rank: int
    lora_alpha: float
    target_modules: tuple[str, ...]
    dtype: str
    mode: str
    created_unix_ms: int
    vector: np.ndarray  # (spec_dim,) float32

    HEADER_FIELDS = (
        "anchor_id",
        "spec_dim",
        "rank",
        "lora_alpha",
        "target_modules",
        "dtype",
        "mode",
        "created_unix_ms",
    )

    def header_dict(self) -> dict:
        return {
            "anchor_id": self.anchor_id,
            "spec_dim": self.spec_dim,
            "rank": self.rank,
            "lora_alpha": self.lora_alpha,
            "target_modules": list(self.target_modules),
            "dtype": self.dtype,
            "mode": self.mode,
            "created_unix_ms": self.created_unix_ms,
        }

    def validate(self) -> None:
        vec = np.asarray(self.vector)
        if vec.ndim != 1 or vec.dtype != np.float32:
            raise InvalidConfigError("spec vector must be a 1-D float32 array")
        if self.spec_dim != vec.shape[0]:
            raise InvalidConfigError(
                f"header spec_dim {self.spec_dim} != vector length {vec.shape[0]}"
            )
        if self.mode not in ("developer", "user"):
            raise InvalidConfigError(f"unknown mode {self.mode!r}")
        if self.dtype != "f32":
            raise InvalidConfigError(f"unsupported dtype {self.dtype!r}")


def flatten_b(adapter: LoraAdapter) -> np.ndarray:
    """Row-major B_q, then B_k, then B_v, as float32."""
    return np.concatenate([adapter.B[m].ravel() for m in range(3)]).astype(np.float32)


@dataclass
class TrainStats:
    losses: list[float] = field(default_factory=list)

    @property
    def steps_run(self) -> int:
        return len(self.losses)


def _index_stream(n: int, shuffle_seed: int) -> Iterator[int]:
    """Epoch permutations, reshuffled with the seed mixed by epoch counter."""
    epoch = 0
    while True:
        rng = np.random.default_rng([shuffle_seed, epoch])
        yield from (int(i) for i in rng.permutation(n))
        epoch += 1


def train_adapter(
    anchor: AnchorModel,
    dataset: list[LabeledExample],
    label_source: LabelSource,
    train_cfg: TrainConfig,
) -> tuple[LoraAdapter, TrainStats]:
    """Run exactly train_cfg.steps optimizer steps; only B changes."""
    train_cfg.validate()
    if not dataset:
        raise EmptyDatasetError("cannot train a specification on an empty dataset")
    C = anchor.config.num_classes
    for ex in dataset:
        if not 0 <= ex.label < C:
            raise LabelOutOfRangeError(f"label {ex.label} out of range for {C} classes")

    seqs = [tokenize(ex.text, anchor.config.max_len) for ex in dataset]
    labels = np.array([ex.label for ex in dataset], dtype=np.int64)
    texts = [ex.text for ex in dataset]
    enc = EncodedDataset(anchor, seqs)

    adapter = init_adapter(anchor.config)
    state = AdamState.zeros_like(adapter.B)
    stream = _index_stream(len(dataset), train_cfg.shuffle_seed)
    stats = TrainStats()

    for step in range(train_cfg.steps):
        idx = np.fromiter(
            (next(stream) for _ in range(train_cfg.batch_size)),
            dtype=np.int64,
            count=train_cfg.batch_size,
        )
        if isinstance(label_source, ModelLabeler):
            targets = np.asarray(
                label_source.labeler([texts[i] for i in idx]), dtype=np.int64
            )
            if targets.shape != (train_cfg.batch_size,):
                raise LabelOutOfRangeError("labeler returned a wrong-sized batch")
            if ((targets < 0) | (targets >= C)).any():
                raise LabelOutOfRangeError("labeler returned a label out of range")
        else:
            targets = labels[idx]
        batch_loss, dB = enc.loss_and_grad(adapter, idx, targets)
        opt_step(state, adapter.B, dB, lr_at(train_cfg, step), train_cfg)
        stats.losses.append(batch_loss)
    return adapter, stats


def load_jsonl_dataset(path: str | Path) -> list[LabeledExample]:
    """Read a dataset file: one {"text": ..., "label": ...} object per line."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BadRequestError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if (
                not isinstance(obj, dict)
                or not isinstance(obj.get("text"), str)
                or not isinstance(obj.get("label"), int)
                or isinstance(obj.get("label"), bool)
            ):
                raise BadRequestError(
                    f'{path}:{lineno}: expected {{"text": str, "label": int}}'
                )
            out.append(LabeledExample(text=obj["text"], label=obj["label"]))
    return out


def save_jsonl_dataset(path: str | Path, dataset: list[LabeledExample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in dataset:
            fh.write(json.dumps({"text": ex.text, "label": ex.label}) + "\n")


def spec_from_adapter(
    adapter: LoraAdapter,
    mode: str = "user",
    created_unix_ms: int | None = None,
) -> Specification:
    """Flatten a trained adapter's B factors into a Specification."""
    cfg = adapter.config
    if created_unix_ms is None:
        created_unix_ms = int(time.time() * 1000)
    spec = Specification(
        anchor_id=cfg.anchor_id(),
        spec_dim=cfg.spec_dim,
        rank=cfg.rank,
        lora_alpha=cfg.lora_alpha,
        target_modules=cfg.target_modules,
        dtype=cfg.dtype,
        mode=mode,
        created_unix_ms=created_unix_ms,
        vector=flatten_b(adapter),
    )
    spec.validate()
    return spec


def build_spec(
    anchor: AnchorModel,
    dataset: list[LabeledExample],
    label_source: LabelSource,
    train_cfg: TrainConfig,
    mode: str | None = None,
    created_unix_ms: int | None = None,
) -> Specification:
    """Train a fresh adapter on the dataset and flatten B into a Specification.

    `mode` defaults to the label source's side (developer for ModelLabeler,
    user for GroundTruth) but may be overridden, e.g. when a developer spec
    is generated directly from fitting ground-truth labels.
    """
    adapter, _ = train_adapter(anchor, dataset, label_source, train_cfg)
    return spec_from_adapter(
        adapter,
        mode=mode if mode is not None else label_source.mode,
        created_unix_ms=created_unix_ms,
    )
