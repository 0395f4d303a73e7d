"""Fit low-rank B factors on a frozen pretrained causal LM and emit the
flattened result as an LWSPEC01 file.

Adapters sit on the q/k/v projections of every transformer layer (or a
chosen subset). A factors are seeded from the descriptor and frozen; only B
trains. The loss is cross-entropy on answer tokens only. The flatten order
is frozen: layers in forward order, then q, k, v within a layer, row-major
within each B matrix.
"""

import json
import math
import struct
import time
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .descriptor import PAPER_PRESET, RealAnchorDescriptor, canonical_json

MAGIC = b"LWSPEC01"


@dataclass
class BridgeTrainConfig:
    steps: int = PAPER_PRESET["steps"]
    batch_size: int = PAPER_PRESET["batch_size"]
    peak_lr: float = PAPER_PRESET["peak_lr"]
    warmup_ratio: float = PAPER_PRESET["warmup_ratio"]
    l2_decay: float = PAPER_PRESET["l2_decay"]
    l1_decay: float = PAPER_PRESET["l1_decay"]
    beta1: float = PAPER_PRESET["beta1"]
    beta2: float = PAPER_PRESET["beta2"]
    eps: float = PAPER_PRESET["eps"]
    shuffle_seed: int = 0
    max_length: int = 256

    # steps == 0 is allowed: it emits the untrained all-zero vector, which a
    # dock rejects at submission; useful for wiring checks.
    def validate(self) -> None:
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ValueError("warmup_ratio must lie in [0, 1)")

    @classmethod
    def from_preset(cls, preset: dict, **overrides) -> "BridgeTrainConfig":
        known = {k: v for k, v in preset.items() if k in cls.__dataclass_fields__}
        cfg = cls(**{**known, **overrides})
        cfg.validate()
        return cfg


def lr_at(cfg: BridgeTrainConfig, step: int) -> float:
    warmup = math.ceil(cfg.warmup_ratio * cfg.steps)
    if step < warmup:
        return cfg.peak_lr * (step + 1) / warmup
    return cfg.peak_lr * 0.5 * (
        1.0 + math.cos(math.pi * (step - warmup) / (cfg.steps - warmup))
    )


class LowRankAdapter(nn.Module):
    """Wraps a frozen Linear with a trainable low-rank bypass."""

    def __init__(self, base: nn.Linear, rank: int, alpha: float, a_init: torch.Tensor):
        super().__init__()
        self.base = base
        for p in self.base.parameters():
            p.requires_grad_(False)
        self.register_buffer("A", a_init)                       # (r, in), frozen
        self.B = nn.Parameter(torch.zeros(base.out_features, rank, dtype=torch.float32))
        self.scale = alpha / rank

    def forward(self, x):
        lowrank = nn.functional.linear(nn.functional.linear(x, self.A), self.B)
        return self.base(x) + self.scale * lowrank


def _find_target_linears(model: nn.Module, module_names, layers):
    """(layer_index, module_name, parent, attr) in forward layer order."""
    found: dict[int, dict[str, tuple[nn.Module, str]]] = {}
    for qualified, module in model.named_modules():
        for attr in module_names:
            child = getattr(module, attr, None)
            if isinstance(child, nn.Linear):
                digits = [p for p in qualified.split(".") if p.isdigit()]
                layer_idx = int(digits[-1]) if digits else 0
                found.setdefault(layer_idx, {})[attr] = (module, attr)
    order = sorted(found)
    if layers is not None:
        order = [i for i in order if i in set(layers)]
    out = []
    for layer_idx in order:
        for name in module_names:
            if name not in found[layer_idx]:
                raise ValueError(f"layer {layer_idx} has no module {name!r}")
            parent, attr = found[layer_idx][name]
            out.append((layer_idx, name, parent, attr))
    if not out:
        raise ValueError(f"model has no {module_names} Linear modules")
    return out


def attach_adapters(
    model: nn.Module, descriptor: RealAnchorDescriptor, layers=None
) -> list[LowRankAdapter]:
    """Freeze the model and install seeded adapters on every target module.

    A factors are drawn N(0, 1/rank) from one generator in canonical order
    (layer-major, then q/k/v), so every holder of the descriptor gets
    bit-identical A.
    """
    for p in model.parameters():
        p.requires_grad_(False)
    gen = torch.Generator().manual_seed(descriptor.lora_seed)
    adapters = []
    targets = _find_target_linears(model, descriptor.target_modules, layers)
    for _, _, parent, attr in targets:
        base: nn.Linear = getattr(parent, attr)
        a_init = torch.empty(descriptor.rank, base.in_features).normal_(
            0.0, 1.0 / math.sqrt(descriptor.rank), generator=gen
        )
        adapter = LowRankAdapter(base, descriptor.rank, descriptor.lora_alpha, a_init)
        setattr(parent, attr, adapter)
        adapters.append(adapter)
    return adapters


def flatten_adapters(adapters: list[LowRankAdapter]) -> np.ndarray:
    """Canonical layout: adapters in attach order, row-major B, float32."""
    parts = [
        adapter.B.detach().cpu().numpy().astype(np.float32).ravel()
        for adapter in adapters
    ]
    return np.concatenate(parts)


def load_instruction_dataset(path) -> list[dict]:
    """JSONL rows {"prompt": str, "answer": str}."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if not isinstance(obj.get("prompt"), str) or not isinstance(
                obj.get("answer"), str
            ):
                raise ValueError(f'{path}:{lineno}: expected {{"prompt", "answer"}}')
            rows.append(obj)
    if not rows:
        raise ValueError(f"{path}: dataset is empty")
    return rows


def _encode_batch(tokenizer, rows, max_length):
    """Tokenize prompt+answer; label only the answer positions."""
    input_rows, label_rows = [], []
    for row in rows:
        prompt_ids = tokenizer.encode(row["prompt"], add_special_tokens=False)
        answer_ids = tokenizer.encode(row["answer"], add_special_tokens=False)
        if tokenizer.eos_token_id is not None:
            answer_ids = answer_ids + [tokenizer.eos_token_id]
        ids = (prompt_ids + answer_ids)[:max_length]
        labels = ([-100] * len(prompt_ids) + answer_ids)[:max_length]
        input_rows.append(ids)
        label_rows.append(labels)
    width = max(len(r) for r in input_rows)
    pad = tokenizer.pad_token_id if tokenizer.pad_token_id is not None else 0
    input_ids = torch.full((len(rows), width), pad, dtype=torch.long)
    labels = torch.full((len(rows), width), -100, dtype=torch.long)
    mask = torch.zeros((len(rows), width), dtype=torch.long)
    for i, (ids, labs) in enumerate(zip(input_rows, label_rows)):
        input_ids[i, : len(ids)] = torch.tensor(ids)
        labels[i, : len(labs)] = torch.tensor(labs)
        mask[i, : len(ids)] = 1
    return input_ids, mask, labels


def train_b_factors(
    model,
    tokenizer,
    adapters: list[LowRankAdapter],
    dataset: list[dict],
    cfg: BridgeTrainConfig,
) -> None:
    """Exactly cfg.steps AdamW steps on B only, decoupled L2 plus L1."""
    cfg.validate()
    model.eval()  # no dropout: spec generation must be deterministic
    params = [adapter.B for adapter in adapters]
    opt = torch.optim.AdamW(
        params,
        lr=1.0,  # scheduled per step below
        betas=(cfg.beta1, cfg.beta2),
        eps=cfg.eps,
        weight_decay=cfg.l2_decay,
    )
    perm: list[int] = []
    epoch = 0

    def next_index():
        nonlocal perm, epoch
        if not perm:
            perm = list(np.random.default_rng([cfg.shuffle_seed, epoch]).permutation(len(dataset)))
            epoch += 1
        return perm.pop(0)

    for step in range(cfg.steps):
        rows = [dataset[next_index()] for _ in range(cfg.batch_size)]
        input_ids, mask, labels = _encode_batch(tokenizer, rows, cfg.max_length)
        out = model(input_ids=input_ids, attention_mask=mask, labels=labels)
        opt.zero_grad(set_to_none=True)
        out.loss.backward()
        lr = lr_at(cfg, step)
        for group in opt.param_groups:
            group["lr"] = lr
        opt.step()
        if cfg.l1_decay:
            with torch.no_grad():
                for p in params:
                    p.add_(torch.sign(p), alpha=-lr * cfg.l1_decay)


def encode_spec_file(
    descriptor: RealAnchorDescriptor,
    vector: np.ndarray,
    mode: str,
    created_unix_ms: int | None = None,
) -> bytes:
    """LWSPEC01: magic, u32le header length, canonical JSON header, f32le."""
    vector = np.ascontiguousarray(vector, dtype="<f4")
    header = {
        "anchor_id": descriptor.anchor_id,
        "spec_dim": int(vector.shape[0]),
        "rank": descriptor.rank,
        "lora_alpha": descriptor.lora_alpha,
        "target_modules": list(descriptor.target_modules),
        "dtype": "f32",
        "mode": mode,
        "created_unix_ms": (
            int(time.time() * 1000) if created_unix_ms is None else created_unix_ms
        ),
    }
    raw = canonical_json(header).encode("utf-8")
    return MAGIC + struct.pack("<I", len(raw)) + raw + vector.tobytes()


def gen_real_spec(
    descriptor: RealAnchorDescriptor,
    dataset_path,
    mode: str = "user",
    preset: dict | None = None,
    layers=None,
    created_unix_ms: int | None = None,
    **config_overrides,
) -> bytes:
    """End to end: load model, attach adapters, fit B, emit LWSPEC01 bytes."""
    from transformers import AutoModelForCausalLM, AutoTokenizer

    if mode not in ("developer", "user"):
        raise ValueError(f"unknown mode {mode!r}")
    try:
        model = AutoModelForCausalLM.from_pretrained(descriptor.pretrained_model_id)
        tokenizer = AutoTokenizer.from_pretrained(descriptor.pretrained_model_id)
    except (OSError, EnvironmentError) as exc:
        raise FileNotFoundError(
            f"pretrained model {descriptor.pretrained_model_id!r} unavailable: {exc}"
        ) from exc
    cfg = BridgeTrainConfig.from_preset(preset or PAPER_PRESET, **config_overrides)
    dataset = load_instruction_dataset(dataset_path)
    adapters = attach_adapters(model, descriptor, layers=layers)
    torch.manual_seed(cfg.shuffle_seed)
    if cfg.steps:
        train_b_factors(model, tokenizer, adapters, dataset, cfg)
    vector = flatten_adapters(adapters)
    return encode_spec_file(descriptor, vector, mode, created_unix_ms)


def submit_spec(base_url: str, spec_bytes: bytes, model_uri: str, metadata=None) -> int:
    """POST an emitted spec to a dock's HTTP API; returns the assigned id."""
    import base64

    import requests

    response = requests.post(
        f"{base_url.rstrip('/')}/api/v1/learnwares",
        json={
            "model_uri": model_uri,
            "spec_b64": base64.b64encode(spec_bytes).decode("ascii"),
            "metadata": metadata or {},
        },
        timeout=60,
    )
    if response.status_code != 200:
        raise RuntimeError(f"submission failed ({response.status_code}): {response.text}")
    return response.json()["id"]
