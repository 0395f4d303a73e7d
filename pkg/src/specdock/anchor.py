"""The shared anchor model: a tiny deterministic single-head attention
classifier with low-rank adapters on its q/k/v projections.

Everyone who generates a specification vector runs this exact model. Its
base weights and the adapters' A factors are functions of seeds alone, so
two parties holding the same config reconstruct bit-identical weights; only
the B factors ever train, and their flattened values are the spec vector.
"""

import functools
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (
    EmptyBatchError,
    EmptyTextError,
    InvalidConfigError,
    LabelOutOfRangeError,
    ShapeMismatchError,
)

ARCH_VERSION = "tiny-attn-v1"
PAD_ID = 0
TARGET_MODULES = ("q_proj", "k_proj", "v_proj")
BASE_WEIGHT_STD = 0.02
# Positional amplitude is part of the arch recipe. It must sit at the same
# order of magnitude as the embedding init: full-amplitude sinusoids drown
# the 0.02-scale embeddings and the pooled representation goes constant.
POS_SCALE = 0.005
_MAX_SEED = 2**64


@dataclass(frozen=True)
class AnchorConfig:
    """Complete recipe for the anchor: same config, same bits, anywhere."""

    arch_version: str = ARCH_VERSION
    vocab_size: int = 257          # id 0 = PAD, id b+1 for byte b
    embed_dim: int = 64
    max_len: int = 64
    num_classes: int = 4
    rank: int = 16
    lora_alpha: float = 32.0
    target_modules: tuple[str, ...] = TARGET_MODULES
    base_seed: int = 42
    lora_seed: int = 4242
    dtype: str = "f32"

    def __post_init__(self):
        object.__setattr__(self, "target_modules", tuple(self.target_modules))

    def validate(self) -> None:
        if self.arch_version != ARCH_VERSION:
            raise InvalidConfigError(f"unknown arch_version {self.arch_version!r}")
        if self.dtype != "f32":
            raise InvalidConfigError(f"unsupported dtype {self.dtype!r}")
        if self.target_modules != TARGET_MODULES:
            raise InvalidConfigError("target_modules are fixed to q/k/v projections")
        if self.vocab_size < 2:
            raise InvalidConfigError("vocab_size must be at least 2")
        if self.max_len < 1:
            raise InvalidConfigError("max_len must be at least 1")
        if self.num_classes < 2:
            raise InvalidConfigError("num_classes must be at least 2")
        if self.embed_dim < 1:
            raise InvalidConfigError("embed_dim must be at least 1")
        if not 1 <= self.rank <= self.embed_dim:
            raise InvalidConfigError(
                f"rank must satisfy 1 <= rank <= embed_dim, got {self.rank}"
            )
        if not self.lora_alpha > 0:
            raise InvalidConfigError("lora_alpha must be positive")
        for name in ("base_seed", "lora_seed"):
            seed = getattr(self, name)
            if not isinstance(seed, int) or not 0 <= seed < _MAX_SEED:
                raise InvalidConfigError(f"{name} must be an unsigned 64-bit integer")

    @property
    def spec_dim(self) -> int:
        return len(self.target_modules) * self.embed_dim * self.rank

    @property
    def lora_scale(self) -> float:
        return self.lora_alpha / self.rank

    def to_dict(self) -> dict:
        return {
            "arch_version": self.arch_version,
            "vocab_size": self.vocab_size,
            "embed_dim": self.embed_dim,
            "max_len": self.max_len,
            "num_classes": self.num_classes,
            "rank": self.rank,
            "lora_alpha": self.lora_alpha,
            "target_modules": list(self.target_modules),
            "base_seed": self.base_seed,
            "lora_seed": self.lora_seed,
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AnchorConfig":
        cfg = cls(**{**data, "target_modules": tuple(data["target_modules"])})
        cfg.validate()
        return cfg

    def canonical_json(self) -> str:
        return canonical_json(self.to_dict())

    def anchor_id(self) -> str:
        return anchor_id_of(self.to_dict())


def canonical_json(data: dict) -> str:
    """Canonical serialization: sorted keys, no whitespace."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def anchor_id_of(descriptor_fields: dict) -> str:
    """SHA-256 of the canonical JSON of a descriptor's identity fields."""
    return hashlib.sha256(canonical_json(descriptor_fields).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class AnchorModel:
    """Frozen base weights plus derived positional encodings."""

    config: AnchorConfig
    E: np.ndarray        # (vocab_size, d) token embeddings
    Wq: np.ndarray       # (d, d)
    Wk: np.ndarray       # (d, d)
    Wv: np.ndarray       # (d, d)
    Wout: np.ndarray     # (C, d)
    b_out: np.ndarray    # (C,)
    pos: np.ndarray      # (max_len, d) sinusoidal, parameter-free

    def weights_bytes(self) -> bytes:
        """Concatenated raw bytes of every parameter, for frozen-base audits."""
        return b"".join(
            np.ascontiguousarray(w).tobytes()
            for w in (self.E, self.Wq, self.Wk, self.Wv, self.Wout, self.b_out)
        )


@dataclass
class LoraAdapter:
    """Low-rank adapter: frozen A (3, r, d), trainable B (3, d, r).

    Effective projection weights are W'_m = W_m + (alpha / rank) * B_m @ A_m.
    A fresh adapter has B == 0, so it perturbs nothing.
    """

    config: AnchorConfig
    A: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)

    @property
    def A_q(self) -> np.ndarray:
        return self.A[0]

    @property
    def A_k(self) -> np.ndarray:
        return self.A[1]

    @property
    def A_v(self) -> np.ndarray:
        return self.A[2]

    @property
    def B_q(self) -> np.ndarray:
        return self.B[0]

    @property
    def B_k(self) -> np.ndarray:
        return self.B[1]

    @property
    def B_v(self) -> np.ndarray:
        return self.B[2]

    def a_bytes(self) -> bytes:
        return np.ascontiguousarray(self.A).tobytes()


@dataclass(frozen=True)
class TokenSeq:
    ids: np.ndarray      # (max_len,) int64, PAD beyond valid_len
    valid_len: int


@dataclass(frozen=True)
class LabeledExample:
    text: str
    label: int


def _sinusoidal(max_len: int, d: int) -> np.ndarray:
    pos = np.zeros((max_len, d), dtype=np.float64)
    positions = np.arange(max_len, dtype=np.float64)[:, None]
    even = np.arange(0, d, 2, dtype=np.float64)
    div = np.exp(-math.log(10000.0) * even / d)
    pos[:, 0::2] = np.sin(positions * div)
    pos[:, 1::2] = np.cos(positions * div[: d // 2])
    return POS_SCALE * pos


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def init_anchor(config: AnchorConfig) -> AnchorModel:
    """Build the frozen anchor. Same config returns bit-identical weights.

    Draw order (E, Wq, Wk, Wv, Wout) is part of the recipe and must not
    change within an arch_version.
    """
    config.validate()
    rng = np.random.default_rng(config.base_seed)
    d, c = config.embed_dim, config.num_classes

    def draw(*shape):
        return _freeze(rng.normal(0.0, BASE_WEIGHT_STD, shape).astype(np.float32))

    return AnchorModel(
        config=config,
        E=draw(config.vocab_size, d),
        Wq=draw(d, d),
        Wk=draw(d, d),
        Wv=draw(d, d),
        Wout=draw(c, d),
        b_out=_freeze(np.zeros(c, dtype=np.float32)),
        pos=_freeze(_sinusoidal(config.max_len, d)),
    )


@functools.lru_cache(maxsize=64)
def _a_matrices(config: AnchorConfig) -> np.ndarray:
    """Frozen A factors; N(0, 1/rank) from lora_seed, drawn q then k then v."""
    rng = np.random.default_rng(config.lora_seed)
    std = 1.0 / math.sqrt(config.rank)
    stack = np.stack(
        [
            rng.normal(0.0, std, (config.rank, config.embed_dim)).astype(np.float32)
            for _ in TARGET_MODULES
        ]
    )
    return _freeze(stack)


def init_adapter(config: AnchorConfig) -> LoraAdapter:
    config.validate()
    return LoraAdapter(
        config=config,
        A=_a_matrices(config),
        B=np.zeros((len(TARGET_MODULES), config.embed_dim, config.rank)),
    )


def tokenize(text: str, max_len: int) -> TokenSeq:
    """Byte-level tokens: id = UTF-8 byte value + 1, truncated to max_len."""
    data = text.encode("utf-8")
    if not data:
        raise EmptyTextError("cannot tokenize empty text")
    n = min(len(data), max_len)
    ids = np.zeros(max_len, dtype=np.int64)
    ids[:n] = np.frombuffer(data[:n], dtype=np.uint8).astype(np.int64) + 1
    return TokenSeq(ids=_freeze(ids), valid_len=n)


class EncodedDataset:
    """Per-dataset precomputation shared by every forward/backward call.

    Token rows premultiplied by the frozen base projections (XW) and the
    frozen A factors (XA) never change while B trains, so they are computed
    once. B-dependent work per step is O(rank).
    """

    def __init__(self, anchor: AnchorModel, seqs: list[TokenSeq]):
        if not seqs:
            raise EmptyBatchError("no sequences to encode")
        cfg = anchor.config
        lens = np.array([s.valid_len for s in seqs], dtype=np.int64)
        width = int(lens.max())
        ids = np.zeros((len(seqs), width), dtype=np.int64)
        for i, s in enumerate(seqs):
            ids[i, : s.valid_len] = s.ids[: s.valid_len]
            if (s.ids[: s.valid_len] >= cfg.vocab_size).any():
                raise ShapeMismatchError("token id out of vocabulary range")
        X = anchor.E.astype(np.float64)[ids] + anchor.pos[None, :width, :]
        flat = X.reshape(-1, cfg.embed_dim)
        A = _a_matrices(cfg).astype(np.float64)
        n, d, r = len(seqs), cfg.embed_dim, cfg.rank
        self.XW = np.empty((3, n, width, d))
        self.XA = np.empty((3, n, width, r))
        for m, W in enumerate((anchor.Wq, anchor.Wk, anchor.Wv)):
            self.XW[m] = (flat @ W.astype(np.float64).T).reshape(n, width, d)
            self.XA[m] = (flat @ A[m].T).reshape(n, width, r)
        self.lens = lens
        self.anchor = anchor

    def __len__(self) -> int:
        return len(self.lens)

    def logits(self, adapter: LoraAdapter | None) -> np.ndarray:
        """(N, C) logits for every sequence under the given adapter."""
        B, scale = _adapter_b(self.anchor, adapter)
        return _kernels.logits_kernel(
            self.XW,
            self.XA,
            self.lens,
            B,
            scale,
            self.anchor.Wout.astype(np.float64),
            self.anchor.b_out.astype(np.float64),
        )

    def loss_and_grad(
        self, adapter: LoraAdapter | None, idx: np.ndarray, targets: np.ndarray
    ) -> tuple[float, np.ndarray]:
        """Mean cross-entropy over rows `idx` against `targets`, plus dB."""
        B, scale = _adapter_b(self.anchor, adapter)
        loss, dB = _kernels.loss_grad_kernel(
            self.XW,
            self.XA,
            self.lens,
            np.asarray(idx, dtype=np.int64),
            np.asarray(targets, dtype=np.int64),
            B,
            scale,
            self.anchor.Wout.astype(np.float64),
            self.anchor.b_out.astype(np.float64),
        )
        return float(loss), dB


def _adapter_b(anchor: AnchorModel, adapter: LoraAdapter | None):
    cfg = anchor.config
    if adapter is None:
        return np.zeros((3, cfg.embed_dim, cfg.rank)), cfg.lora_scale
    if adapter.config != cfg:
        raise ShapeMismatchError("adapter and anchor configs disagree")
    return np.asarray(adapter.B, dtype=np.float64), cfg.lora_scale


def forward(
    anchor: AnchorModel, adapter: LoraAdapter | None, seq: TokenSeq
) -> np.ndarray:
    """Logits for one sequence. Only the valid prefix enters the computation,
    so appending PAD never changes the output."""
    trimmed = TokenSeq(ids=seq.ids[: seq.valid_len], valid_len=seq.valid_len)
    return EncodedDataset(anchor, [trimmed]).logits(adapter)[0]


def loss(logits: np.ndarray, label: int) -> float:
    """Cross-entropy -log softmax(logits)[label], accumulated in float64."""
    z = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < z.shape[0]:
        raise LabelOutOfRangeError(f"label {label} out of range for {z.shape[0]} classes")
    m = z.max()
    return float(np.log(np.exp(z - m).sum()) + m - z[label])


def predict(anchor: AnchorModel, adapter: LoraAdapter | None, seq: TokenSeq) -> int:
    """Argmax class; exact ties resolve to the lowest class index."""
    return int(np.argmax(forward(anchor, adapter, seq)))


def grad_b(
    anchor: AnchorModel,
    adapter: LoraAdapter | None,
    batch: list[tuple[TokenSeq, int]],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the mean batch loss w.r.t. B_q, B_k, B_v.

    No other parameter's gradient is ever materialized.
    """
    if not batch:
        raise EmptyBatchError("grad_b needs a non-empty batch")
    C = anchor.config.num_classes
    for _, label in batch:
        if not 0 <= label < C:
            raise LabelOutOfRangeError(f"label {label} out of range for {C} classes")
    enc = EncodedDataset(anchor, [seq for seq, _ in batch])
    idx = np.arange(len(batch), dtype=np.int64)
    targets = np.array([label for _, label in batch], dtype=np.int64)
    _, dB = enc.loss_and_grad(adapter, idx, targets)
    return dB[0], dB[1], dB[2]
