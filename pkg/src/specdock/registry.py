"""The dock's persistent store.

Layout under data_dir:

    anchor.json    descriptor of the shared anchor (recipe + train presets)
    index.json     last assigned id plus id -> {file, model_uri, metadata}
    specs/{id}.lws specification files, LWSPEC01, stored verbatim

Writes go through temp-file + fsync + rename, so a reopened registry always
reproduces the exact bytes it stored. The public surface accepts only
specification bytes and model URIs; no operation takes raw examples.
"""

import json
import os
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .anchor import AnchorConfig, anchor_id_of, canonical_json
from .errors import (
    AnchorMismatchError,
    BadMagicError,
    BadRequestError,
    CorruptIndexError,
    DimMismatchError,
    HeaderJsonInvalidError,
    InvalidConfigError,
    NotFoundError,
    PayloadLengthMismatchError,
    TruncatedError,
    ZeroVectorSpecError,
)
from .specgen import PRESETS, Specification

MAGIC = b"LWSPEC01"
KIND_TINY_ATTN = "tiny-attn"
KIND_EXTERNAL = "external-lm"


@dataclass(frozen=True)
class AnchorDescriptor:
    """Everything a developer or user needs to regenerate the spec function
    locally: the anchor recipe plus the default training presets."""

    kind: str
    config: dict
    presets: dict = field(default_factory=dict)

    @property
    def anchor_id(self) -> str:
        return anchor_id_of(self.config)

    def anchor_config(self) -> AnchorConfig:
        if self.kind != KIND_TINY_ATTN:
            raise InvalidConfigError(
                f"descriptor kind {self.kind!r} has no built-in anchor model"
            )
        return AnchorConfig.from_dict(self.config)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "config": self.config,
            "presets": self.presets,
            "anchor_id": self.anchor_id,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AnchorDescriptor":
        desc = cls(
            kind=data["kind"],
            config=data["config"],
            presets=data.get("presets", {}),
        )
        if "anchor_id" in data and data["anchor_id"] != desc.anchor_id:
            raise AnchorMismatchError(
                "descriptor anchor_id does not match its config hash"
            )
        return desc

    @classmethod
    def for_config(cls, config: AnchorConfig) -> "AnchorDescriptor":
        config.validate()
        return cls(
            kind=KIND_TINY_ATTN,
            config=config.to_dict(),
            presets={name: cfg.to_dict() for name, cfg in PRESETS.items()},
        )


@dataclass
class Learnware:
    """A registered model reference plus its specification."""

    id: int
    model_uri: str
    spec: Specification
    metadata: dict


# --- LWSPEC01 codec -------------------------------------------------------

_HEADER_SPEC = {
    "anchor_id": str,
    "spec_dim": int,
    "rank": int,
    "mode": str,
    "dtype": str,
    "created_unix_ms": int,
}


def write_spec_file(spec: Specification) -> bytes:
    """Encode: magic, u32le header length, canonical JSON header, f32le payload."""
    spec.validate()
    header = canonical_json(spec.header_dict()).encode("utf-8")
    payload = np.ascontiguousarray(spec.vector, dtype="<f4").tobytes()
    return MAGIC + struct.pack("<I", len(header)) + header + payload


def read_spec_file(data: bytes) -> Specification:
    if len(data) < len(MAGIC):
        raise TruncatedError(f"file is {len(data)} bytes, shorter than the magic")
    if data[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"bad magic {data[:len(MAGIC)]!r}")
    if len(data) < len(MAGIC) + 4:
        raise TruncatedError("file ends inside the header length field")
    (hlen,) = struct.unpack("<I", data[len(MAGIC) : len(MAGIC) + 4])
    body = len(MAGIC) + 4
    if len(data) < body + hlen:
        raise TruncatedError("file ends inside the JSON header")
    try:
        header = json.loads(data[body : body + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderJsonInvalidError(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise HeaderJsonInvalidError("header must be a JSON object")
    for name, typ in _HEADER_SPEC.items():
        if not isinstance(header.get(name), typ) or isinstance(header.get(name), bool):
            raise HeaderJsonInvalidError(f"header field {name!r} missing or mistyped")
    if header["mode"] not in ("developer", "user"):
        raise HeaderJsonInvalidError(f"unknown mode {header['mode']!r}")
    if header["dtype"] != "f32":
        raise HeaderJsonInvalidError(f"unsupported dtype {header['dtype']!r}")
    modules = header.get("target_modules")
    if not isinstance(modules, list) or not all(isinstance(m, str) for m in modules):
        raise HeaderJsonInvalidError("header field 'target_modules' missing or mistyped")
    if not isinstance(header.get("lora_alpha"), (int, float)) or isinstance(
        header.get("lora_alpha"), bool
    ):
        raise HeaderJsonInvalidError("header field 'lora_alpha' missing or mistyped")
    if header["spec_dim"] < 1:
        raise HeaderJsonInvalidError("spec_dim must be positive")
    payload = data[body + hlen :]
    if len(payload) != 4 * header["spec_dim"]:
        raise PayloadLengthMismatchError(
            f"payload holds {len(payload) // 4} values but header says "
            f"{header['spec_dim']}"
        )
    vector = np.frombuffer(payload, dtype="<f4").copy()
    return Specification(
        anchor_id=header["anchor_id"],
        spec_dim=header["spec_dim"],
        rank=header["rank"],
        lora_alpha=float(header["lora_alpha"]),
        target_modules=tuple(modules),
        dtype=header["dtype"],
        mode=header["mode"],
        created_unix_ms=header["created_unix_ms"],
        vector=vector,
    )


# --- storage --------------------------------------------------------------


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


class Registry:
    """Learnware store with a single-writer discipline.

    Mutations serialize on an internal lock; readers observe either the
    pre- or post-write state, never a partial one.
    """

    def __init__(self, data_dir: Path, descriptor: AnchorDescriptor):
        self.data_dir = Path(data_dir)
        self.descriptor = descriptor
        self.anchor_id = descriptor.anchor_id
        self._learnwares: dict[int, Learnware] = {}
        self._last_id = 0
        self._lock = threading.Lock()

    # -- lifecycle ----------------------------------------------------------

    @classmethod
    def open(
        cls,
        data_dir: str | Path,
        anchor: "AnchorConfig | AnchorDescriptor | None" = None,
    ) -> "Registry":
        data_dir = Path(data_dir)
        if isinstance(anchor, AnchorConfig):
            anchor = AnchorDescriptor.for_config(anchor)
        anchor_path = data_dir / "anchor.json"
        if anchor_path.exists():
            try:
                stored = AnchorDescriptor.from_dict(
                    json.loads(anchor_path.read_text("utf-8"))
                )
            except (json.JSONDecodeError, KeyError, TypeError, AnchorMismatchError) as exc:
                raise CorruptIndexError(f"unreadable anchor.json: {exc}") from exc
            if anchor is not None and anchor.anchor_id != stored.anchor_id:
                raise AnchorMismatchError(
                    "registry was initialized with a different anchor"
                )
            reg = cls(data_dir, stored)
            reg._load_index()
            return reg
        if anchor is None:
            raise InvalidConfigError(
                "anchor config required when opening a fresh registry"
            )
        data_dir.mkdir(parents=True, exist_ok=True)
        (data_dir / "specs").mkdir(exist_ok=True)
        reg = cls(data_dir, anchor)
        _atomic_write(
            anchor_path, json.dumps(anchor.to_dict(), indent=2).encode("utf-8")
        )
        reg._persist_index()
        return reg

    def _index_path(self) -> Path:
        return self.data_dir / "index.json"

    def _spec_path(self, lw_id: int) -> Path:
        return self.data_dir / "specs" / f"{lw_id}.lws"

    def _load_index(self) -> None:
        try:
            index = json.loads(self._index_path().read_text("utf-8"))
            self._last_id = int(index["last_id"])
            for key, entry in index["entries"].items():
                lw_id = int(key)
                spec = read_spec_file(self._spec_path(lw_id).read_bytes())
                self._learnwares[lw_id] = Learnware(
                    id=lw_id,
                    model_uri=entry["model_uri"],
                    spec=spec,
                    metadata=entry["metadata"],
                )
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise CorruptIndexError(f"unreadable registry index: {exc}") from exc

    def _persist_index(self) -> None:
        index = {
            "last_id": self._last_id,
            "entries": {
                str(lw.id): {
                    "file": f"{lw.id}.lws",
                    "model_uri": lw.model_uri,
                    "metadata": lw.metadata,
                }
                for lw in self.list_learnwares()
            },
        }
        _atomic_write(
            self._index_path(), json.dumps(index, indent=2).encode("utf-8")
        )

    # -- reads ---------------------------------------------------------------

    def get_anchor_descriptor(self) -> AnchorDescriptor:
        return self.descriptor

    def expected_spec_dim(self) -> int | None:
        """Spec dimension implied by the anchor, when derivable."""
        if self.descriptor.kind == KIND_TINY_ATTN:
            return self.descriptor.anchor_config().spec_dim
        for lw in self._learnwares.values():
            return lw.spec.spec_dim
        return None

    def get(self, lw_id: int) -> Learnware:
        lw = self._learnwares.get(lw_id)
        if lw is None:
            raise NotFoundError(f"no learnware with id {lw_id}")
        return lw

    def list_learnwares(self) -> list[Learnware]:
        return [self._learnwares[i] for i in sorted(self._learnwares)]

    def listing_json(self) -> str:
        """Canonical JSON of the listing, stable across reopen."""
        rows = [
            {
                "id": lw.id,
                "model_uri": lw.model_uri,
                "metadata": lw.metadata,
                "header": lw.spec.header_dict(),
            }
            for lw in self.list_learnwares()
        ]
        return canonical_json({"learnwares": rows})

    # -- writes ---------------------------------------------------------------

    def submit(self, model_uri: str, spec: Specification, metadata: dict | None = None) -> int:
        metadata = dict(metadata or {})
        if not isinstance(model_uri, str) or not model_uri:
            raise BadRequestError("model_uri must be a non-empty string")
        for key, value in metadata.items():
            if not isinstance(key, str) or not isinstance(value, str):
                raise BadRequestError("metadata must map strings to strings")
        if spec.anchor_id != self.anchor_id:
            raise AnchorMismatchError(
                f"spec anchor {spec.anchor_id[:12]} != registry anchor "
                f"{self.anchor_id[:12]}"
            )
        vector = np.asarray(spec.vector)
        if vector.ndim != 1 or vector.shape[0] != spec.spec_dim:
            raise DimMismatchError(
                f"vector length {vector.shape[0] if vector.ndim == 1 else vector.shape}"
                f" != header spec_dim {spec.spec_dim}"
            )
        expected = self.expected_spec_dim()
        if expected is not None and spec.spec_dim != expected:
            raise DimMismatchError(
                f"spec_dim {spec.spec_dim} != anchor's expected {expected}"
            )
        if not np.any(vector):
            raise ZeroVectorSpecError(
                "all-zero spec rejected: an untrained spec carries no information"
            )
        spec.validate()
        with self._lock:
            lw_id = self._last_id + 1
            _atomic_write(self._spec_path(lw_id), write_spec_file(spec))
            self._learnwares[lw_id] = Learnware(
                id=lw_id, model_uri=model_uri, spec=spec, metadata=metadata
            )
            self._last_id = lw_id
            self._persist_index()
        return lw_id

    def remove(self, lw_id: int) -> None:
        with self._lock:
            if lw_id not in self._learnwares:
                raise NotFoundError(f"no learnware with id {lw_id}")
            del self._learnwares[lw_id]
            path = self._spec_path(lw_id)
            if path.exists():
                path.unlink()
            self._persist_index()


def open_registry(
    data_dir: str | Path, anchor_config: "AnchorConfig | AnchorDescriptor | None" = None
) -> Registry:
    return Registry.open(data_dir, anchor_config)
