"""MNZ1 checkpoint archives: JSON metadata plus a CRC-checked table of named float32 or int64 tensors.

Layout (little-endian):
    b"MNZ1" | u32 version | u32 meta_len | meta JSON |
    u32 count | count x (u16 name_len | name | u8 dtype | u8 rank | u32 dims[rank] | payload) |
    u32 crc32 over everything from `count` to the end of the last payload

dtype 0 is an f32 payload, dtype 1 an i64 payload (integer counters such as optimizer steps).
"""

import json
import struct
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np

from core.nn import Module
from utils.errors import CheckpointFormatError, ContractError, FormatError
from utils.logger import setup_logger

logger = setup_logger(__name__)

MAGIC = b"MNZ1"
VERSION = 1
DTYPE_F32 = 0
DTYPE_I64 = 1
DTYPE_CODES = {DTYPE_F32: np.dtype("<f4"), DTYPE_I64: np.dtype("<i8")}

U8 = struct.Struct("<B")
U16 = struct.Struct("<H")
U32 = struct.Struct("<I")


@dataclass
class CheckpointManifest:
    metadata: Dict[str, Any] = field(default_factory=dict)
    tensors: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.tensors:
            raise ContractError(f"duplicate tensor name {name!r} in checkpoint")
        value = np.asarray(value)
        dtype = np.int64 if np.issubdtype(value.dtype, np.integer) else np.float32
        self.tensors[name] = np.ascontiguousarray(value, dtype=dtype)

    def with_prefix(self, prefix: str) -> Dict[str, np.ndarray]:
        """Tensors under `prefix.`, with the prefix stripped."""
        head = prefix + "."
        return {name[len(head):]: value for name, value in self.tensors.items() if name.startswith(head)}

    def has_prefix(self, prefix: str) -> bool:
        head = prefix + "."
        return any(name.startswith(head) for name in self.tensors)

    def to_bytes(self) -> bytes:
        meta = json.dumps(self.metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
        head = MAGIC + U32.pack(VERSION) + U32.pack(len(meta)) + meta
        table = bytearray(U32.pack(len(self.tensors)))
        for name in sorted(self.tensors):
            value = self.tensors[name]
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise ContractError(f"tensor name too long: {name[:40]}...")
            if value.ndim > 0xFF:
                raise ContractError(f"tensor {name} has rank {value.ndim}")
            table += U16.pack(len(encoded)) + encoded
            code = DTYPE_I64 if value.dtype == np.int64 else DTYPE_F32
            table += U8.pack(code) + U8.pack(value.ndim)
            for dim in value.shape:
                table += U32.pack(dim)
            table += value.astype(DTYPE_CODES[code]).tobytes()
        return head + bytes(table) + U32.pack(zlib.crc32(table) & 0xFFFFFFFF)

    @classmethod
    def from_bytes(cls, data: bytes, path: str = "<memory>") -> "CheckpointManifest":
        reader = _Reader(data, path)
        if reader.take(len(MAGIC), "magic") != MAGIC:
            raise CheckpointFormatError("bad magic", 0, path)
        version = reader.u32("version")
        if version != VERSION:
            raise CheckpointFormatError(f"unsupported version {version}", 4, path)
        meta_len = reader.u32("metadata length")
        meta_at = reader.offset
        try:
            metadata = json.loads(reader.take(meta_len, "metadata").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointFormatError(f"metadata is not JSON ({exc})", meta_at, path) from exc
        table_start = reader.offset
        manifest = cls(metadata=metadata)
        count = reader.u32("tensor count")
        for _ in range(count):
            name_at = reader.offset
            name_len = reader.u16("name length")
            try:
                name = reader.take(name_len, "tensor name").decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CheckpointFormatError("tensor name is not UTF-8", name_at, path) from exc
            if name in manifest.tensors:
                raise CheckpointFormatError(f"duplicate tensor name {name!r}", name_at, path)
            dtype_at = reader.offset
            code = reader.u8("dtype")
            if code not in DTYPE_CODES:
                raise CheckpointFormatError("unsupported dtype code", dtype_at, path)
            rank = reader.u8("rank")
            shape = tuple(reader.u32("dimension") for _ in range(rank))
            count_values = int(np.prod(shape, dtype=np.int64)) if shape else 1
            dtype = DTYPE_CODES[code]
            payload = reader.take(dtype.itemsize * count_values, f"payload of {name}")
            native = np.int64 if code == DTYPE_I64 else np.float32
            manifest.tensors[name] = np.frombuffer(payload, dtype=dtype).astype(native).reshape(shape)
        table_end = reader.offset
        expected = reader.u32("checksum")
        actual = zlib.crc32(data[table_start:table_end]) & 0xFFFFFFFF
        if actual != expected:
            raise CheckpointFormatError(f"CRC32 mismatch (stored {expected:#010x}, computed {actual:#010x})",
                                        table_end, path)
        if reader.offset != len(data):
            raise CheckpointFormatError(f"{len(data) - reader.offset} trailing bytes", reader.offset, path)
        return manifest


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise CheckpointFormatError(f"truncated while reading {what}", self.offset, self.path)
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def u8(self, what: str) -> int:
        return U8.unpack(self.take(1, what))[0]

    def u16(self, what: str) -> int:
        return U16.unpack(self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return U32.unpack(self.take(4, what))[0]


def build_manifest(modules: Mapping[str, Module], metadata: Optional[Dict[str, Any]] = None,
                   extra: Optional[Mapping[str, Mapping[str, np.ndarray]]] = None) -> CheckpointManifest:
    """Register each module's parameters under its prefix; `extra` adds raw tensor groups."""
    manifest = CheckpointManifest(metadata=dict(metadata or {}))
    for prefix, module in modules.items():
        for name, value in module.state_dict().items():
            manifest.add(f"{prefix}.{name}", value)
    for prefix, tensors in (extra or {}).items():
        for name, value in tensors.items():
            manifest.add(f"{prefix}.{name}", value)
    return manifest


def save_checkpoint(manifest: CheckpointManifest, path: Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(manifest.to_bytes())
    except OSError as exc:
        raise FormatError(f"cannot write checkpoint {path}: {exc}") from exc
    logger.info(f"Saved checkpoint {path} ({len(manifest.tensors)} tensors)")
    return path


def load_checkpoint(path: Path) -> CheckpointManifest:
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError as exc:
        raise FormatError(f"checkpoint not found: {path}") from exc
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    return CheckpointManifest.from_bytes(data, str(path))


def restore_module(manifest: CheckpointManifest, prefix: str, module: Module) -> Module:
    state = manifest.with_prefix(prefix)
    if not state:
        raise ContractError(f"checkpoint has no tensors under {prefix!r}")
    module.load_state_dict(state, strict=True)
    return module


def read_header(path: Path) -> Tuple[int, Dict[str, Any]]:
    """(version, metadata) without keeping the tensors."""
    manifest = load_checkpoint(path)
    return VERSION, manifest.metadata
