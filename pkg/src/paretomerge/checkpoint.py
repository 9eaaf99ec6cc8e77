"""Binary tensor-container checkpoints and endpoint compatibility checks.

Container layout (little-endian): 4 magic bytes ``PMRG``, a u32 header
length, a UTF-8 JSON header describing tensor shapes/offsets plus free-form
string metadata, then the raw float32 payload. Offsets are relative to the
payload start and 8-byte aligned, so a canonical save of the same checkpoint
is byte-identical every time.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointFormatError

MAGIC = b"PMRG"
_ALIGN = 8


@dataclass
class Checkpoint:
    """Named map of dense float32 tensors plus provenance metadata.

    Immutable by convention after construction; tensor insertion order is
    preserved and defines the on-disk payload order.
    """

    tensors: dict[str, np.ndarray]
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.tensors:
            raise CheckpointFormatError("checkpoint must hold at least one tensor")
        converted = {}
        for name, arr in self.tensors.items():
            if not isinstance(name, str) or not name:
                raise CheckpointFormatError("tensor names must be non-empty strings")
            arr = np.asarray(arr, dtype=np.float32)
            if arr.ndim == 0 or any(d < 1 for d in arr.shape):
                raise CheckpointFormatError(
                    f"tensor {name!r}: shape must be non-empty with all dims >= 1, got {arr.shape}"
                )
            converted[name] = np.ascontiguousarray(arr)
        self.tensors = converted

    @property
    def total_parameters(self) -> int:
        return sum(int(a.size) for a in self.tensors.values())

    def equal_elements(self, other: "Checkpoint") -> bool:
        if list(self.tensors) != list(other.tensors):
            return False
        return all(
            a.shape == other.tensors[n].shape and np.array_equal(a, other.tensors[n])
            for n, a in self.tensors.items()
        )


@dataclass
class CompatibilityReport:
    """Name-set and shape differences between two checkpoints."""

    missing_in_b: list[str]
    missing_in_a: list[str]
    shape_mismatches: list[str]

    @property
    def compatible(self) -> bool:
        return not (self.missing_in_b or self.missing_in_a or self.shape_mismatches)

    def describe(self) -> str:
        if self.compatible:
            return "compatible"
        parts = []
        if self.missing_in_b:
            parts.append(f"missing in b: {self.missing_in_b}")
        if self.missing_in_a:
            parts.append(f"missing in a: {self.missing_in_a}")
        if self.shape_mismatches:
            parts.append(f"shape mismatches: {self.shape_mismatches}")
        return "; ".join(parts)


def check_compatible(a: Checkpoint, b: Checkpoint) -> CompatibilityReport:
    """Compare tensor name sets and shapes; compatible iff both agree."""
    names_a, names_b = set(a.tensors), set(b.tensors)
    missing_in_b = sorted(names_a - names_b)
    missing_in_a = sorted(names_b - names_a)
    mismatches = sorted(
        n for n in names_a & names_b if a.tensors[n].shape != b.tensors[n].shape
    )
    return CompatibilityReport(missing_in_b, missing_in_a, mismatches)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write the canonical container; overwrites any existing file."""
    entries = {}
    offset = 0
    for name, arr in ckpt.tensors.items():
        offset = _align_up(offset)
        nbytes = int(arr.size) * 4
        entries[name] = {"shape": list(arr.shape), "offset": offset, "nbytes": nbytes}
        offset += nbytes
    header = {"tensors": entries, "metadata": dict(ckpt.metadata)}
    header_bytes = json.dumps(header, separators=(",", ":"), ensure_ascii=False).encode("utf-8")

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        pos = 0
        for name, arr in ckpt.tensors.items():
            aligned = _align_up(pos)
            if aligned > pos:
                fh.write(b"\x00" * (aligned - pos))
            data = arr.astype("<f4", copy=False).tobytes()
            fh.write(data)
            pos = aligned + len(data)


def load_checkpoint(path, validate: bool = True) -> Checkpoint:
    """Read a container back; rejects malformed files with located errors.

    With ``validate`` enabled (the default) any NaN/Inf element fails the
    load, reported with its tensor name and absolute file offset.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 4:
        raise CheckpointFormatError(f"{path}: file too short for container header")
    if blob[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    (header_len,) = struct.unpack("<I", blob[4:8])
    header_end = 8 + header_len
    if len(blob) < header_end:
        raise CheckpointFormatError(f"{path}: truncated header ({header_len} bytes declared)")
    try:
        header = json.loads(blob[8:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: header is not valid JSON: {exc}") from exc

    if not isinstance(header, dict) or "tensors" not in header:
        raise CheckpointFormatError(f"{path}: header missing 'tensors' table")
    entries = header["tensors"]
    if not isinstance(entries, dict) or not entries:
        raise CheckpointFormatError(f"{path}: container must hold at least one tensor")
    metadata = header.get("metadata", {})
    if not isinstance(metadata, dict):
        raise CheckpointFormatError(f"{path}: metadata must be a string map")

    payload = blob[header_end:]
    tensors: dict[str, np.ndarray] = {}
    for name, entry in entries.items():
        try:
            shape = tuple(int(d) for d in entry["shape"])
            offset = int(entry["offset"])
            nbytes = int(entry["nbytes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointFormatError(f"{path}: tensor {name!r}: malformed header entry") from exc
        if not shape or any(d < 1 for d in shape):
            raise CheckpointFormatError(f"{path}: tensor {name!r}: invalid shape {shape}")
        count = math.prod(shape)
        if nbytes != count * 4:
            raise CheckpointFormatError(
                f"{path}: tensor {name!r}: header declares {nbytes} bytes "
                f"but shape {shape} needs {count * 4}"
            )
        if offset % _ALIGN != 0:
            raise CheckpointFormatError(
                f"{path}: tensor {name!r}: offset {offset} is not {_ALIGN}-byte aligned"
            )
        if offset + nbytes > len(payload):
            raise CheckpointFormatError(
                f"{path}: tensor {name!r}: payload truncated "
                f"(needs bytes [{offset}, {offset + nbytes}) of {len(payload)})"
            )
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape)
        if validate and not np.isfinite(arr).all():
            bad = int(np.flatnonzero(~np.isfinite(arr.ravel()))[0])
            raise CheckpointFormatError(
                f"{path}: tensor {name!r}: non-finite element at flat index {bad} "
                f"(file offset {header_end + offset + 4 * bad})"
            )
        tensors[name] = arr.copy()
    return Checkpoint(tensors=tensors, metadata={str(k): str(v) for k, v in metadata.items()})


def _align_up(n: int) -> int:
    return (n + _ALIGN - 1) // _ALIGN * _ALIGN
