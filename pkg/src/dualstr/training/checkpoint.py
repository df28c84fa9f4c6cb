"""
Binary checkpoint format.

    b"C4ST" | u32 version | u64 header length | JSON header | payload

All integers are little-endian. The header is UTF-8 JSON with sorted keys and
lists every tensor's name, shape, byte offset and byte count, together with
the run configuration snapshot, the sampler RNG state and the step counter.
The payload holds the tensors as little-endian float32 in header order.
"""

import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np

from dualstr.config import RunConfig
from dualstr.errors import (
    CheckpointFormatError,
    CheckpointIntegrityError,
    IncompatibleCheckpointError,
)
from dualstr.model import DualBranchRecognizer
from dualstr.training.optim import AdamW

logger = logging.getLogger(__name__)

MAGIC = b"C4ST"
VERSION = 1
_PREAMBLE = struct.Struct("<4sIQ")
_PAYLOAD_DTYPE = np.dtype("<f4")
OPTIM_PREFIX = "optim."


@dataclass(kw_only=True)
class Checkpoint:
    tensors: dict[str, np.ndarray]
    config: dict[str, Any]
    step: int = 0
    rng_state: Optional[dict[str, Any]] = None
    trainable: dict[str, bool] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)

    def model_tensors(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if not k.startswith(OPTIM_PREFIX)}

    def optimizer_tensors(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if k.startswith(OPTIM_PREFIX)}

    def run_config(self) -> RunConfig:
        return RunConfig.from_snapshot(self.config)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name, value in ckpt.tensors.items():
        data = np.ascontiguousarray(value, dtype=_PAYLOAD_DTYPE).tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(np.shape(value)),
                "offset": offset,
                "nbytes": len(data),
                "trainable": bool(ckpt.trainable.get(name, False)),
            }
        )
        chunks.append(data)
        offset += len(data)
    header = {
        "config": ckpt.config,
        "metadata": ckpt.metadata,
        "rng_state": ckpt.rng_state,
        "step": ckpt.step,
        "tensors": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREAMBLE.pack(MAGIC, VERSION, len(header_bytes)) + header_bytes + b"".join(chunks)


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < _PREAMBLE.size:
        raise CheckpointIntegrityError(f"file is {len(data)} bytes, shorter than the preamble")
    magic, version, header_len = _PREAMBLE.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    start = _PREAMBLE.size
    if len(data) < start + header_len:
        raise CheckpointIntegrityError("header is truncated")
    try:
        header = json.loads(data[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointIntegrityError(f"header is not valid JSON: {e}")
    missing = {"config", "rng_state", "step", "tensors"} - set(header)
    if missing:
        raise CheckpointIntegrityError(f"header lacks {sorted(missing)}")

    payload = memoryview(data)[start + header_len :]
    expected = 0
    tensors: dict[str, np.ndarray] = {}
    trainable: dict[str, bool] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * _PAYLOAD_DTYPE.itemsize
        if entry["offset"] != expected or entry["nbytes"] != nbytes:
            raise CheckpointIntegrityError(
                f"tensor '{entry['name']}' offset/size disagree with the header layout"
            )
        if len(payload) < expected + nbytes:
            raise CheckpointIntegrityError(
                f"payload is truncated inside tensor '{entry['name']}'"
            )
        raw = np.frombuffer(payload[expected : expected + nbytes], dtype=_PAYLOAD_DTYPE)
        tensors[entry["name"]] = raw.reshape(shape).astype(np.float32)
        trainable[entry["name"]] = bool(entry["trainable"])
        expected += nbytes
    if len(payload) != expected:
        raise CheckpointIntegrityError(
            f"payload is {len(payload)} bytes, header accounts for {expected}"
        )
    return Checkpoint(
        tensors=tensors,
        config=header["config"],
        step=int(header["step"]),
        rng_state=header["rng_state"],
        trainable=trainable,
        metadata=header.get("metadata", {}),
    )


def save_checkpoint(path: Path, ckpt: Checkpoint) -> None:
    """Write atomically: a temporary file in the same directory replaces the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = encode_checkpoint(ckpt)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.debug(f"Saved checkpoint {path} ({len(ckpt.tensors)} tensors, {len(data)} bytes)")


def load_checkpoint(path: Path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointIntegrityError(f"cannot read checkpoint {path}: {e.strerror or e}")
    return decode_checkpoint(data)


def rng_from_state(state: Mapping[str, Any]) -> np.random.Generator:
    bit_generator = getattr(np.random, state["bit_generator"])()
    bit_generator.state = dict(state)
    return np.random.Generator(bit_generator)


def training_checkpoint(
    model: DualBranchRecognizer,
    optimizer: Optional[AdamW] = None,
    rng: Optional[np.random.Generator] = None,
    step: int = 0,
    metadata: Optional[Mapping[str, Any]] = None,
) -> Checkpoint:
    tensors: dict[str, np.ndarray] = {}
    trainable: dict[str, bool] = {}
    for name, p in model.named_parameters():
        tensors[name] = p.data
        trainable[name] = p.requires_grad
    if optimizer is not None:
        tensors.update(optimizer.state_tensors())
    meta = dict(metadata or {})
    if optimizer is not None:
        meta["optim_steps"] = optimizer.step_count
    return Checkpoint(
        tensors=tensors,
        config=model.config.snapshot(),
        step=step,
        rng_state=rng.bit_generator.state if rng is not None else None,
        trainable=trainable,
        metadata=meta,
    )


def save_training_state(
    path: Path,
    model: DualBranchRecognizer,
    optimizer: Optional[AdamW] = None,
    rng: Optional[np.random.Generator] = None,
    step: int = 0,
    metadata: Optional[Mapping[str, Any]] = None,
) -> None:
    save_checkpoint(path, training_checkpoint(model, optimizer, rng, step, metadata))


def restore_training_state(
    ckpt: Checkpoint,
    model: DualBranchRecognizer,
    optimizer: Optional[AdamW] = None,
) -> Optional[np.random.Generator]:
    """Load weights (and optimizer moments) into existing objects; return the saved RNG."""
    model.load_state_dict(ckpt.model_tensors())
    if optimizer is not None:
        optim_tensors = ckpt.optimizer_tensors()
        if not optim_tensors and optimizer.m:
            raise IncompatibleCheckpointError("checkpoint holds no optimizer state to resume")
        optimizer.load_state(optim_tensors, int(ckpt.metadata.get("optim_steps", 0)))
    return rng_from_state(ckpt.rng_state) if ckpt.rng_state is not None else None


def load_model(path: Path, config: Optional[RunConfig] = None) -> DualBranchRecognizer:
    """Build a model from the embedded config (or `config`) and load its weights."""
    ckpt = load_checkpoint(path)
    model = DualBranchRecognizer(config if config is not None else ckpt.run_config())
    model.load_state_dict(ckpt.model_tensors())
    model.eval()
    logger.info(f"Loaded model from {path} (step {ckpt.step})")
    return model
