"""Versioned checkpoint container: config + vocabulary fingerprint + named
float32 tensors, with a byte-exact round trip.

Layout: magic line, 8-byte little-endian header length, JSON header (config,
vocab fingerprint, tensor manifest), then the raw tensor payload. Loading
parses everything up front, so a failed load never leaves partial state.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .bpe import BpeVocab
from .errors import (
    CheckpointCorruptError,
    CheckpointVersionError,
    ConfigError,
    ContractError,
    FingerprintMismatchError,
)
from .model import EncoderConfig, Model
from .numerics import Tensor

MAGIC_PREFIX = b"cvrt-ckpt-"
MAGIC = b"cvrt-ckpt-v1\n"


def save_checkpoint(path, params: dict[str, Tensor], config: EncoderConfig, vocab_fingerprint: str) -> str:
    """Write a checkpoint; returns its content fingerprint (sha256 hex)."""
    manifest = []
    blobs = []
    offset = 0
    for name in sorted(params):
        data = params[name].data
        if data.dtype != np.float32:
            raise ContractError(f"checkpoint tensors must be float32, {name} is {data.dtype}")
        raw = np.ascontiguousarray(data).tobytes()
        manifest.append({
            "name": name,
            "shape": list(data.shape),
            "dtype": "float32",
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({
        "config": config.to_dict(),
        "vocab_fingerprint": vocab_fingerprint,
        "tensors": manifest,
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(header).to_bytes(8, "little"))
        f.write(header)
        for raw in blobs:
            f.write(raw)
    return checkpoint_fingerprint(path)


def checkpoint_fingerprint(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class LoadedCheckpoint:
    params: dict[str, Tensor]
    config: EncoderConfig
    vocab_fingerprint: str
    fingerprint: str  # sha256 of the checkpoint file itself


def load_checkpoint(
    path,
    expected_vocab_fingerprint: str | None = None,
    expected_config: EncoderConfig | None = None,
) -> LoadedCheckpoint:
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(MAGIC_PREFIX):
        raise CheckpointCorruptError(f"{path}: not a checkpoint file")
    if not blob.startswith(MAGIC):
        version = blob[: blob.find(b"\n")].decode("utf-8", "replace")
        raise CheckpointVersionError(f"{path}: unsupported format {version!r}")
    pos = len(MAGIC)
    if len(blob) < pos + 8:
        raise CheckpointCorruptError(f"{path}: truncated header length")
    header_len = int.from_bytes(blob[pos : pos + 8], "little")
    pos += 8
    if len(blob) < pos + header_len:
        raise CheckpointCorruptError(f"{path}: truncated header")
    try:
        header = json.loads(blob[pos : pos + header_len].decode("utf-8"))
        config = EncoderConfig.from_dict(header["config"])
        vocab_fp = header["vocab_fingerprint"]
        manifest = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointCorruptError(f"{path}: malformed header: {exc}") from exc
    payload = blob[pos + header_len :]

    params: dict[str, Tensor] = {}
    for entry in manifest:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(payload):
            raise CheckpointCorruptError(f"{path}: truncated tensor payload for {entry['name']}")
        arr = np.frombuffer(payload[start : start + nbytes], dtype=np.float32)
        if arr.size != int(np.prod(entry["shape"], dtype=np.int64)):
            raise CheckpointCorruptError(f"{path}: tensor size mismatch for {entry['name']}")
        params[entry["name"]] = nm.parameter(
            arr.reshape(entry["shape"]).copy(), entry["name"]
        )

    if expected_vocab_fingerprint is not None and vocab_fp != expected_vocab_fingerprint:
        raise FingerprintMismatchError(
            f"{path}: checkpoint was trained with a different vocabulary"
        )
    if expected_config is not None and config != expected_config:
        raise ConfigError(f"{path}: checkpoint config differs from the session config")
    return LoadedCheckpoint(
        params=params,
        config=config,
        vocab_fingerprint=vocab_fp,
        fingerprint=checkpoint_fingerprint(path),
    )


def save_model(path, model: Model) -> str:
    return save_checkpoint(path, model.params, model.config, model.vocab.fingerprint())


def load_model(path, vocab: BpeVocab) -> tuple[Model, str]:
    """Load a checkpoint bound to `vocab`; fingerprint mismatch refuses."""
    loaded = load_checkpoint(path, expected_vocab_fingerprint=vocab.fingerprint())
    model = Model(config=loaded.config, params=loaded.params, vocab=vocab)
    return model, loaded.fingerprint
