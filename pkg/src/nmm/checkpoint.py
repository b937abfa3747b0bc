"""Checkpoint container.

Layout::

    b"NMMCKPT\\n"                      magic
    uint32 little-endian               header length in bytes
    header                             UTF-8 JSON: format version, spec,
                                       sizes, precision, vocab hash, metadata
                                       and the ordered list of blocks
    block data                         raw little-endian arrays, in header order
    sha256 of everything above         32 bytes

Arrays are written with their own dtype, so a round trip is bit exact.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .mixture import NeuralMixtureModel
from .notation import ComponentSpec, MixtureSpec

MAGIC = b"NMMCKPT\n"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


class VocabMismatchError(CheckpointError):
    pass


def _spec_to_json(spec: MixtureSpec) -> dict:
    return {
        "text": spec.text,
        "components": [[c.kind, c.hidden_size, c.history, c.depth] for c in spec.components],
        "embedding_size": spec.embedding_size,
        "mixture_size": spec.mixture_size,
        "vocab_size": spec.vocab_size,
    }


def _spec_from_json(d: dict) -> MixtureSpec:
    comps = tuple(ComponentSpec(k, h, n, depth) for k, h, n, depth in d["components"])
    return MixtureSpec(comps, d["embedding_size"], d["mixture_size"], d["vocab_size"])


def save_checkpoint(path, model: NeuralMixtureModel, meta: dict | None = None,
                    extra_blocks: dict[str, np.ndarray] | None = None) -> None:
    """Write parameters (and optional extra arrays such as momentum buffers)."""
    blocks = [(k, v) for k, v in model.params.items()]
    for k, v in (extra_blocks or {}).items():
        blocks.append((f"extra:{k}", v))
    header = {
        "format_version": FORMAT_VERSION,
        "spec": _spec_to_json(model.spec),
        "precision": model.dtype.name,
        "eos_id": model.eos_id,
        "vocab_hash": model.vocab_hash,
        "meta": meta or {},
        "blocks": [
            {"name": k, "shape": list(v.shape), "dtype": v.dtype.newbyteorder("<").str}
            for k, v in blocks
        ],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(hbytes)), hbytes]
    for _, v in blocks:
        parts.append(np.ascontiguousarray(v, dtype=v.dtype.newbyteorder("<")).tobytes())
    body = b"".join(parts)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(body + hashlib.sha256(body).digest())
    tmp.replace(path)


def read_header(path) -> dict:
    return _read(path)[0]


def _read(path):
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 4 + 32 or not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic or truncated)")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch, file is truncated or corrupt")
    (hlen,) = struct.unpack_from("<I", body, len(MAGIC))
    start = len(MAGIC) + 4
    try:
        header = json.loads(body[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('format_version')} is not supported "
            f"(expected {FORMAT_VERSION})"
        )
    arrays = {}
    offset = start + hlen
    for b in header["blocks"]:
        dt = np.dtype(b["dtype"])
        n = int(np.prod(b["shape"], dtype=np.int64)) * dt.itemsize
        if offset + n > len(body):
            raise CheckpointError(f"{path}: block {b['name']} runs past end of file")
        arrays[b["name"]] = np.frombuffer(body, dtype=dt, count=n // dt.itemsize, offset=offset).reshape(
            b["shape"]
        ).astype(dt.newbyteorder("="))
        offset += n
    if offset != len(body):
        raise CheckpointError(f"{path}: {len(body) - offset} trailing bytes after last block")
    return header, arrays


def load_checkpoint(path, expected_vocab_hash: str | None = None):
    """Rebuild the model; returns ``(model, meta, extra_blocks)``.

    Nothing is returned unless the whole file validates.
    """
    header, arrays = _read(path)
    stored_hash = header.get("vocab_hash")
    if expected_vocab_hash is not None and stored_hash is not None and stored_hash != expected_vocab_hash:
        raise VocabMismatchError(
            f"{path}: vocabulary hash {stored_hash} does not match expected {expected_vocab_hash}"
        )
    spec = _spec_from_json(header["spec"])
    model = NeuralMixtureModel(spec, header["precision"], seed=0, eos_id=header["eos_id"],
                               vocab_hash=stored_hash)
    params = model.params
    for name, target in params.items():
        if name not in arrays:
            raise CheckpointError(f"{path}: missing parameter block {name}")
        if arrays[name].shape != target.shape:
            raise CheckpointError(f"{path}: block {name} has shape {arrays[name].shape}, expected {target.shape}")
        target[...] = arrays[name]
    extra = {k[len("extra:"):]: v for k, v in arrays.items() if k.startswith("extra:")}
    return model, header["meta"], extra
