"""Single-file, self-describing, checksummed model bundles.

Layout::

    RTAP-BUNDLE\\n
    <sha256 of the header bytes, hex>\\n
    <header: one line of canonical JSON>\\n
    <raw array bytes, concatenated>

The header carries ``format_version``, ``business``, the model state with every
array replaced by ``{"$array": i}``, and one section entry per array giving its
dtype, shape, byte offset, byte length and sha256. Writing goes through a
temporary file and an atomic rename, so a failed save never leaves a partial
bundle behind.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ModelError
from .pipeline import FORMAT_VERSION, PipelineModel

MAGIC = b"RTAP-BUNDLE\n"
_ARRAY = "$array"


def _flatten(obj, arrays: list[np.ndarray]):
    if isinstance(obj, np.ndarray):
        if obj.dtype == object:
            raise TypeError("object arrays cannot be stored in a bundle")
        arrays.append(np.ascontiguousarray(obj))
        return {_ARRAY: len(arrays) - 1}
    if isinstance(obj, dict):
        return {str(k): _flatten(v, arrays) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_flatten(v, arrays) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _restore(obj, arrays: list[np.ndarray]):
    if isinstance(obj, dict):
        if set(obj) == {_ARRAY}:
            return arrays[obj[_ARRAY]]
        return {k: _restore(v, arrays) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_restore(v, arrays) for v in obj]
    return obj


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def encode(model: PipelineModel) -> bytes:
    arrays: list[np.ndarray] = []
    state = _flatten(model.to_state(), arrays)
    sections, offset = [], 0
    for a in arrays:
        raw = a.tobytes()
        sections.append({"dtype": a.dtype.str, "shape": list(a.shape), "offset": offset,
                         "length": len(raw), "sha256": _sha(raw)})
        offset += len(raw)
    header = {"format_version": model.format_version, "business": model.business,
              "state": state, "sections": sections}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()
    return b"".join([MAGIC, _sha(hbytes).encode(), b"\n", hbytes, b"\n", *(a.tobytes() for a in arrays)])


def decode(data: bytes) -> PipelineModel:
    if not data.startswith(MAGIC):
        raise ModelError("not a model bundle (bad magic line)")
    rest = data[len(MAGIC):]
    try:
        digest, hbytes, payload = rest.split(b"\n", 2)
    except ValueError:
        raise ModelError("truncated model bundle") from None
    if _sha(hbytes) != digest.decode(errors="replace"):
        raise ModelError("model bundle header checksum mismatch")
    header = json.loads(hbytes)
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelError(f"bundle format version {version} is not supported (expected {FORMAT_VERSION})")
    arrays = []
    for i, s in enumerate(header["sections"]):
        raw = payload[s["offset"]: s["offset"] + s["length"]]
        if len(raw) != s["length"] or _sha(raw) != s["sha256"]:
            raise ModelError(f"model bundle section {i} is corrupt")
        arrays.append(np.frombuffer(raw, dtype=np.dtype(s["dtype"])).reshape(s["shape"]).copy())
    try:
        return PipelineModel.from_state(_restore(header["state"], arrays), version)
    except (KeyError, TypeError, ValueError) as e:
        raise ModelError(f"malformed model bundle: {e}") from e


def save_model(model: PipelineModel, path: str | os.PathLike) -> str:
    """Write ``model`` atomically; returns the sha256 of the file contents."""
    data = encode(model)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return _sha(data)


def load_model(path: str | os.PathLike) -> PipelineModel:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise ModelError(f"cannot read model bundle {path}: {e}") from e
    return decode(data)
