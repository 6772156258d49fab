"""File formats: model JSON, raw byte sequences, memory manifests,
cluster-assignment JSON. All writes are atomic (temp file + rename)."""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .errors import InvalidParameterError
from .source_model import MarkovModel, MemoryStore


def _atomic_write_bytes(path: str, data: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".mauc-tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))


def save_model(model: MarkovModel, path: str) -> None:
    obj = {"k": model.k, "order": model.order, "rows": model.rows.tolist()}
    atomic_write_text(path, json.dumps(obj) + "\n")


def load_model(path: str) -> MarkovModel:
    with open(path) as fh:
        obj = json.load(fh)
    try:
        return MarkovModel(k=int(obj["k"]), order=int(obj["order"]),
                           rows=np.asarray(obj["rows"], dtype=np.float64))
    except KeyError as e:
        raise InvalidParameterError(f"model file {path} is missing field {e}") from e


def save_sequence(seq, path: str) -> None:
    arr = np.asarray(seq, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise InvalidParameterError("sequence files hold one symbol per byte (k <= 256)")
    _atomic_write_bytes(path, arr.astype(np.uint8).tobytes())


def load_sequence(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    return np.frombuffer(data, dtype=np.uint8).astype(np.int64)


def save_stream(data: bytes, path: str) -> None:
    _atomic_write_bytes(path, data)


def load_stream(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def load_manifest(path: str) -> MemoryStore:
    """Memory manifest: JSON list of {"path": ..., "label"?: int}. Sequence
    paths are resolved relative to the manifest's directory."""
    with open(path) as fh:
        entries = json.load(fh)
    if not isinstance(entries, list):
        raise InvalidParameterError(f"manifest {path} must be a JSON list")
    base = os.path.dirname(os.path.abspath(path))
    seqs, labels, any_label = [], [], False
    for i, e in enumerate(entries):
        if "path" not in e:
            raise InvalidParameterError(f"manifest entry {i} has no path")
        p = e["path"]
        if not os.path.isabs(p):
            p = os.path.join(base, p)
        seqs.append(load_sequence(p))
        if "label" in e and e["label"] is not None:
            labels.append(int(e["label"]))
            any_label = True
        else:
            labels.append(-1)
    if any_label and -1 in labels:
        raise InvalidParameterError("manifest labels must be all present or all absent")
    return MemoryStore(seqs, labels=np.asarray(labels) if any_label else None)


def save_assignment(K: int, assignment, total_dl: float, path: str) -> None:
    obj = {"K": int(K),
           "assignment": [int(a) for a in assignment],
           "total_dl": float(total_dl)}
    atomic_write_text(path, json.dumps(obj) + "\n")


def load_assignment(path: str) -> tuple[int, np.ndarray, float]:
    with open(path) as fh:
        obj = json.load(fh)
    try:
        return (int(obj["K"]),
                np.asarray(obj["assignment"], dtype=np.int64),
                float(obj["total_dl"]))
    except KeyError as e:
        raise InvalidParameterError(f"assignment file {path} is missing field {e}") from e
