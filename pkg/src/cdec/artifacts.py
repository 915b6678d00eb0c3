"""Sidecar records: every written file gets ``<file>.json`` with its config and hash."""
import datetime
import hashlib
import json
import os


def blob_hash(data):
    """Git-style object id of ``data`` (sha1 over ``blob <size>\\0`` + bytes)."""
    h = hashlib.sha1(f"blob {len(data)}\0".encode())
    h.update(data)
    return h.hexdigest()


def file_hash(path):
    with open(path, "rb") as fh:
        return blob_hash(fh.read())


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "item") and getattr(value, "ndim", 1) == 0:
        return value.item()
    if isinstance(value, float) and value != value:
        return None
    return value


def write_sidecar(path, config, **extra):
    """Record the resolved config, content hash and a timestamp next to ``path``."""
    from . import __version__

    record = {
        "file": os.path.basename(path),
        "sha1": file_hash(path),
        "config": _jsonable(config),
        "version": __version__,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
    }
    record.update(_jsonable(extra))
    with open(f"{path}.json", "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return record


def read_sidecar(path):
    with open(f"{path}.json") as fh:
        return json.load(fh)
