"""Binary container for trained models (``TCNM``).

Layout, all integers little-endian::

    magic    4 bytes   b"TCNM"
    version  u32       currently 1
    hlen     u32       byte length of the JSON header that follows
    header   hlen      UTF-8 JSON: {"spec": ..., "metadata": ..., "params": [[name, shape], ...]}
    blobs              each parameter in manifest order, float32 LE, C order

Parameters are always stored as float32; a float64 model is rounded on save.
"""
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError
from .models import TrainedModel, parameter_shapes, spec_from_dict, spec_to_dict

MAGIC = b"TCNM"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    return value


def dumps_model(model):
    names = sorted(model.params)
    header = {
        "spec": spec_to_dict(model.spec),
        "metadata": _jsonable(dict(model.metadata)),
        "params": [[name, list(model.params[name].shape)] for name in names],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blobs = b"".join(np.ascontiguousarray(model.params[n], dtype="<f4").tobytes() for n in names)
    return _PREFIX.pack(MAGIC, VERSION, len(head)) + head + blobs


def loads_model(blob, path=None):
    if len(blob) < _PREFIX.size:
        raise ParseError("truncated model header", f"byte {len(blob)}", path)
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}, expected {MAGIC!r}", "byte 0", path)
    if version != VERSION:
        raise ParseError(f"unsupported model format version {version}", "byte 4", path)
    start = _PREFIX.size
    if len(blob) < start + hlen:
        raise ParseError("truncated JSON header", f"byte {len(blob)}", path)
    try:
        header = json.loads(blob[start : start + hlen].decode("utf-8"))
        spec = spec_from_dict(header["spec"])
        manifest = [(name, tuple(shape)) for name, shape in header["params"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"malformed header ({exc})", f"byte {start}", path) from None
    expected = parameter_shapes(spec)
    if dict(manifest) != expected:
        raise ParseError("parameter manifest does not match the model spec", f"byte {start}", path)
    offset = start + hlen
    params = {}
    for name, shape in manifest:
        count = int(np.prod(shape))
        end = offset + 4 * count
        if end > len(blob):
            raise ParseError(f"parameter {name} truncated", f"byte {len(blob)}", path)
        params[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape).astype(np.float32)
        offset = end
    if offset != len(blob):
        raise ParseError(f"{len(blob) - offset} trailing bytes", f"byte {offset}", path)
    return TrainedModel(spec, params, header.get("metadata", {}))


def save_model(model, path):
    Path(path).write_bytes(dumps_model(model))


def load_model(path):
    path = Path(path)
    return loads_model(path.read_bytes(), path)
