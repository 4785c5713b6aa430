"""Model checkpoints: a binary tensor container plus a JSON metadata sidecar.

Binary layout (all integers little-endian)::

    b"SHRD" | u32 version | u64 manifest length | manifest (UTF-8 JSON) | payloads

The manifest lists every tensor as ``{"name", "shape", "offset", "nbytes"}``
with offsets counted from the first payload byte. Payloads are contiguous
little-endian float64. The sidecar (``<path>.json``) records the model kind,
architecture sizes, lag, sensor indices, scaler parameters and seed.
"""

import json
import os
import struct
import tempfile

import numpy as np

from .datasets import Scaler
from .errors import FormatError
from .models import build_forecaster, build_sdn, build_shred

MAGIC = b"SHRD"
VERSION = 1
_F64 = np.dtype("<f8")


def sidecar_path(path):
    return os.fspath(path) + ".json"


def _scaler_doc(scaler):
    if scaler is None or not scaler.fitted:
        return None
    # Python floats survive a JSON round trip exactly (shortest repr).
    return {"minimum": [float(v) for v in np.ravel(scaler.minimum)],
            "maximum": [float(v) for v in np.ravel(scaler.maximum)]}


def _scaler_from(doc):
    if doc is None:
        return None
    return Scaler(np.array(doc["minimum"], dtype=np.float64), np.array(doc["maximum"], dtype=np.float64))


def architecture(model):
    """Sizes needed to rebuild an untrained copy of ``model``."""
    arch = {"kind": model.kind}
    if model.kind in ("shred", "forecaster"):
        arch.update(input_size=model.encoder.input_size, hidden_size=model.encoder.hidden_size,
                    num_layers=model.encoder.num_layers, lag=int(model.lag))
    if model.kind in ("shred", "sdn"):
        arch.update(decoder_input=model.decoder.input_size,
                    decoder_sizes=list(model.decoder.hidden_sizes),
                    output_size=model.decoder.output_size)
    return arch


def _build(arch):
    kind = arch.get("kind")
    if kind == "shred":
        return build_shred(arch["input_size"], arch["output_size"], arch["lag"], arch["hidden_size"],
                           arch["num_layers"], tuple(arch["decoder_sizes"]))
    if kind == "sdn":
        return build_sdn(arch["decoder_input"], arch["output_size"], tuple(arch["decoder_sizes"]))
    if kind == "forecaster":
        return build_forecaster(arch["input_size"], arch["lag"], arch["hidden_size"], arch["num_layers"])
    raise FormatError(f"unknown model kind {kind!r} in checkpoint sidecar", 0)


def _atomic_write(path, data, mode="wb"):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, model, seed=None, extra=None):
    """Write ``model`` to ``path`` and its metadata to ``path + '.json'``."""
    path = os.fspath(path)
    entries, payloads, offset = [], [], 0
    for name, tensor in model.named_parameters():
        arr = np.ascontiguousarray(tensor.value, dtype=_F64)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
        payloads.append(arr.tobytes())
        offset += arr.nbytes
    manifest = json.dumps({"tensors": entries}, sort_keys=True).encode("utf-8")
    blob = b"".join([MAGIC, struct.pack("<IQ", VERSION, len(manifest)), manifest] + payloads)
    meta = {
        "format": "SHRD",
        "version": VERSION,
        "architecture": architecture(model),
        "sensors": None if model.sensors is None else [int(i) for i in model.sensors],
        "sensor_scaler": _scaler_doc(model.sensor_scaler),
        "state_scaler": _scaler_doc(getattr(model, "state_scaler", None)),
        "seed": seed,
    }
    if extra:
        meta["extra"] = extra
    _atomic_write(path, blob)
    _atomic_write(sidecar_path(path), json.dumps(meta, indent=2, sort_keys=True) + "\n", mode="w")
    return path


def read_tensors(path):
    """Parse the binary container into ``{name: array}``."""
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0

    def need(n, what):
        if pos + n > len(data):
            raise FormatError(f"truncated checkpoint while reading {what}", pos)

    need(4, "magic")
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}", 0)
    pos = 4
    need(12, "header")
    version, mlen = struct.unpack_from("<IQ", data, pos)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", pos)
    pos += 12
    need(mlen, "manifest")
    try:
        manifest = json.loads(data[pos: pos + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable manifest: {exc}", pos) from None
    pos += mlen
    base = pos
    tensors = {}
    for entry in manifest.get("tensors", []):
        shape = tuple(int(d) for d in entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        if nbytes != entry["nbytes"]:
            raise FormatError(f"tensor {entry['name']} size does not match its shape", base)
        pos = base + int(entry["offset"])
        need(nbytes, f"tensor {entry['name']}")
        tensors[entry["name"]] = np.frombuffer(data, _F64, nbytes // 8, pos).reshape(shape).astype(np.float64)
        pos += nbytes
    end = base + sum(int(e["nbytes"]) for e in manifest.get("tensors", []))
    if end != len(data):
        raise FormatError(f"{len(data) - end} unexpected trailing bytes", end)
    return tensors


def load_checkpoint(path):
    """Rebuild a model bit-exactly from ``path`` and its sidecar."""
    path = os.fspath(path)
    tensors = read_tensors(path)
    try:
        with open(sidecar_path(path)) as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"unreadable sidecar: {exc}", exc.pos) from None
    model = _build(meta["architecture"])
    params = dict(model.named_parameters())
    if set(params) != set(tensors):
        missing = sorted(set(params) ^ set(tensors))
        raise FormatError(f"checkpoint tensors do not match architecture: {missing}", 0)
    for name, tensor in params.items():
        if tensors[name].shape != tensor.value.shape:
            raise FormatError(f"tensor {name} has shape {tensors[name].shape}, expected {tensor.value.shape}", 0)
        tensor.value[...] = tensors[name]
    model.sensors = None if meta.get("sensors") is None else tuple(meta["sensors"])
    model.sensor_scaler = _scaler_from(meta.get("sensor_scaler"))
    if hasattr(model, "state_scaler"):
        model.state_scaler = _scaler_from(meta.get("state_scaler"))
    return model, meta


def checkpoint_metadata(path):
    with open(sidecar_path(path)) as fh:
        return json.load(fh)

