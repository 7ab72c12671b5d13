"""Weight checkpoint files.

Binary layout (little-endian): 8-byte magic b"VCONVWTS", uint32 version,
then the raw row-major float64 data of every parameter concatenated in the
fixed parameter order. A JSON manifest written alongside (same path +
".json") lists each parameter's name, shape, and byte offset.
"""

import json
import struct

import numpy as np

from .net import NetWeights, VirConvNetSpec
from .rng import SeededRng

MAGIC = b"VCONVWTS"
VERSION = 1


def save_weights(path, weights: NetWeights):
    entries = []
    offset = len(MAGIC) + 4
    blobs = []
    for name, arr, _ in weights.params():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(data)
        offset += len(data)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        for b in blobs:
            f.write(b)
    with open(str(path) + ".json", "w") as f:
        json.dump({"version": VERSION, "dtype": "<f8", "params": entries}, f, indent=1)


def load_weights(path, spec: VirConvNetSpec) -> NetWeights:
    weights = NetWeights.initialize(spec, SeededRng(0))
    with open(str(path) + ".json") as f:
        manifest = json.load(f)
    if manifest["version"] != VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest['version']}")
    with open(path, "rb") as f:
        blob = f.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic")
    by_name = {name: arr for name, arr, _ in weights.params()}
    for entry in manifest["params"]:
        arr = by_name.get(entry["name"])
        if arr is None:
            raise ValueError(f"checkpoint parameter {entry['name']} not in net spec")
        if list(arr.shape) != entry["shape"]:
            raise ValueError(
                f"checkpoint shape {entry['shape']} != expected {list(arr.shape)} "
                f"for {entry['name']}"
            )
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        data = np.frombuffer(
            blob, dtype="<f8", count=count, offset=entry["offset"]
        ).reshape(entry["shape"])
        arr[...] = data
    return weights
