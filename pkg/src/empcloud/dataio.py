"""On-disk formats: a self-describing binary array container used for dataset
shards and checkpoints, and ASCII PLY export for point clouds.

Container layout: an 8-byte magic, a little-endian uint64 header length, a
JSON header listing named arrays (dtype, shape, byte order) plus free-form
metadata, then the raw array bytes in header order. Raw little-endian float64
bytes make round-trips bit-exact.
"""

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"EMPCBLOB"


def write_blob(path, arrays: dict, meta: dict | None = None):
    """Write named arrays plus JSON metadata; arrays are sorted by name so the
    byte stream is a pure function of the content."""
    names = sorted(arrays)
    entries = []
    payload = []
    for name in names:
        arr = np.ascontiguousarray(arrays[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)})
        payload.append(arr.tobytes())
    header = json.dumps({"meta": meta or {}, "arrays": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for chunk in payload:
            fh.write(chunk)


def read_blob(path):
    """Read a container; returns (arrays dict, meta dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a container file (bad magic)")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arrays = {}
        for entry in header["arrays"]:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * dtype.itemsize)
            arrays[entry["name"]] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
    return arrays, header["meta"]


def save_ply(path, points, rotor_mask=None):
    """ASCII PLY with properties x y z ep_re ep_im rotor.

    ``points`` is (M, 5); reconstructed clouds without labels get rotor = 0.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 5)
    m = points.shape[0]
    rotor = np.zeros(m, dtype=int) if rotor_mask is None else np.asarray(rotor_mask).astype(int)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {m}",
        "property double x",
        "property double y",
        "property double z",
        "property double ep_re",
        "property double ep_im",
        "property uchar rotor",
        "end_header",
    ]
    for i in range(m):
        vals = " ".join(format(v, ".17g") for v in points[i])
        lines.append(f"{vals} {rotor[i]}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_ply(path):
    """Read a PLY written by :func:`save_ply`; returns (points (M,5), rotor mask)."""
    text = Path(path).read_text().splitlines()
    try:
        start = text.index("end_header") + 1
    except ValueError as exc:
        raise ValueError(f"{path}: missing PLY header terminator") from exc
    n = int(next(line for line in text if line.startswith("element vertex")).split()[-1])
    rows = [line.split() for line in text[start : start + n]]
    pts = np.array([[float(v) for v in row[:5]] for row in rows])
    rotor = np.array([int(row[5]) for row in rows], dtype=bool)
    return pts, rotor
