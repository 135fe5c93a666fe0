"""Bit-exact named-tensor checkpoint files.

Layout: a text header (`graphood-tensors 1`, one `name dim0 dim1 ...` line
per tensor, then a blank line) followed by the raw little-endian float64
bytes of each tensor in header order. Writing the same tensors always
produces the same bytes.
"""

from __future__ import annotations

import numpy as np

from .errors import ParseError

_MAGIC = b"graphood-tensors 1\n"


def save_tensors(tensors, path):
    """Write an ordered {name: array} mapping; names must be space-free."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        for name, arr in tensors.items():
            if " " in name or "\n" in name:
                raise ValueError(f"invalid tensor name {name!r}")
            dims = " ".join(str(d) for d in np.asarray(arr).shape)
            fh.write(f"{name} {dims}".rstrip().encode("ascii") + b"\n")
        fh.write(b"\n")
        for arr in tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_tensors(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(_MAGIC):
        raise ParseError(f"not a graphood tensor file: {path}")
    head_end = blob.index(b"\n\n", len(_MAGIC) - 1)
    header = blob[len(_MAGIC):head_end].decode("ascii").splitlines()
    offset = head_end + 2
    out = {}
    for line in header:
        parts = line.split(" ")
        name = parts[0]
        shape = tuple(int(p) for p in parts[1:])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        raw = blob[offset:offset + nbytes]
        if len(raw) != nbytes:
            raise ParseError(f"truncated tensor data for {name!r}")
        out[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(blob):
        raise ParseError("trailing bytes after tensor data")
    return out
