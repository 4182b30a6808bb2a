"""File formats: the ``SDKP1`` problem container, 16-bit PGM images and
history CSVs.

``SDKP1`` layout (all integers little-endian u64)::

    b"SDKP1"
    meta_len, meta bytes (UTF-8 ``key = value`` lines)
    n_arrays
    per array: name_len, name, ndim, dims..., f64 payload in column-major order
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SDKP1"
HISTORY_FIELDS = ("iter", "lambda", "alpha", "gcv", "res_proj", "relerr", "relerr_s1", "relerr_s2")


class FormatError(ValueError):
    pass


def _u64(x) -> bytes:
    return struct.pack("<Q", int(x))


def write_container(path, arrays: dict, meta: dict) -> None:
    parts = [MAGIC]
    text = "".join(f"{k} = {v}\n" for k, v in meta.items()).encode("utf-8")
    parts += [_u64(len(text)), text, _u64(len(arrays))]
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype="<f8")
        key = name.encode("utf-8")
        parts += [_u64(len(key)), key, _u64(a.ndim)] + [_u64(s) for s in a.shape]
        parts.append(a.tobytes(order="F"))
    Path(path).write_bytes(b"".join(parts))


def read_container(path):
    """Returns ``(arrays, meta)``; meta values are strings."""
    buf = Path(path).read_bytes()
    if buf[:5] != MAGIC:
        raise FormatError(f"{path}: not an SDKP1 container")
    pos = 5

    def u64():
        nonlocal pos
        if pos + 8 > len(buf):
            raise FormatError(f"{path}: truncated")
        (v,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        return v

    def take(nbytes):
        nonlocal pos
        if pos + nbytes > len(buf):
            raise FormatError(f"{path}: truncated")
        out = buf[pos : pos + nbytes]
        pos += nbytes
        return out

    meta = {}
    for line in take(u64()).decode("utf-8").splitlines():
        k, _, v = line.partition(" = ")
        meta[k] = v
    arrays = {}
    for _ in range(u64()):
        name = take(u64()).decode("utf-8")
        shape = tuple(u64() for _ in range(u64()))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(8 * count), dtype="<f8")
        arrays[name] = data.reshape(shape, order="F").astype(float)
    return arrays, meta


# --- images ----------------------------------------------------------------------


def write_pgm(path, img) -> tuple:
    """16-bit binary PGM with linear min-max scaling.

    The scaling ``(lo, hi)`` goes to ``<path>.scale``; returns it.
    """
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise ValueError("image must be 2-D")
    lo, hi = float(img.min()), float(img.max())
    span = hi - lo if hi > lo else 1.0
    q = np.rint((img - lo) / span * 65535.0).astype(">u2")
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n65535\n".encode("ascii") + q.tobytes())
    Path(str(path) + ".scale").write_text(f"min = {lo!r}\nmax = {hi!r}\n")
    return lo, hi


def read_pgm(path, rescale: bool = True) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos].decode("ascii"))
    if tokens[0] != "P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dtype = ">u2" if maxval > 255 else "u1"
    data = np.frombuffer(raw[pos + 1 :], dtype=dtype, count=w * h).reshape(h, w).astype(float)
    if not rescale:
        return data
    scale = dict(line.split(" = ") for line in Path(str(path) + ".scale").read_text().splitlines())
    lo, hi = float(scale["min"]), float(scale["max"])
    span = hi - lo if hi > lo else 1.0
    return lo + data / maxval * span


def field_to_image(s, grid_shape) -> np.ndarray:
    """2-D view of a field; frames of a sequence are tiled left to right."""
    s = np.asarray(s, dtype=float)
    if len(grid_shape) == 2:
        return s.reshape(grid_shape)
    if len(grid_shape) == 3:
        t, h, w = grid_shape
        return s.reshape(t, h, w).transpose(1, 0, 2).reshape(h, t * w)
    return s.reshape(1, -1)


# --- CSV ----------------------------------------------------------------------------


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# schema=1\r\n")
        wr = csv.writer(fh, lineterminator="\r\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])


def history_rows(history):
    for h in history:
        yield (h.k, h.lam, h.alpha, h.gcv, h.res_proj, h.relerr, h.relerr_s1, h.relerr_s2)


def read_csv(path):
    """Returns ``(header, rows)`` with rows as lists of strings."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != "# schema=1":
            raise FormatError(f"{path}: missing schema line")
        rd = csv.reader(fh)
        header = next(rd)
        return header, [row for row in rd]
