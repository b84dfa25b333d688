"""Readers and writers for the interchange formats.

* PGM (P5) / PPM (P6): 8-bit images mapped linearly to [0, 1]
* PFM: little-endian float32 grids (1 or 3 channels), bottom row first
* ``.flo``: Middlebury optical flow
* pose text: one row-major ``3x4 [R | t]`` matrix per line
"""

import re

import numpy as np

from .errors import FormatError

FLO_MAGIC = 202021.25


def _read_bytes(path):
    with open(path, "rb") as f:
        return f.read()


def _netpbm_header(buf):
    # magic, width, height, maxval separated by whitespace, comments allowed
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*([^\s#]+)").match(buf, pos)
        if m is None:
            raise FormatError("truncated PNM header")
        tokens.append(m.group(2))
        pos = m.end()
    return tokens, pos + 1


def read_pnm(path):
    """Read a binary PGM/PPM into a float ``(H, W, C)`` array in [0, 1]."""
    buf = _read_bytes(path)
    (magic, w, h, maxval), start = _netpbm_header(buf)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported PNM type {magic!r}")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PNM is supported")
    c = 1 if magic == b"P5" else 3
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h * c, offset=start)
    if data.size != w * h * c:
        raise FormatError(f"{path}: truncated pixel data")
    return data.reshape(h, w, c).astype(np.float64) / 255.0


def write_pnm(path, image):
    """Write an ``(H, W)``/``(H, W, 1)`` image as PGM or ``(H, W, 3)`` as PPM."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, c = img.shape
    if c not in (1, 3):
        raise ValueError("PNM images need 1 or 3 channels")
    q = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"{'P5' if c == 1 else 'P6'}\n{w} {h}\n255\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(q.tobytes())


def read_pfm(path):
    """Read a PFM file; returns ``(H, W)`` for ``Pf`` and ``(H, W, 3)`` for ``PF``."""
    buf = _read_bytes(path)
    lines = buf.split(b"\n", 3)
    if len(lines) < 4 or lines[0] not in (b"PF", b"Pf"):
        raise FormatError(f"{path}: not a PFM file")
    try:
        w, h = (int(v) for v in lines[1].split())
        scale = float(lines[2])
    except ValueError as exc:
        raise FormatError(f"{path}: bad PFM header") from exc
    c = 3 if lines[0] == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(lines[3], dtype=dtype)
    if data.size != w * h * c:
        raise FormatError(f"{path}: expected {w * h * c} floats, got {data.size}")
    arr = data.reshape(h, w, c)[::-1].astype(np.float64)
    return arr[:, :, 0] if c == 1 else arr


def write_pfm(path, grid):
    """Write a grid as little-endian PFM (scale -1.0)."""
    arr = np.asarray(grid, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim == 2:
        tag = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError("PFM stores HxW or HxWx3 grids")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(tag + f"\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(arr[::-1]).astype("<f4").tobytes())


def read_flo(path):
    """Read a Middlebury ``.flo`` file into an ``(H, W, 2)`` float64 array."""
    buf = _read_bytes(path)
    if len(buf) < 12:
        raise FormatError(f"{path}: truncated .flo header")
    magic = np.frombuffer(buf, "<f4", count=1)[0]
    if magic != np.float32(FLO_MAGIC):
        raise FormatError(f"{path}: bad .flo magic {magic}")
    w, h = (int(v) for v in np.frombuffer(buf, "<i4", count=2, offset=4))
    if w <= 0 or h <= 0:
        raise FormatError(f"{path}: bad .flo size {w}x{h}")
    data = np.frombuffer(buf, "<f4", offset=12)
    if data.size != 2 * w * h:
        raise FormatError(f"{path}: expected {2 * w * h} floats, got {data.size}")
    return data.reshape(h, w, 2).astype(np.float64)


def write_flo(path, flow):
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError("flow must be HxWx2")
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(np.array([FLO_MAGIC], "<f4").tobytes())
        f.write(np.array([w, h], "<i4").tobytes())
        f.write(np.ascontiguousarray(flow).astype("<f4").tobytes())


def read_poses(path):
    """Read pose text into an ``(N, 3, 4)`` array."""
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            try:
                vals = [float(v) for v in line.split()]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: non-numeric pose entry") from exc
            if len(vals) != 12:
                raise FormatError(f"{path}:{lineno}: expected 12 numbers, got {len(vals)}")
            rows.append(vals)
    return np.array(rows, dtype=np.float64).reshape(-1, 3, 4)


def write_poses(path, mats):
    """Write ``(N, 3, 4)`` matrices with round-trip float precision."""
    with open(path, "w") as f:
        for m in np.asarray(mats, dtype=np.float64).reshape(-1, 12):
            f.write(" ".join(repr(float(v)) for v in m) + "\n")


def write_csv(path, header, rows):
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def read_image(path):
    """Read a frame from PGM/PPM, or PFM when lossless values are needed."""
    path = str(path)
    if path.endswith(".pfm"):
        arr = read_pfm(path)
        return arr[:, :, None] if arr.ndim == 2 else arr
    return read_pnm(path)
