"""Binary PPM images and raw float32 auxiliary maps."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def write_ppm(path, image: np.ndarray) -> None:
    """(H, W, 3) floats in [0, 1] -> 8-bit P6."""
    img = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM supported")
    pixels = np.frombuffer(data[pos + 1 : pos + 1 + w * h * 3], dtype=np.uint8)
    if pixels.size != w * h * 3:
        raise ValueError(f"{path}: truncated pixel data")
    return pixels.reshape(h, w, 3).astype(np.float64) / 255.0


def write_float_map(path, values: np.ndarray) -> None:
    """One text header line ``width height channels`` then little-endian float32 data."""
    arr = np.asarray(values, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[..., None]
    h, w, c = arr.shape
    Path(path).write_bytes(f"{w} {h} {c}\n".encode("ascii") + arr.tobytes())


def read_float_map(path) -> np.ndarray:
    data = Path(path).read_bytes()
    nl = data.index(b"\n")
    w, h, c = (int(t) for t in data[:nl].split())
    return np.frombuffer(data[nl + 1 :], dtype="<f4").reshape(h, w, c).astype(np.float64)
