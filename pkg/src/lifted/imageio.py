"""Portable float map (PFM) and binary PPM readers/writers.

Arrays are (H, W) or (H, W, 3) with row 0 at the top; PFM stores rows bottom-up,
so rows are flipped on the way in and out.
"""

from __future__ import annotations

import numpy as np


def write_pfm(path, image) -> None:
    img = np.asarray(image, dtype="<f4")
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim == 2:
        header = "Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        header = "PF"
    else:
        raise ValueError(f"PFM holds 1 or 3 channels, got shape {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"{header}\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img[::-1]).tobytes())


def _token(fh) -> bytes:
    tok = b""
    while True:
        ch = fh.read(1)
        if not ch:
            return tok
        if ch.isspace():
            if tok:
                return tok
            continue
        tok += ch


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        kind = _token(fh)
        if kind not in (b"PF", b"Pf"):
            raise ValueError(f"{path}: not a PFM file (header {kind!r})")
        try:
            w, h = int(_token(fh)), int(_token(fh))
            scale = float(_token(fh))
        except ValueError:
            raise ValueError(f"{path}: malformed PFM header") from None
        channels = 3 if kind == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(), dtype=dtype)
    if data.size != w * h * channels:
        raise ValueError(f"{path}: expected {w * h * channels} floats, found {data.size}")
    shape = (h, w, 3) if channels == 3 else (h, w)
    return data.reshape(shape)[::-1].astype(np.float64)


def write_ppm(path, image) -> None:
    """Write an (H, W, 3) image with values in [0, 1] as 8-bit binary PPM (P6)."""
    img = np.asarray(image, dtype=float)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"PPM needs (H, W, 3), got {img.shape}")
    h, w = img.shape[:2]
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if _token(fh) != b"P6":
            raise ValueError(f"{path}: not a binary PPM")
        w, h, maxval = int(_token(fh)), int(_token(fh)), int(_token(fh))
        data = np.frombuffer(fh.read(), dtype=np.uint8)
    return data.reshape(h, w, 3).astype(float) / maxval
