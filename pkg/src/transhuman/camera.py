"""Pinhole cameras, projection, ray generation and sub-pixel sampling.

Pixel (i, j) covers [i, i+1) x [j, j+1); its center is (i + 0.5, j + 0.5).
Grid samplers index values at pixel centers, so a continuous image
coordinate x maps to grid coordinate ``x / factor - 0.5``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffcore.functional import bilinear_sample as _bilinear


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.width, self.height = int(self.width), int(self.height)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        r = self.rotation
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("camera rotation must be orthonormal with det +1")

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    def scaled(self, factor: float) -> "Camera":
        """Same camera at a resized image resolution."""
        return Camera(self.fx * factor, self.fy * factor, self.cx * factor, self.cy * factor,
                      self.rotation, self.translation, round(self.width * factor), round(self.height * factor))

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "rotation": self.rotation.reshape(-1).tolist(), "translation": self.translation.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   d["rotation"], d["translation"], d["width"], d["height"])


def save_camera(cam: Camera, path) -> None:
    Path(path).write_text(json.dumps(cam.to_dict()) + "\n", encoding="utf-8")


def load_camera(path) -> Camera:
    return Camera.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def look_at(eye, target, up, fx, fy, width, height) -> Camera:
    """Camera at ``eye`` looking at ``target``; image y points down."""
    eye, target, up = (np.asarray(v, dtype=np.float64) for v in (eye, target, up))
    z = target - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    rot = np.stack([x, y, z])
    return Camera(fx, fy, width / 2.0, height / 2.0, rot, -rot @ eye, width, height)


def project(cam: Camera, points) -> tuple[np.ndarray, np.ndarray]:
    """World points (..., 3) -> continuous pixel coordinates (..., 2) and camera depth.

    Points with depth <= 0 are behind the camera; their pixel values are
    not meaningful and callers must check the depth.
    """
    pts = np.asarray(points, dtype=np.float64)
    pc = pts @ cam.rotation.T + cam.translation
    z = pc[..., 2]
    safe = np.where(np.abs(z) > 1e-12, z, 1e-12)
    u = cam.fx * pc[..., 0] / safe + cam.cx
    v = cam.fy * pc[..., 1] / safe + cam.cy
    return np.stack([u, v], axis=-1), z


def in_image(cam: Camera, pix: np.ndarray, depth: np.ndarray) -> np.ndarray:
    return (depth > 0) & (pix[..., 0] >= 0) & (pix[..., 0] < cam.width) & (pix[..., 1] >= 0) & (pix[..., 1] < cam.height)


def pixel_grid(cam: Camera) -> np.ndarray:
    """All (i, j) integer pixel indices, row-major, shape (H*W, 2)."""
    j, i = np.meshgrid(np.arange(cam.height), np.arange(cam.width), indexing="ij")
    return np.stack([i.reshape(-1), j.reshape(-1)], axis=1)


def generate_rays(cam: Camera, pixels) -> tuple[np.ndarray, np.ndarray]:
    """Origins and unit directions of rays through the centers of integer pixels (N, 2)."""
    pix = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    if len(pix) and ((pix < 0).any() or (pix[:, 0] >= cam.width).any() or (pix[:, 1] >= cam.height).any()):
        raise ValueError("pixels must lie inside the image")
    xc = (pix[:, 0] + 0.5 - cam.cx) / cam.fx
    yc = (pix[:, 1] + 0.5 - cam.cy) / cam.fy
    d_cam = np.stack([xc, yc, np.ones_like(xc)], axis=1)
    d = d_cam @ cam.rotation
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.broadcast_to(cam.center, d.shape).copy()
    return o, d


def bilinear_sample(featmap, pixel_xy):
    """Bilinear lookup of an (H, W, C) map at grid coordinates, border clamped."""
    return _bilinear(featmap, pixel_xy)


def image_to_grid(pix: np.ndarray, factor: float = 1.0) -> np.ndarray:
    """Continuous pixel coordinates -> grid coordinates of a map downsampled by ``factor``."""
    return np.asarray(pix, dtype=np.float64) / factor - 0.5


def ray_box(origins: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Slab intersection; returns (near, far, hit) with near clamped to >= 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    tmin = np.nanmax(np.minimum(t0, t1), axis=1)
    tmax = np.nanmin(np.maximum(t0, t1), axis=1)
    near = np.maximum(tmin, 0.0)
    hit = tmax > near
    return near, tmax, hit
