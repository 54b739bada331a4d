"""Synthetic multi-view human scenes.

Bodies are capsule humanoids posed along smooth joint-angle trajectories
and photographed by a ring of cameras. Ground-truth images come from an
analytic ray-caster against the posed capsules (Lambertian shading, one
fixed light), independent of the learned renderer.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import _kernels
from .body import (
    CAPSULES, BodyModel, Pose, PosedBody, SyntheticBodyConfig, axis_angle, load_body, load_pose,
    pose_body, save_body, save_pose, synthesize_body,
)
from .camera import Camera, generate_rays, load_camera, look_at, pixel_grid, save_camera
from .imageio import read_ppm, write_ppm

MANIFEST = "manifest.json"
LIGHT_DIR = np.array([0.3, 0.8, 0.5]) / np.linalg.norm([0.3, 0.8, 0.5])


@dataclass
class DataConfig:
    subjects: int = 1
    frames: int = 4
    cameras: int = 6
    image_size: int = 128
    n_vertices: int = 1500
    test_cameras: list[int] = field(default_factory=lambda: [5])
    camera_radius: float = 3.0
    camera_height: float = 0.3
    focal_scale: float = 1.45
    proportion_jitter: float = 0.08
    motion: float = 1.0


@dataclass
class Appearance:
    radii: np.ndarray          # (n_capsules,)
    colors: np.ndarray         # (n_capsules, 3)
    stripe_freq: np.ndarray    # cycles per meter along each capsule axis
    stripe_amp: float = 0.35

    def to_dict(self) -> dict:
        return {"radii": self.radii.tolist(), "colors": self.colors.tolist(),
                "stripe_freq": self.stripe_freq.tolist(), "stripe_amp": self.stripe_amp}

    @classmethod
    def from_dict(cls, d: dict) -> "Appearance":
        return cls(np.asarray(d["radii"]), np.asarray(d["colors"]), np.asarray(d["stripe_freq"]), float(d["stripe_amp"]))


def random_appearance(radii: np.ndarray, rng: np.random.Generator) -> Appearance:
    n = len(radii)
    return Appearance(np.asarray(radii, dtype=np.float64), rng.uniform(0.25, 0.95, size=(n, 3)),
                      rng.uniform(3.0, 8.0, size=n))


def pose_sequence(n_frames: int, rng: np.random.Generator, amplitude: float = 1.0) -> list[Pose]:
    """Smooth periodic joint-angle trajectories (root yaw, arms, legs, spine)."""
    phase0 = rng.uniform(0, 2 * np.pi)
    yaw0 = rng.uniform(-np.pi, np.pi)
    poses = []
    x, y, z = np.eye(3)
    for f in range(n_frames):
        ph = phase0 + 2 * np.pi * f / max(n_frames, 1)
        a = amplitude
        rots = np.tile(np.eye(3), (24, 1, 1))
        rots[0] = axis_angle(y, yaw0 + 0.4 * a * np.sin(ph))
        rots[6] = axis_angle(x, 0.1 * a * np.sin(ph))
        rots[16] = axis_angle(z, -(0.5 + 0.35 * np.sin(ph)) * a)
        rots[17] = axis_angle(z, (0.5 + 0.35 * np.sin(ph + 0.7)) * a)
        rots[18] = axis_angle(y, (0.5 + 0.4 * np.sin(ph + 1.0)) * a)
        rots[19] = axis_angle(y, -(0.5 + 0.4 * np.sin(ph + 1.7)) * a)
        rots[1] = axis_angle(x, -0.35 * a * np.sin(ph))
        rots[2] = axis_angle(x, 0.35 * a * np.sin(ph))
        rots[4] = axis_angle(x, 0.3 * a * (1 + np.sin(ph + 0.5)))
        rots[5] = axis_angle(x, 0.3 * a * (1 - np.sin(ph + 0.5)))
        poses.append(Pose(rots, np.zeros(3)))
    return poses


def camera_ring(cfg: DataConfig) -> list[Camera]:
    w = cfg.image_size
    f = cfg.focal_scale * w
    cams = []
    for k in range(cfg.cameras):
        ang = 2 * np.pi * k / cfg.cameras
        eye = [cfg.camera_radius * np.sin(ang), cfg.camera_height, cfg.camera_radius * np.cos(ang)]
        cams.append(look_at(eye, [0.0, -0.05, 0.0], [0.0, 1.0, 0.0], f, f, w, w))
    return cams


def capsules_posed(posed: PosedBody) -> tuple[np.ndarray, np.ndarray]:
    joints = posed.joint_positions
    return np.array([joints[c[0]] for c in CAPSULES]), np.array([joints[c[1]] for c in CAPSULES])


def render_ground_truth(posed: PosedBody, appearance: Appearance, cam: Camera) -> np.ndarray:
    """Analytic capsule ray-cast with Lambertian shading; black background."""
    origins, dirs = generate_rays(cam, pixel_grid(cam))
    a, b = capsules_posed(posed)
    t, cid = _kernels.ray_capsules_np(origins, dirs, a, b, appearance.radii)
    img = np.zeros((len(origins), 3))
    hit = np.flatnonzero(cid >= 0)
    if len(hit):
        x = origins[hit] + t[hit, None] * dirs[hit]
        c = cid[hit]
        ab = b[c] - a[c]
        ab2 = np.maximum((ab * ab).sum(axis=1), 1e-18)
        s = np.clip(((x - a[c]) * ab).sum(axis=1) / ab2, 0.0, 1.0)
        q = a[c] + s[:, None] * ab
        n = (x - q) / appearance.radii[c][:, None]
        n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)
        axial = s * np.sqrt(ab2)
        amp = appearance.stripe_amp
        stripe = 1.0 - amp + amp * (0.5 + 0.5 * np.sin(2 * np.pi * appearance.stripe_freq[c] * axial))
        shade = 0.3 + 0.7 * np.maximum(0.0, n @ LIGHT_DIR)
        img[hit] = appearance.colors[c] * (stripe * shade)[:, None]
    return np.clip(img, 0.0, 1.0).reshape(cam.height, cam.width, 3)


# -- on-disk dataset -----------------------------------------------------------
def gen_data(out_dir, cfg: DataConfig | None = None, seed: int = 0) -> Path:
    cfg = cfg or DataConfig()
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        raise FileExistsError(f"output directory {out} is not empty")
    if any(not 0 <= c < cfg.cameras for c in cfg.test_cameras):
        raise ValueError("test camera index out of range")
    out.mkdir(parents=True, exist_ok=True)
    root = np.random.default_rng(seed)
    cams = camera_ring(cfg)
    subjects = []
    for s in range(cfg.subjects):
        sseed = int(root.integers(2**31))
        srng = np.random.default_rng(sseed)
        body, radii = synthesize_body(SyntheticBodyConfig(cfg.n_vertices, proportion_jitter=cfg.proportion_jitter), sseed)
        app = random_appearance(radii, srng)
        sdir = out / f"subject_{s}"
        sdir.mkdir()
        save_body(body, sdir / "body.json")
        (sdir / "appearance.json").write_text(json.dumps(app.to_dict()) + "\n", encoding="utf-8")
        frames = []
        for fi, pose in enumerate(pose_sequence(cfg.frames, srng, cfg.motion)):
            fdir = sdir / f"frame_{fi}"
            fdir.mkdir()
            save_pose(pose, fdir / "pose.json")
            posed = pose_body(body, pose)
            views = []
            for k, cam in enumerate(cams):
                save_camera(cam, fdir / f"cam_{k}.camera")
                write_ppm(fdir / f"cam_{k}.ppm", render_ground_truth(posed, app, cam))
                views.append({"camera": f"subject_{s}/frame_{fi}/cam_{k}.camera",
                              "image": f"subject_{s}/frame_{fi}/cam_{k}.ppm"})
            frames.append({"pose": f"subject_{s}/frame_{fi}/pose.json", "views": views})
        subjects.append({"name": f"subject_{s}", "seed": sseed, "body": f"subject_{s}/body.json",
                         "appearance": f"subject_{s}/appearance.json", "frames": frames})
    train = [k for k in range(cfg.cameras) if k not in cfg.test_cameras]
    manifest = {
        "format_version": 1, "root_seed": seed, "config": asdict(cfg),
        "image_size": [cfg.image_size, cfg.image_size],
        "split": {"train_cameras": train, "test_cameras": list(cfg.test_cameras)},
        "subjects": subjects,
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return out


class Frame:
    def __init__(self, root: Path, entry: dict, body: BodyModel):
        self.root = root
        self.entry = entry
        self.body = body
        self.pose = load_pose(root / entry["pose"])
        self.cams = [load_camera(root / v["camera"]) for v in entry["views"]]
        self._images: dict[int, np.ndarray] = {}

    @cached_property
    def posed(self) -> PosedBody:
        return pose_body(self.body, self.pose)

    def image(self, k: int) -> np.ndarray:
        if k not in self._images:
            self._images[k] = read_ppm(self.root / self.entry["views"][k]["image"])
        return self._images[k]


class Subject:
    def __init__(self, root: Path, entry: dict):
        self.name = entry["name"]
        self.seed = entry.get("seed", 0)
        self.body_path = root / entry["body"]
        self.body = load_body(self.body_path)
        self.appearance = Appearance.from_dict(json.loads((root / entry["appearance"]).read_text()))
        self.frames = [Frame(root, f, self.body) for f in entry["frames"]]


class Dataset:
    def __init__(self, path):
        self.root = Path(path)
        manifest_path = self.root / MANIFEST
        if not manifest_path.exists():
            raise FileNotFoundError(f"{manifest_path} not found")
        self.manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        self.subjects = [Subject(self.root, s) for s in self.manifest["subjects"]]
        self.train_cameras = list(self.manifest["split"]["train_cameras"])
        self.test_cameras = list(self.manifest["split"]["test_cameras"])
        self.validate()

    def validate(self) -> None:
        for s in self.manifest["subjects"]:
            paths = [s["body"], s["appearance"]]
            for f in s["frames"]:
                paths.append(f["pose"])
                for v in f["views"]:
                    paths += [v["camera"], v["image"]]
            missing = [p for p in paths if not (self.root / p).exists()]
            if missing:
                raise FileNotFoundError(f"manifest references missing file {missing[0]}")
        if set(self.train_cameras) & set(self.test_cameras):
            raise ValueError("train and test cameras overlap")

    @property
    def n_cameras(self) -> int:
        return len(self.subjects[0].frames[0].cams)
