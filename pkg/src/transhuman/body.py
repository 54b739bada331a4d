"""Articulated body template: forward kinematics, linear blend skinning and
per-vertex blended rotations, plus a capsule-based synthetic humanoid."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1

# SMPL-style 24-joint hierarchy; root has parent -1
JOINT_NAMES = (
    "pelvis", "l_hip", "r_hip", "spine1", "l_knee", "r_knee", "spine2", "l_ankle",
    "r_ankle", "spine3", "l_foot", "r_foot", "neck", "l_collar", "r_collar", "head",
    "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist", "l_hand", "r_hand",
)
JOINT_PARENTS = np.array(
    [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21], dtype=np.int64
)
# T-pose rest layout in meters for a 1.7 m body, pelvis at the origin, y up
REST_LAYOUT = np.array([
    [0.00, 0.00, 0.00], [0.09, -0.08, 0.00], [-0.09, -0.08, 0.00], [0.00, 0.10, 0.00],
    [0.09, -0.48, 0.00], [-0.09, -0.48, 0.00], [0.00, 0.22, 0.00], [0.09, -0.86, 0.00],
    [-0.09, -0.86, 0.00], [0.00, 0.34, 0.00], [0.09, -0.90, 0.10], [-0.09, -0.90, 0.10],
    [0.00, 0.50, 0.00], [0.07, 0.44, 0.00], [-0.07, 0.44, 0.00], [0.00, 0.68, 0.00],
    [0.18, 0.45, 0.00], [-0.18, 0.45, 0.00], [0.45, 0.45, 0.00], [-0.45, 0.45, 0.00],
    [0.70, 0.45, 0.00], [-0.70, 0.45, 0.00], [0.78, 0.45, 0.00], [-0.78, 0.45, 0.00],
])
# child that defines each joint's bone segment where the tree branches
_PRIMARY_CHILD = {0: 3, 9: 12}
# (start joint, end joint, radius in m): torso, head, arms x2, legs x2
CAPSULES = (
    (0, 9, 0.15), (12, 15, 0.10),
    (16, 18, 0.055), (18, 22, 0.045), (17, 19, 0.055), (19, 23, 0.045),
    (1, 4, 0.075), (4, 7, 0.055), (2, 5, 0.075), (5, 8, 0.055),
)


class BodyFormatError(ValueError):
    pass


class PoseError(ValueError):
    pass


@dataclass
class BodyModel:
    canonical_vertices: np.ndarray
    blend_weights: np.ndarray
    joint_parents: np.ndarray
    joint_rest_positions: np.ndarray
    faces: np.ndarray | None = None

    def __post_init__(self):
        self.canonical_vertices = np.asarray(self.canonical_vertices, dtype=np.float64).reshape(-1, 3)
        self.blend_weights = np.asarray(self.blend_weights, dtype=np.float64)
        self.joint_parents = np.asarray(self.joint_parents, dtype=np.int64)
        self.joint_rest_positions = np.asarray(self.joint_rest_positions, dtype=np.float64).reshape(-1, 3)
        if self.faces is not None:
            self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        validate_body(self)

    @property
    def n_vertices(self) -> int:
        return len(self.canonical_vertices)

    @property
    def n_joints(self) -> int:
        return len(self.joint_parents)

    @cached_property
    def bone_segments(self) -> tuple[np.ndarray, np.ndarray]:
        """Per joint: (start, end) of its bone; leaves get a zero-length segment."""
        return bone_segments(self.joint_parents, self.joint_rest_positions)

    @cached_property
    def canonical_normals(self) -> np.ndarray:
        if self.faces is not None and len(self.faces):
            return face_normals(self.canonical_vertices, self.faces)
        start, end = self.bone_segments
        _, closest = _segment_distances(self.canonical_vertices, start, end)
        radial = self.canonical_vertices - closest
        return radial / np.maximum(np.linalg.norm(radial, axis=1, keepdims=True), 1e-12)


@dataclass
class Pose:
    rotations: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(-1, 3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        check_rotations(self.rotations)

    @classmethod
    def identity(cls, n_joints: int = 24) -> "Pose":
        return cls(np.tile(np.eye(3), (n_joints, 1, 1)), np.zeros(3))

    def to_dict(self) -> dict:
        return {"rotations": self.rotations.reshape(-1).tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(np.asarray(d["rotations"]).reshape(-1, 3, 3), d["translation"])


@dataclass
class PosedBody:
    observation_vertices: np.ndarray
    per_vertex_rotations: np.ndarray
    joint_transforms: np.ndarray
    normals: np.ndarray

    @property
    def joint_positions(self) -> np.ndarray:
        return self.joint_transforms[:, :3, 3]


def check_rotations(rots: np.ndarray, tol: float = 1e-9) -> None:
    eye = np.eye(3)
    err = np.abs(np.einsum("nij,nkj->nik", rots, rots) - eye).max(axis=(1, 2))
    det = np.linalg.det(rots)
    bad = np.flatnonzero((err > tol) | (np.abs(det - 1.0) > tol))
    if len(bad):
        raise PoseError(f"pose entry {bad[0]} is not a rotation (orthonormality error {err[bad[0]]:.2e}, det {det[bad[0]]:.6f})")


def validate_body(model: BodyModel, weight_tol: float = 1e-9) -> None:
    n, j = model.n_vertices, len(model.joint_parents)
    if model.blend_weights.shape != (n, j):
        raise BodyFormatError(f"blend_weights shape {model.blend_weights.shape}, expected {(n, j)}")
    if model.joint_rest_positions.shape != (j, 3):
        raise BodyFormatError(f"joint_rest_positions shape {model.joint_rest_positions.shape}, expected {(j, 3)}")
    if not np.all(np.isfinite(model.canonical_vertices)) or not np.all(np.isfinite(model.blend_weights)):
        raise BodyFormatError("non-finite vertex or weight values")
    if (model.blend_weights < 0).any():
        raise BodyFormatError("negative blend weight")
    sums = model.blend_weights.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > weight_tol)
    if len(bad):
        raise BodyFormatError(f"blend-weight row {bad[0]} sums to {float(sums[bad[0]])!r}, expected 1")
    parents = model.joint_parents
    if j == 0 or parents[0] != -1:
        raise BodyFormatError("joint 0 must be the root (parent -1)")
    if any(not (0 <= parents[i] < i) for i in range(1, j)):
        raise BodyFormatError("joint parents must precede their children (tree rooted at joint 0)")
    if model.faces is not None and len(model.faces) and (model.faces.min() < 0 or model.faces.max() >= n):
        raise BodyFormatError("face index out of range")


def rigid(rot: np.ndarray, trans: np.ndarray) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = rot
    m[:3, 3] = trans
    return m


def forward_kinematics(parents: np.ndarray, rest: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    """Global (J, 4, 4) joint transforms; each joint rotates about its rest position."""
    g = np.empty((len(parents), 4, 4))
    g[0] = rigid(rotations[0], rest[0])
    for i in range(1, len(parents)):
        p = parents[i]
        g[i] = g[p] @ rigid(rotations[i], rest[i] - rest[p])
    return g


def pose_body(model: BodyModel, pose: Pose) -> PosedBody:
    if len(pose.rotations) != model.n_joints:
        raise PoseError(f"pose has {len(pose.rotations)} rotations, body has {model.n_joints} joints")
    g = forward_kinematics(model.joint_parents, model.joint_rest_positions, pose.rotations)
    # skinning transforms map rest-space points, so remove each joint's rest offset
    skin = g.copy()
    skin[:, :3, 3] -= np.einsum("jab,jb->ja", g[:, :3, :3], model.joint_rest_positions)
    w = model.blend_weights
    blended = np.einsum("vj,jab->vab", w, skin[:, :3, :])
    verts = np.einsum("vab,vb->va", blended[:, :, :3], model.canonical_vertices) + blended[:, :, 3]
    verts = verts + pose.translation
    rots = blended[:, :, :3].copy()
    normals = np.einsum("vab,vb->va", rots, model.canonical_normals)
    normals /= np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-12)
    g[:, :3, 3] += pose.translation
    return PosedBody(verts, rots, g, normals)


def apply_global_motion(model: BodyModel, pose: Pose, rot: np.ndarray, trans=np.zeros(3)) -> Pose:
    """Pose whose posed body is ``rot @ x + trans`` of the input pose's body."""
    rots = pose.rotations.copy()
    rots[0] = rot @ rots[0]
    root = model.joint_rest_positions[0]
    t = rot @ pose.translation + np.asarray(trans, dtype=np.float64) + rot @ root - root
    return Pose(rots, t)


def bone_segments(parents: np.ndarray, rest: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    start = rest.copy()
    end = rest.copy()
    for j in range(len(parents)):
        children = np.flatnonzero(parents == j)
        if len(children):
            end[j] = rest[_PRIMARY_CHILD.get(j, children[0])] if len(parents) == 24 else rest[children[0]]
    return start, end


def _segment_distances(points: np.ndarray, start: np.ndarray, end: np.ndarray):
    """Distances (P, S) to segments and the closest point on the nearest segment (P, 3)."""
    ab = end - start
    ab2 = (ab * ab).sum(axis=1)
    ap = points[:, None, :] - start[None]
    t = np.where(ab2 > 0, (ap * ab[None]).sum(-1) / np.where(ab2 > 0, ab2, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    proj = start[None] + t[..., None] * ab[None]
    d = np.linalg.norm(points[:, None, :] - proj, axis=-1)
    nearest = np.argmin(d, axis=1)
    return d, proj[np.arange(len(points)), nearest]


def face_normals(verts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    tri = verts[faces]
    fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    vn = np.zeros_like(verts)
    for k in range(3):
        np.add.at(vn, faces[:, k], fn)
    return vn / np.maximum(np.linalg.norm(vn, axis=1, keepdims=True), 1e-12)


# -- synthetic humanoid ------------------------------------------------------
@dataclass
class SyntheticBodyConfig:
    n_vertices: int = 1500
    height: float = 1.7
    sharpness: float = 0.02
    proportion_jitter: float = 0.0
    n_joints: int = 24


def synthetic_layout(cfg: SyntheticBodyConfig, rng: np.random.Generator | None = None):
    """Rest joints and capsule radii, with optional per-limb proportion jitter."""
    rest = REST_LAYOUT * (cfg.height / 1.7)
    radii = np.array([c[2] for c in CAPSULES]) * (cfg.height / 1.7)
    if rng is not None and cfg.proportion_jitter > 0:
        jit = cfg.proportion_jitter
        offsets = rest - rest[np.maximum(JOINT_PARENTS, 0)]
        scale = 1.0 + rng.uniform(-jit, jit, size=len(rest))
        # mirror left/right so the body stays symmetric
        for left in range(1, 24):
            name = JOINT_NAMES[left]
            if name.startswith("l_"):
                scale[JOINT_NAMES.index("r_" + name[2:])] = scale[left]
        rest = np.zeros_like(rest)
        for j in range(1, 24):
            rest[j] = rest[JOINT_PARENTS[j]] + offsets[j] * scale[j]
        rscale = 1.0 + rng.uniform(-jit, jit, size=len(radii))
        rscale[4:6] = rscale[2:4]
        rscale[8:10] = rscale[6:8]
        radii = radii * rscale
    return rest, radii


def capsule_endpoints(joints: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.array([joints[c[0]] for c in CAPSULES])
    b = np.array([joints[c[1]] for c in CAPSULES])
    return a, b


def _capsule_axis_dist(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d, _ = _segment_distances(points, a, b)
    return d


def sample_capsule_surface(a, b, r, n, rng):
    """Uniform samples on a capsule surface (cylinder plus two hemispheres)."""
    axis = b - a
    length = float(np.linalg.norm(axis))
    u = axis / length if length > 0 else np.array([0.0, 1.0, 0.0])
    helper = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    e1 = np.cross(u, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)
    cyl_area = 2 * np.pi * r * length
    sph_area = 4 * np.pi * r * r
    pick = rng.uniform(0, cyl_area + sph_area, size=n) < cyl_area
    out = np.empty((n, 3))
    nc = int(pick.sum())
    theta = rng.uniform(0, 2 * np.pi, size=nc)
    h = rng.uniform(0, length, size=nc)
    out[pick] = a + h[:, None] * u + r * (np.cos(theta)[:, None] * e1 + np.sin(theta)[:, None] * e2)
    ns = n - nc
    dirs = rng.normal(size=(ns, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    side = (dirs @ u) >= 0
    centers = np.where(side[:, None], b, a)
    out[~pick] = centers + r * dirs
    return out


def generate_synthetic_body(config: SyntheticBodyConfig | None = None, seed: int = 0) -> BodyModel:
    return synthesize_body(config, seed)[0]


def synthesize_body(config: SyntheticBodyConfig | None = None, seed: int = 0) -> tuple[BodyModel, np.ndarray]:
    """Synthetic body plus the capsule radii its surface was sampled from."""
    cfg = config or SyntheticBodyConfig()
    if cfg.n_joints != 24:
        raise ValueError("the synthetic humanoid layout has 24 joints")
    if cfg.n_vertices < 4 * cfg.n_joints:
        raise ValueError(f"n_vertices={cfg.n_vertices} < 4*J={4 * cfg.n_joints}; too sparse to cluster")
    rng = np.random.default_rng(seed)
    rest, radii = synthetic_layout(cfg, rng)
    ca, cb = capsule_endpoints(rest)
    lengths = np.linalg.norm(cb - ca, axis=1)
    areas = 2 * np.pi * radii * lengths + 4 * np.pi * radii**2
    verts = []
    have = 0
    while have < cfg.n_vertices:
        counts = rng.multinomial(cfg.n_vertices, areas / areas.sum())
        for c, k in enumerate(counts):
            if k == 0:
                continue
            pts = sample_capsule_surface(ca[c], cb[c], radii[c], int(k), rng)
            d = _capsule_axis_dist(pts, ca, cb)
            inside_other = (d < radii[None] - 1e-6)
            inside_other[:, c] = False
            verts.append(pts[~inside_other.any(axis=1)])
        have = sum(len(v) for v in verts)
    v = np.concatenate(verts)
    v = v[np.sort(rng.choice(len(v), size=cfg.n_vertices, replace=False))]
    weights = blend_weights_from_bones(v, JOINT_PARENTS, rest, cfg.sharpness)
    return BodyModel(v, weights, JOINT_PARENTS.copy(), rest), radii


def blend_weights_from_bones(verts, parents, rest, sharpness: float) -> np.ndarray:
    """Softmax of negative distance over each vertex's two nearest bones."""
    start, end = bone_segments(parents, rest)
    d, _ = _segment_distances(verts, start, end)
    two = np.argsort(d, axis=1, kind="stable")[:, :2]
    dd = np.take_along_axis(d, two, axis=1)
    logits = -(dd - dd[:, :1]) / sharpness
    e = np.exp(logits)
    e /= e.sum(axis=1, keepdims=True)
    w = np.zeros((len(verts), len(parents)))
    np.put_along_axis(w, two, e, axis=1)
    return w


# -- persistence -------------------------------------------------------------
def _floats(a) -> str:
    return "[" + ",".join(format(float(x), ".17g") for x in np.asarray(a).reshape(-1)) + "]"


def _ints(a) -> str:
    return "[" + ",".join(str(int(x)) for x in np.asarray(a).reshape(-1)) + "]"


def save_body(model: BodyModel, path) -> None:
    parts = [
        f'"format_version": {FORMAT_VERSION}',
        f'"n_vertices": {model.n_vertices}',
        f'"n_joints": {model.n_joints}',
        f'"vertices": {_floats(model.canonical_vertices)}',
        f'"blend_weights": {_floats(model.blend_weights)}',
        f'"joint_parents": {_ints(model.joint_parents)}',
        f'"joint_rest_positions": {_floats(model.joint_rest_positions)}',
    ]
    if model.faces is not None:
        parts.append(f'"faces": {_ints(model.faces)}')
    Path(path).write_text("{\n" + ",\n".join(parts) + "\n}\n", encoding="utf-8")


def load_body(path) -> BodyModel:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BodyFormatError(f"{path}: malformed body file at line {exc.lineno} column {exc.colno} (char {exc.pos}): {exc.msg}") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise BodyFormatError(f"{path}: unsupported format_version {doc.get('format_version')!r}")
    try:
        n, j = int(doc["n_vertices"]), int(doc["n_joints"])
        verts = np.asarray(doc["vertices"], dtype=np.float64)
        weights = np.asarray(doc["blend_weights"], dtype=np.float64)
        parents = np.asarray(doc["joint_parents"], dtype=np.int64)
        rest = np.asarray(doc["joint_rest_positions"], dtype=np.float64)
        faces = np.asarray(doc["faces"], dtype=np.int64) if doc.get("faces") is not None else None
    except (KeyError, TypeError, ValueError) as exc:
        raise BodyFormatError(f"{path}: malformed body file: {exc}") from None
    for name, arr, size in (("vertices", verts, 3 * n), ("blend_weights", weights, n * j),
                            ("joint_parents", parents, j), ("joint_rest_positions", rest, 3 * j)):
        if arr.ndim != 1 or arr.size != size:
            raise BodyFormatError(f"{path}: {name} has {arr.size} entries, expected {size}")
    if faces is not None and faces.size % 3:
        raise BodyFormatError(f"{path}: faces length {faces.size} is not a multiple of 3")
    return BodyModel(verts.reshape(n, 3), weights.reshape(n, j), parents, rest.reshape(j, 3), faces)


def save_pose(pose: Pose, path) -> None:
    Path(path).write_text(json.dumps(pose.to_dict()) + "\n", encoding="utf-8")


def load_pose(path) -> Pose:
    return Pose.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def axis_angle(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
