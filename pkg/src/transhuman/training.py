"""Losses, metrics, patch sampling and the training loop."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import grouping as grp
from .camera import generate_rays
from .config import RunConfig
from .data import Dataset, Frame, Subject
from .diffcore import tensor as T
from .diffcore.checkpoint import load_checkpoint, save_checkpoint
from .diffcore.nn import FrozenConvStack
from .diffcore.optim import adam_step
from .model import SceneEncoding, TransHumanModel, build_grouping
from .renderer import EvalCounter

PSNR_CAP = 99.0
_PERCEPTUAL = None


# -- patches ---------------------------------------------------------------------
def sample_patches(extent: tuple[int, int], G: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """(n, G*G, 2) pixel indices (i, j) of axis-aligned patches inside a (width, height) image."""
    w, h = extent
    if G < 1 or G > min(w, h):
        raise ValueError(f"patch size {G} does not fit a {w}x{h} image")
    i0 = rng.integers(0, w - G + 1, size=n)
    j0 = rng.integers(0, h - G + 1, size=n)
    jj, ii = np.meshgrid(np.arange(G), np.arange(G), indexing="ij")
    return np.stack([i0[:, None] + ii.reshape(-1), j0[:, None] + jj.reshape(-1)], axis=-1)


# -- losses ------------------------------------------------------------------------
def mse_loss(rendered, truth):
    r, t = T.as_tensor(rendered), T.as_tensor(truth)
    if r.data.size != t.data.size:
        raise ValueError("mse_loss: pixel counts differ")
    d = T.sub(r, T.reshape(t, r.shape))
    return T.mean(T.mul(d, d))


def perceptual_net() -> FrozenConvStack:
    global _PERCEPTUAL
    if _PERCEPTUAL is None:
        _PERCEPTUAL = FrozenConvStack()
    return _PERCEPTUAL


def perceptual_proxy_loss(rendered_patch, truth_patch):
    """Mean squared feature difference under the frozen conv stack, averaged over its layers.

    Patches are (G, G, 3) or (n, G, G, 3).
    """
    r, t = T.as_tensor(rendered_patch), T.as_tensor(truth_patch)
    if r.ndim == 3:
        r, t = T.reshape(r, (1,) + r.shape), T.reshape(t, (1,) + t.shape)
    if r.shape[1] != r.shape[2] or r.shape != t.shape:
        raise ValueError("perceptual_proxy_loss: patches must be square and equally shaped")
    net = perceptual_net()
    fr = net(T.transpose(r, (0, 3, 1, 2)))
    if t.requires_grad:
        ft = net(T.transpose(t, (0, 3, 1, 2)))
    else:
        with T.no_grad():
            ft = net(np.ascontiguousarray(t.data.transpose(0, 3, 1, 2)))
    total = None
    for a, b in zip(fr, ft):
        d = T.sub(a, b)
        term = T.mean(T.mul(d, d))
        total = term if total is None else T.add(total, term)
    return T.mul(total, 1.0 / len(fr))


def total_loss(rendered, truth, lam: float = 0.1, patch_size: int | None = None):
    """L_MSE + lam * L_PER. Pixels are (n*G*G, 3) in patch order when lam > 0."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    l_mse = mse_loss(rendered, truth)
    if lam == 0:
        return l_mse, {"mse": float(l_mse.data), "per": 0.0}
    r, t = T.as_tensor(rendered), T.as_tensor(truth)
    G = patch_size or int(round(np.sqrt(r.data.size // 3)))
    shape = (-1, G, G, 3)
    if r.data.size % (G * G * 3):
        raise ValueError("total_loss: perceptual term needs whole patches")
    l_per = perceptual_proxy_loss(T.reshape(r, shape), T.reshape(t, shape))
    loss = T.add(l_mse, T.mul(l_per, lam))
    return loss, {"mse": float(l_mse.data), "per": float(l_per.data)}


# -- metrics -----------------------------------------------------------------------
def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def ssim(a: np.ndarray, b: np.ndarray, sigma: float = 1.5, data_range: float = 1.0) -> float:
    """Gaussian-window SSIM (11x11 taps, sigma 1.5), mean over valid pixels and channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    pad = 5
    kw = dict(sigma=sigma, truncate=pad / sigma, mode="constant")
    scores = []
    for ch in range(a.shape[-1]):
        x, y = a[..., ch], b[..., ch]
        f = lambda z: gaussian_filter(z, **kw)[pad:-pad, pad:-pad]  # noqa: E731
        mx, my = f(x), f(y)
        sxx = f(x * x) - mx * mx
        syy = f(y * y) - my * my
        sxy = f(x * y) - mx * my
        s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
        scores.append(s.mean())
    return float(np.mean(scores))


def evaluate(renders, truths) -> dict:
    p = [psnr(r, t) for r, t in zip(renders, truths)]
    s = [ssim(r, t) for r, t in zip(renders, truths)]
    return {"psnr": float(np.mean(p)), "ssim": float(np.mean(s)),
            "mse": float(np.mean([np.mean((r - t) ** 2) for r, t in zip(renders, truths)]))}


# -- training ----------------------------------------------------------------------
@dataclass
class TrainState:
    model: TransHumanModel
    step: int = 0
    seed: int = 0
    best: dict = field(default_factory=dict)
    history: list = field(default_factory=list)


def grouping_cache_path(subject: Subject, cfg: RunConfig, n_tokens: int) -> Path:
    method = cfg.grouping.split("-")[1]
    return subject.body_path.parent / f"grouping_{method}_{n_tokens}_{cfg.grouping_seed}.json"


class Trainer:
    def __init__(self, dataset: Dataset | str | Path, cfg: RunConfig | None = None,
                 run_dir: str | Path | None = None, log: bool = True):
        self.cfg = cfg or RunConfig()
        self.data = dataset if isinstance(dataset, Dataset) else Dataset(dataset)
        self.run_dir = Path(run_dir or self.cfg.run_dir)
        self.log_enabled = log
        self._check_dataset()
        self.state = TrainState(TransHumanModel(self.cfg.network, self.cfg.model_options(), self.cfg.seed),
                                seed=self.cfg.seed)
        self.settings = self.cfg.render_settings()
        self._groupings: dict = {}
        self._t0 = time.perf_counter()

    @property
    def model(self) -> TransHumanModel:
        return self.state.model

    def _check_dataset(self) -> None:
        need = self.cfg.n_views + 1
        if len(self.data.train_cameras) < need:
            raise ValueError(f"need >= {need} training cameras, dataset has {len(self.data.train_cameras)}")
        w, h = self.data.manifest["image_size"]
        if self.cfg.patch_size > min(w, h):
            raise ValueError(f"patch size {self.cfg.patch_size} exceeds image size {w}x{h}")
        for s in self.data.subjects:
            if not s.frames:
                raise ValueError(f"{s.name} has no frames")
            for f in s.frames:
                if len(f.cams) != self.data.n_cameras:
                    raise ValueError(f"{s.name}: inconsistent camera count")

    # -- scene plumbing ------------------------------------------------------------
    def grouping_for(self, subject: Subject, frame: Frame) -> grp.GroupingDictionary:
        cfg = self.cfg
        n_tokens = cfg.token_count(subject.body.n_vertices)
        opts = self.model.options
        if cfg.grouping == "observation-grid":
            key = (subject.name, id(frame))
            if key not in self._groupings:
                self._groupings[key] = build_grouping(subject.body, opts, n_tokens, cfg.grouping_seed, frame.posed)
            return self._groupings[key]
        key = (subject.name, cfg.grouping)
        if key not in self._groupings:
            path = grouping_cache_path(subject, cfg, n_tokens)
            if path.exists():
                g = grp.load_grouping(path)
            else:
                g = build_grouping(subject.body, opts, n_tokens, cfg.grouping_seed)
                grp.save_grouping(g, path)
            self._groupings[key] = g
        return self._groupings[key]

    def encode(self, subject: Subject, frame: Frame, ref_views) -> SceneEncoding:
        images = np.stack([frame.image(k) for k in ref_views])
        cams = [frame.cams[k] for k in ref_views]
        return self.model.encode_scene(subject.body, frame.posed, self.grouping_for(subject, frame), images, cams)

    def pick(self, rng: np.random.Generator):
        s = self.data.subjects[int(rng.integers(len(self.data.subjects)))]
        f = s.frames[int(rng.integers(len(s.frames)))]
        views = rng.choice(self.data.train_cameras, size=self.cfg.n_views + 1, replace=False)
        return s, f, [int(v) for v in views[:-1]], int(views[-1])

    # -- one optimisation step -----------------------------------------------------
    def step_loss(self, step: int):
        """Forward pass of step ``step``; returns (loss tensor, parts)."""
        cfg = self.cfg
        rng = np.random.default_rng([cfg.seed, step])
        subject, frame, refs, target = self.pick(rng)
        cam = frame.cams[target]
        pix = sample_patches((cam.width, cam.height), cfg.patch_size, cfg.patches_per_step, rng).reshape(-1, 2)
        truth = frame.image(target)[pix[:, 1], pix[:, 0]]
        scene = self.encode(subject, frame, refs)
        o, d = generate_rays(cam, pix)
        out = self.model.render_rays(scene, o, d, self.settings, "train", rng)
        return total_loss(out.color, truth, cfg.lambda_per, cfg.patch_size)

    def train_step(self) -> dict:
        step = self.state.step
        store = self.model.store
        store.zero_grad()
        loss, parts = self.step_loss(step)
        T.backward(loss)
        for name, p in store.params.items():
            if p.grad is None:     # parameters unused this step (e.g. an ablated branch)
                p.grad = np.zeros_like(p.data)
        adam_step(store, self.cfg.lr, self.cfg.betas, self.cfg.eps)
        self.state.step += 1
        rec = {"step": step, "loss": float(loss.data), **parts}
        self.state.history.append(rec)
        return rec

    def train(self, steps: int | None = None, eval_every: int | None = None, verbose: bool = False) -> TrainState:
        steps = self.cfg.steps if steps is None else steps
        eval_every = self.cfg.eval_every if eval_every is None else eval_every
        end = self.state.step + steps
        if self.log_enabled:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            self.cfg.save(self.run_dir / "config.json")
        while self.state.step < end:
            rec = self.train_step()
            s = self.state.step
            if verbose and (s % 50 == 0 or s == end):
                print(f"step {s} loss {rec['loss']:.5f} mse {rec['mse']:.5f} "
                      f"({time.perf_counter() - self._t0:.0f}s)", flush=True)
            if self.log_enabled and self.cfg.checkpoint_every and s % self.cfg.checkpoint_every == 0:
                self.save(self.checkpoint_path(s))
            if eval_every and s % eval_every == 0:
                for split in ("train", "test"):
                    self.log_metrics(s, split, self.evaluate(split), rec["loss"])
        return self.state

    # -- persistence -----------------------------------------------------------------
    def checkpoint_path(self, step: int) -> Path:
        return self.run_dir / "checkpoints" / f"step_{step:06d}.thfc"

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(path, self.model.store)
        return path

    def resume(self, path) -> None:
        load_checkpoint(path, self.model.store)
        self.state.step = int(self.model.store.t)

    def log_metrics(self, step: int, split: str, metrics: dict, loss: float = float("nan")) -> None:
        if not self.log_enabled:
            return
        self.run_dir.mkdir(parents=True, exist_ok=True)
        line = (f"step={step} split={split} psnr={metrics['psnr']:.4f} ssim={metrics['ssim']:.5f} "
                f"loss={loss:.6f} seconds={time.perf_counter() - self._t0:.1f} seed={self.cfg.seed}\n")
        with open(self.run_dir / "metrics.log", "a", encoding="utf-8") as fh:
            fh.write(line)
        best = self.state.best.get(split)
        if best is None or metrics["psnr"] > best["psnr"]:
            self.state.best[split] = {"step": step, **metrics}

    # -- evaluation ------------------------------------------------------------------
    def eval_views(self, split: str) -> list[tuple[Subject, Frame, list[int], int]]:
        """Fixed (subject, frame, refs, target) tuples; targets never among the refs.

        train: each frame renders one training camera from N_v other training
        cameras. test: each held-out camera from the first N_v training cameras.
        """
        train = self.data.train_cameras
        nv = self.cfg.n_views
        out = []
        for s in self.data.subjects:
            for fi, f in enumerate(s.frames):
                if split == "train":
                    target = train[fi % len(train)]
                    refs = [c for c in train if c != target][:nv]
                    out.append((s, f, refs, target))
                elif split == "test":
                    for target in self.data.test_cameras:
                        out.append((s, f, train[:nv], target))
                else:
                    raise ValueError(f"unknown split {split!r}")
        return out

    def render_view(self, subject: Subject, frame: Frame, refs, target: int, mode: str = "progressive",
                    counter: EvalCounter | None = None):
        with T.no_grad():
            scene = self.encode(subject, frame, refs)
        return self.model.render_image(scene, frame.cams[target], self.settings, mode, counter=counter)

    def evaluate(self, split: str = "train", mode: str = "progressive") -> dict:
        renders, truths = [], []
        for s, f, refs, target in self.eval_views(split):
            rgb, _, _ = self.render_view(s, f, refs, target, mode)
            renders.append(rgb)
            truths.append(f.image(target))
        return evaluate(renders, truths)
