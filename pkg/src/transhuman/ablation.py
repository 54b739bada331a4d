"""Ablation matrix: one short training run per setting, one metrics row each."""
from __future__ import annotations

import time
from pathlib import Path

from .config import RunConfig
from .data import Dataset
from .training import Trainer

# axis -> (config field, values, direction reported for the full-scale method)
AXES: dict[str, tuple[str, tuple, str]] = {
    "nt": ("n_tokens_base", (100, 300, 500, 1000), "300 best; fewer tokens lose detail"),
    "nk": ("n_k", (1, 3, 5, 7, 9), "7 best; 1 clearly worse"),
    "grouping": ("grouping", ("canonical-kmeans", "canonical-grid", "observation-grid"),
                 "canonical-kmeans > canonical-grid > observation-grid"),
    "pe": ("pe", ("canonical", "observation"), "canonical > observation"),
    "fdi": ("fdi", ("full", "h-only", "a-only", "no-rgb"), "full best; w/o h worst"),
    "coordinate": ("coordinate", ("deformed", "absolute", "none"), "deformed > absolute > none"),
    "lambda": ("lambda_per", (0.0, 0.1), "0.1 improves LPIPS at similar PSNR"),
}
COLUMNS = ("axis", "value", "steps", "loss", "train_psnr", "train_ssim", "test_psnr", "test_ssim", "seconds")


def run_variant(dataset: Dataset, cfg: RunConfig, run_dir: Path, steps: int) -> dict:
    t0 = time.perf_counter()
    tr = Trainer(dataset, cfg, run_dir)
    tr.train(steps, eval_every=0)
    loss = tr.state.history[-1]["loss"] if tr.state.history else float("nan")
    tr_m, te_m = tr.evaluate("train"), tr.evaluate("test")
    tr.log_metrics(tr.state.step, "train", tr_m, loss)
    tr.log_metrics(tr.state.step, "test", te_m, loss)
    return {"steps": steps, "loss": loss, "train_psnr": tr_m["psnr"], "train_ssim": tr_m["ssim"],
            "test_psnr": te_m["psnr"], "test_ssim": te_m["ssim"], "seconds": time.perf_counter() - t0}


def run_axis(dataset, base: RunConfig, axis: str, steps: int, out_root, echo=None) -> list[dict]:
    if axis not in AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; choose from {sorted(AXES)}")
    data = dataset if isinstance(dataset, Dataset) else Dataset(dataset)
    key, values, _ = AXES[axis]
    rows = []
    for v in values:
        cfg = base.replace(**{key: v})
        row = {"axis": axis, "value": v, **run_variant(data, cfg, Path(out_root) / f"{axis}_{v}", steps)}
        rows.append(row)
        if echo:
            echo(format_row(row))
    return rows


def format_row(row: dict) -> str:
    cells = []
    for c in COLUMNS:
        v = row[c]
        cells.append(f"{v:.4f}" if isinstance(v, float) else str(v))
    return "\t".join(cells)


def format_table(rows: list[dict]) -> str:
    return "\n".join(["\t".join(COLUMNS)] + [format_row(r) for r in rows]) + "\n"


def parse_table(text: str) -> list[dict]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split("\t")
    if tuple(head) != COLUMNS:
        raise ValueError("not an ablation table")
    rows = []
    for ln in lines[1:]:
        cells = ln.split("\t")
        if len(cells) != len(COLUMNS):
            raise ValueError(f"malformed row: {ln!r}")
        rows.append(dict(zip(COLUMNS, cells)))
    return rows
