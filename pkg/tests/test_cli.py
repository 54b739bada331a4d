import hashlib
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from transhuman.ablation import AXES, COLUMNS, parse_table
from transhuman.body import Pose, pose_body
from transhuman.checks import tiny_network
from transhuman.cli import main
from transhuman.config import ConfigError, RunConfig
from transhuman.data import DataConfig, Dataset, camera_ring, gen_data, render_ground_truth
from transhuman.imageio import read_ppm


def _digest(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_config_roundtrip_and_unknown_keys(tmp_path):
    cfg = RunConfig(seed=7, n_k=3, network=tiny_network())
    assert RunConfig.from_json(cfg.to_json()) == cfg
    assert RunConfig.from_json(cfg.to_json()).to_json() == cfg.to_json()
    cfg.save(tmp_path / "c.json")
    assert RunConfig.load(tmp_path / "c.json") == cfg
    d = cfg.to_dict()
    d["bogus"] = 1
    with pytest.raises(ConfigError):
        RunConfig.from_dict(d)
    d = cfg.to_dict()
    d["network"]["nope"] = 1
    with pytest.raises(ConfigError):
        RunConfig.from_dict(d)
    with pytest.raises(ConfigError):
        RunConfig(n_k=0)
    assert cfg.replace(**{"network.d1": 16}).network.d1 == 16


def test_token_count_scaling():
    assert RunConfig().token_count(6890) == 300
    assert RunConfig().token_count(1500) == 65
    assert RunConfig(n_tokens=40).token_count(1500) == 40


def test_gen_data_counts_and_determinism(tmp_path):
    cfg = DataConfig(subjects=2, frames=4, cameras=6, image_size=24, n_vertices=200)
    a = gen_data(tmp_path / "a", cfg, seed=11)
    b = gen_data(tmp_path / "b", cfg, seed=11)
    assert len(list(a.rglob("*.ppm"))) == 2 * 4 * 6
    assert len(list(a.rglob("*.camera"))) == 48 and len(list(a.rglob("pose.json"))) == 8
    assert _digest(a) == _digest(b)
    with pytest.raises(FileExistsError):
        gen_data(a, cfg, seed=11)
    ds = Dataset(a)
    assert ds.train_cameras == [0, 1, 2, 3, 4] and ds.test_cameras == [5]


def test_empty_pose_slot_is_background(small_dataset):
    ds = Dataset(small_dataset)
    s = ds.subjects[0]
    far = Pose(s.frames[0].pose.rotations, np.array([0.0, 50.0, 0.0]))
    img = render_ground_truth(pose_body(s.body, far), s.appearance, camera_ring(DataConfig(image_size=32))[0])
    assert np.all(img == 0)


def test_manifest_validation(small_dataset, tmp_path):
    root = tmp_path / "copy"
    shutil.copytree(small_dataset, root)
    (root / "subject_0" / "frame_1" / "cam_2.ppm").unlink()
    with pytest.raises(FileNotFoundError, match="cam_2.ppm"):
        Dataset(root)
    assert main(["train", "--data", str(root), "--runs", str(tmp_path), "--steps", "1"]) == 1


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--out", str(root / "data"), "--frames", "1", "--size", "32",
                 "--vertices", "400", "--seed", "2"]) == 0
    cfg = RunConfig(network=tiny_network(), patch_size=16, n_samples=16, checkpoint_every=0)
    cfg.save(root / "cfg.json")
    assert main(["train", "--data", str(root / "data"), "--runs", str(root / "runs"), "--name", "t",
                 "--steps", "3", "--quiet", "--config", str(root / "cfg.json")]) == 0
    ckpt = root / "runs" / "t" / "checkpoints" / "step_000003.thfc"
    assert ckpt.exists()
    return root, ckpt


def _counters(out: str) -> dict:
    line = [ln for ln in out.splitlines() if ln.startswith("mode=")][-1]
    return {k: v for k, v in (kv.split("=") for kv in line.split())}


def test_render_full_vs_progressive(cli_run, capsys):
    root, ckpt = cli_run
    counts = {}
    for mode in ("full", "progressive"):
        out_dir = root / f"render_{mode}"
        assert main(["render", "--data", str(root / "data"), "--checkpoint", str(ckpt),
                     "--out", str(out_dir), "--mode", mode]) == 0
        counts[mode] = _counters(capsys.readouterr().out)
        imgs = sorted(out_dir.glob("*.ppm"))
        assert imgs and (out_dir / (imgs[0].stem + ".opacity")).exists()
    assert int(counts["progressive"]["density_evals"]) < int(counts["full"]["density_evals"])
    assert int(counts["progressive"]["color_evals"]) < int(counts["full"]["color_evals"])
    a = read_ppm(sorted((root / "render_full").glob("*.ppm"))[0])
    b = read_ppm(sorted((root / "render_progressive").glob("*.ppm"))[0])
    assert np.abs(a - b).max() <= 1 / 255 + 1e-12


def test_eval_self_is_capped(cli_run, capsys):
    root, ckpt = cli_run
    truth = root / "data" / "subject_0"
    assert main(["eval", "--pred", str(truth), "--truth", str(truth)]) == 0
    out = capsys.readouterr().out
    assert "psnr=99.0000" in out and "ssim=1.00000" in out
    assert main(["eval", "--data", str(root / "data"), "--checkpoint", str(ckpt), "--split", "test"]) == 0
    assert "split=test step=3" in capsys.readouterr().out


def test_ablate_nk_rows(cli_run, capsys, tmp_path):
    root, _ = cli_run
    table = tmp_path / "nk.tsv"
    assert main(["ablate", "--data", str(root / "data"), "--axis", "nk", "--steps", "1",
                 "--runs", str(tmp_path / "ab"), "--table", str(table),
                 "--config", str(root / "cfg.json")]) == 0
    rows = parse_table(table.read_text())
    assert [r["value"] for r in rows] == [str(v) for v in AXES["nk"][1]]
    printed = [ln for ln in capsys.readouterr().out.splitlines() if ln]
    assert printed[0].split("\t") == list(COLUMNS) and len(printed) == 1 + len(rows)


def test_bad_invocations(cli_run, tmp_path, capsys):
    root, _ = cli_run
    with pytest.raises(SystemExit) as e:
        main(["train", "--data", "x", "--no-such-flag"])
    assert e.value.code != 0
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code != 0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n_kk": 3}))
    assert main(["train", "--data", str(root / "data"), "--config", str(bad)]) == 2
    assert main(["ablate", "--data", str(root / "data"), "--axis", "bogus"]) == 2
    assert main(["gen-data", "--out", str(root / "data")]) == 1
    capsys.readouterr()
