"""End-to-end command-line behavior and exit-code contract."""

import os

import numpy as np
import pytest

from rasm.cli import main

MICRO_CFG = """
model.depth = 2
model.multipliers = 1,2
model.base_channels = 4
model.ca_blocks = 1
model.ram_blocks = 1
model.num_heads = 4
model.region_size = 3
model.dilation = 1
synth.size = 32
train.batch_size = 2
train.crop_size = 32
train.augment = false
train.log_every = 1
train.ckpt_every = 0
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "micro.cfg"
    p.write_text(MICRO_CFG)
    return str(p)


def _tree_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in sorted(files):
            p = os.path.join(dirpath, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = fh.read()
    return out


def test_no_arguments_is_usage_error(capsys):
    assert main([]) == 1
    assert "usage error" in capsys.readouterr().err


def test_unknown_command_is_usage_error(capsys):
    assert main(["polish"]) == 1


def test_missing_required_flag_is_usage_error(capsys):
    assert main(["synth"]) == 1
    assert "--out" in capsys.readouterr().err


def test_bad_config_field_is_usage_error(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("model.bogus_field = 3\n")
    assert main(["flops", "--config", str(bad)]) == 1
    assert "model.bogus_field" in capsys.readouterr().err


def test_bad_config_value_is_usage_error(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("model.region_size = 4\n")
    assert main(["flops", "--config", str(bad)]) == 1


def test_synth_writes_deterministic_tree(tmp_path, cfg):
    a = str(tmp_path / "a")
    b = str(tmp_path / "b")
    c = str(tmp_path / "c")
    assert main(["synth", "--out", a, "--count", "2", "--config", cfg,
                 "--seed", "7"]) == 0
    assert main(["synth", "--out", b, "--count", "2", "--config", cfg,
                 "--seed", "7"]) == 0
    assert main(["synth", "--out", c, "--count", "2", "--config", cfg,
                 "--seed", "8"]) == 0
    ta, tb, tc = _tree_bytes(a), _tree_bytes(b), _tree_bytes(c)
    assert set(ta) == {f"{sub}/synth_{i:05d}.png"
                       for sub in ("shadow", "mask", "gt") for i in range(2)}
    assert ta == tb
    assert ta != tc


def test_train_eval_infer_attmap_pipeline(tmp_path, cfg, capsys):
    ds = str(tmp_path / "ds")
    run = str(tmp_path / "run")
    assert main(["synth", "--out", ds, "--count", "2", "--config", cfg]) == 0

    assert main(["train", "--out", run, "--config", cfg, "--steps", "2",
                 "--data", ds]) == 0
    final = os.path.join(run, "final.rasm")
    assert os.path.exists(final)

    csv_path = str(tmp_path / "m.csv")
    assert main(["eval", "--checkpoint", final, "--data", ds,
                 "--out", csv_path]) == 0
    lines = open(csv_path).read().splitlines()
    assert lines[0].startswith("name,psnr_s,")
    assert len(lines) == 4  # header, 2 samples, mean row

    out_png = str(tmp_path / "restored.png")
    shadow = os.path.join(ds, "shadow", "synth_00000.png")
    mask = os.path.join(ds, "mask", "synth_00000.png")
    assert main(["infer", "--checkpoint", final, "--shadow", shadow,
                 "--mask", mask, "--out", out_png]) == 0
    from rasm.data import load_image
    img = load_image(out_png)
    assert img.shape == (3, 32, 32)

    capsys.readouterr()
    assert main(["attmap", "--checkpoint", final, "--shadow", shadow,
                 "--mask", mask, "--query", "3,3"]) == 0
    rows = [l.split() for l in capsys.readouterr().out.strip().splitlines()]
    assert all(len(r) == 3 for r in rows)
    weights = [float(r[2]) for r in rows]
    assert abs(sum(weights) - 1.0) < 1e-6


def test_attmap_bad_query_is_usage_error(tmp_path, cfg, capsys):
    ds = str(tmp_path / "ds")
    run = str(tmp_path / "run")
    main(["synth", "--out", ds, "--count", "1", "--config", cfg])
    main(["train", "--out", run, "--config", cfg, "--steps", "0",
          "--data", ds])
    final = os.path.join(run, "final.rasm")
    shadow = os.path.join(ds, "shadow", "synth_00000.png")
    mask = os.path.join(ds, "mask", "synth_00000.png")
    assert main(["attmap", "--checkpoint", final, "--shadow", shadow,
                 "--mask", mask, "--query", "center"]) == 1
    assert "--query" in capsys.readouterr().err


def test_missing_checkpoint_is_runtime_error(tmp_path, capsys):
    assert main(["infer", "--checkpoint", str(tmp_path / "no.rasm"),
                 "--shadow", "x.png", "--mask", "m.png",
                 "--out", "o.png"]) == 2


def test_missing_data_dir_is_runtime_error(tmp_path, cfg):
    run = str(tmp_path / "run")
    main(["train", "--out", run, "--config", cfg, "--steps", "0"])
    assert main(["eval", "--checkpoint", os.path.join(run, "final.rasm"),
                 "--data", str(tmp_path / "nowhere")]) == 2


def test_flops_table_prints_totals(capsys, cfg):
    assert main(["flops", "--config", cfg, "--size", "64"]) == 0
    out = capsys.readouterr().out
    assert "total" in out
    assert "proj_in" in out


def test_flops_incompatible_size_is_runtime_error(cfg, capsys):
    assert main(["flops", "--config", cfg, "--size", "30"]) == 2


def test_train_resume_roundtrip_via_cli(tmp_path, cfg):
    run = str(tmp_path / "run")
    cfg2 = tmp_path / "ck.cfg"
    cfg2.write_text(MICRO_CFG + "train.ckpt_every = 1\n")
    assert main(["train", "--out", run, "--config", str(cfg2),
                 "--steps", "2"]) == 0
    mid = os.path.join(run, "ckpt_0000001.rasm")
    assert os.path.exists(mid)
    # resume with no --config: config comes from the checkpoint itself
    run2 = str(tmp_path / "run2")
    assert main(["train", "--out", run2, "--steps", "2",
                 "--resume", mid]) == 0
    a = open(os.path.join(run, "final.rasm"), "rb").read()
    b = open(os.path.join(run2, "final.rasm"), "rb").read()
    assert a == b
