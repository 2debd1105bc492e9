"""Acceptance criteria, one test each. Every test prints a single PASS/FAIL line.

The two training experiments take several minutes each on one core and are
marked ``slow``; deselect them with ``-m "not slow"``.
"""
import math
import time
from pathlib import Path

import numpy as np
import pytest

from minibit import gradcheck, synth
from minibit.checkpoint import checkpoint_load, checkpoint_save, from_bytes, to_bytes
from minibit.data import load_dataset_dir
from minibit.errors import IntegrityError
from minibit.harness import (TrainConfig, epochs_to_reach, finetune, finetune_model, pretrain,
                             trailing_mean)
from minibit.layers import EPS_WS, conv2d_forward, group_norm_forward, weight_standardize
from minibit.metrics import binary_cross_entropy, read_metrics_csv, softmax_cross_entropy
from minibit.model import ResNetConfig, build_model
from minibit.optim import LrSchedule, lr_at
from minibit.tensor import Prng
from test_hyperrule import GRID, check_grid
from test_metrics import recount_fixtures

README = Path(__file__).resolve().parents[1] / "README.md"
DESK_WIDTH = 16


def report(capsys, name, ok, detail):
    with capsys.disabled():
        print(f"\n[acceptance] {'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, detail


def test_scope_statement(capsys):
    text = README.read_text()
    ok = "## Scope" in text and "not reproducible" in text and "ResNet152x4" in text
    report(capsys, "scope-statement", ok, "README states which headline numbers are out of reach")


def test_gradcheck_suite(capsys):
    t0 = time.process_time()
    reports = gradcheck.check_all(seeds=range(20))
    control = gradcheck.check_layer(gradcheck.NEGATIVE_CONTROL, 0)
    cpu = time.process_time() - t0
    failed = sorted({(r.layer, r.worst) for r in reports if not r.passed})
    layers = sorted({r.layer for r in reports})
    worst = {n: max(r.worst for r in reports if r.layer == n) for n in layers}
    ok = not failed and not control.passed and cpu < 120.0 and len(reports) == 20 * len(layers)
    detail = (f"{len(layers)} layers x 20 seeds, worst model {worst['model']:.2e}, "
              f"worst layer {max(v for k, v in worst.items() if k != 'model'):.2e}, "
              f"negative control worst {control.worst:.2f}, {cpu:.1f}s CPU, failures {failed}")
    report(capsys, "gradcheck", ok, detail)


def test_exact_lr_schedule(capsys):
    sched = LrSchedule(base_lr=0.03, batch_size=512, reference_batch=512, total_epochs=50)
    got = [lr_at(sched, e) for e in (0, 20, 30, 40)]
    half = lr_at(LrSchedule(base_lr=0.03, batch_size=256), 0)
    ok = got == [0.03, 0.003, 0.0003, 0.00003] and half == 0.015
    report(capsys, "lr-schedule", ok, f"epochs 0/20/30/40 -> {got}, batch 256 -> {half}")


def test_loss_anchors(capsys):
    model = build_model(ResNetConfig.preset("resnet14", base_width=4, num_classes=2), 3)
    x = Prng(5).uniform_array(4 * 3 * 16 * 16).reshape(4, 3, 16, 16).astype(np.float32)
    logits = model.forward(x)
    init_loss = softmax_cross_entropy(np.array([0, 1, 1, 0]), logits)[0]
    bce = binary_cross_entropy(np.array([0.0, 1.0, 1.0, 0.0]), np.full(4, 0.5))
    mismatches = recount_fixtures(1000)
    ok = (abs(init_loss - math.log(2)) <= 1e-4 and abs(bce - 0.693147) <= 1e-6 and mismatches == 0)
    report(capsys, "loss-anchors", ok,
           f"zero-head loss {init_loss:.6f}, uniform BCE {bce:.7f}, recount mismatches {mismatches}/1000")


def test_ws_gn_invariants(capsys):
    rng = np.random.default_rng(11)
    w = rng.standard_normal((8, 4, 3, 3)).astype(np.float32) * 0.05
    w_hat, _ = weight_standardize(w)
    flat = w_hat.reshape(8, -1).astype(np.float64)
    src = w.reshape(8, -1).astype(np.float64)
    target = src.var(axis=1) / (src.var(axis=1) + EPS_WS)
    mean_err = float(np.abs(flat.mean(axis=1)).max())
    var_err = float(np.abs(flat.var(axis=1) - target).max())
    x = rng.standard_normal((2, 4, 6, 6)).astype(np.float32)
    y1 = conv2d_forward(x, w, padding=1, ws=True)[0]
    y3 = conv2d_forward(x, 3 * w, padding=1, ws=True)[0]
    scale_err = float(np.abs(y1 - y3).max())
    const = np.full((2, 8, 5, 5), 1.7, np.float32)
    beta = rng.standard_normal(8).astype(np.float32)
    gn = group_norm_forward(const, rng.standard_normal(8).astype(np.float32), beta, 4)[0]
    gn_err = float(np.abs(gn - beta[None, :, None, None]).max())
    ok = mean_err <= 1e-5 and var_err <= 1e-4 and gn_err <= 1e-6 and scale_err <= 1e-4
    report(capsys, "ws-gn-invariants", ok, f"|mean| {mean_err:.1e}, var err {var_err:.1e}, "
           f"GN const err {gn_err:.1e}, x3 scale err {scale_err:.1e}")


def test_hyperrule_grid(capsys):
    bad = check_grid()
    ok = len(GRID) == 12 and not bad and GRID[(660, 512)][4] is False
    report(capsys, "hyperrule-grid", ok, f"12-case grid, mismatches {bad}")


def test_determinism_and_formats(capsys, tmp_path):
    synth.generate("ring-vs-disk-2class", tmp_path / "data", 16, seed=4, val_n=8, size=16)
    outs = []
    for tag in ("a", "b"):
        cfg = TrainConfig(model=ResNetConfig.preset("resnet14", base_width=4), seed=9,
                          train_dir=str(tmp_path / "data/train"), val_dir=str(tmp_path / "data/val"),
                          batch_size=4, record_wall_time=False,
                          checkpoint_out=str(tmp_path / f"{tag}.bin"), metrics_csv=str(tmp_path / f"{tag}.csv"),
                          schedule=LrSchedule(base_lr=0.03, reference_batch=4, total_epochs=3, milestones=[2]))
        pretrain(cfg)
        outs.append((tmp_path / f"{tag}.bin").read_bytes() + (tmp_path / f"{tag}.csv").read_bytes())
    same_runs = outs[0] == outs[1]
    checkpoint_save(tmp_path / "c.bin", checkpoint_load(tmp_path / "a.bin"))
    round_trip = (tmp_path / "c.bin").read_bytes() == (tmp_path / "a.bin").read_bytes()
    raw = bytearray(to_bytes(checkpoint_load(tmp_path / "a.bin")))
    raw[-9] ^= 0x10
    try:
        from_bytes(bytes(raw))
        crc = False
    except IntegrityError:
        crc = True
    ok = same_runs and round_trip and crc
    report(capsys, "determinism-formats", ok,
           f"repeat runs identical {same_runs}, save-load-save identical {round_trip}, CRC catches flip {crc}")


@pytest.fixture(scope="module")
def rvd_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("rvd")
    synth.generate("ring-vs-disk-2class", root, 800, seed=7, val_n=200, size=32)
    return root


@pytest.mark.slow
def test_desk_downstream(capsys, tmp_path, rvd_dir):
    cfg = TrainConfig(model=ResNetConfig.preset("resnet14", base_width=DESK_WIDTH), seed=7,
                      train_dir=str(rvd_dir / "train"), val_dir=str(rvd_dir / "val"), batch_size=32,
                      metrics_csv=str(tmp_path / "desk.csv"),
                      schedule=LrSchedule(base_lr=0.03, reference_batch=32, total_epochs=50))
    t0 = time.process_time()
    pretrain(cfg)
    cpu = time.process_time() - t0
    rows = read_metrics_csv(tmp_path / "desk.csv")
    reached = epochs_to_reach(rows, 95.0)
    start, end = trailing_mean([r.train_loss for r in rows], 5)
    ok = reached is not None and reached <= 50 and cpu <= 600.0 and end < start
    report(capsys, "desk-downstream", ok,
           f"95% val at epoch {reached}, final {rows[-1].val_acc:.1f}%, {cpu:.0f}s CPU, "
           f"trailing-5 loss {start:.4f} -> {end:.4f}")


@pytest.mark.slow
def test_transfer_paired(capsys, tmp_path, rvd_dir):
    shapes = tmp_path / "shapes"
    synth.generate("shapes-4class", shapes, 2000, seed=11, val_n=400, size=32)
    up = TrainConfig(model=ResNetConfig.preset("resnet14", base_width=DESK_WIDTH, num_classes=4), seed=7,
                     train_dir=str(shapes / "train"), val_dir=str(shapes / "val"), batch_size=32,
                     checkpoint_out=str(tmp_path / "shapes.bin"),
                     schedule=LrSchedule(base_lr=0.03, reference_batch=32, total_epochs=10,
                                         milestones=[4, 6, 8]))
    upstream = pretrain(up)
    datasets = (load_dataset_dir(rvd_dir / "train"), load_dataset_dir(rvd_dir / "val", "validation"))

    def paired_cfg():
        return TrainConfig(mode="finetune", model=ResNetConfig.preset("resnet14", base_width=DESK_WIDTH),
                           train_dir=str(rvd_dir / "train"), val_dir=str(rvd_dir / "val"),
                           batch_size=32, seed=7, checkpoint_in=str(tmp_path / "shapes.bin"))

    tuned = finetune(paired_cfg(), datasets)
    scratch_model = build_model(ResNetConfig.preset("resnet14", base_width=DESK_WIDTH), 7)
    scratch = finetune_model(paired_cfg(), scratch_model, datasets)
    budget = len(scratch.rows)
    assert budget == len(tuned.rows)
    ft = epochs_to_reach(tuned.rows, 95.0)
    sc = epochs_to_reach(scratch.rows, 95.0)
    # a scratch run that never gets there within the budget needs at least budget + 1 epochs
    sc_bound = sc if sc is not None else budget + 1
    ok = ft is not None and ft <= 0.5 * sc_bound
    sc_text = f"{sc}" if sc is not None else f">{budget} (final {scratch.rows[-1].val_acc:.1f}%)"
    report(capsys, "transfer-paired", ok,
           f"upstream val {upstream.rows[-1].val_acc:.1f}%, epochs to 95%: fine-tuned {ft}, "
           f"scratch {sc_text}, budget {budget} epochs")
