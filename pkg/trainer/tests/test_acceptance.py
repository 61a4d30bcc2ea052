"""Secondary-component acceptance: trainer integration.

Covers the release criterion end to end: the toy dataset trains well within
budget, the exported checkpoint flows through the inference CLI (compile,
eval, infer), and the clip ablation reproduces the expected shape (a tiny
clip collapses accuracy, gains flatten above 31).
"""

import subprocess
import sys
import time

import pytest

from nhalf_trainer import TrainConfig, export_checkpoint, sweep_clip, train
from nhalf_trainer.config import toy_architecture


def report(name: str, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {'PASS' if ok else 'FAIL'}: {name} ({detail})")
    assert ok, f"{name}: {detail}"


def run_engine(*args):
    return subprocess.run(
        [sys.executable, "-m", "nhalf", *map(str, args)],
        capture_output=True,
        text=True,
    )


@pytest.fixture(scope="module")
def trained(toy_data):
    cfg = TrainConfig(architecture=toy_architecture(), epochs=12, seed=0)
    start = time.perf_counter()
    result = train(cfg, *toy_data)
    return result, time.perf_counter() - start


def test_toy_training_accuracy_within_budget(trained):
    result, elapsed = trained
    report(
        "trainer toy accuracy",
        result.best_test_acc > 0.8 and elapsed < 300,
        f"best test accuracy {result.best_test_acc:.3f} in {elapsed:.0f}s",
    )


def test_export_compile_eval_pipeline(trained, toy_manifests, tmp_path):
    result, _ = trained
    _, test_manifest = toy_manifests
    ckpt_path = export_checkpoint(result.net, tmp_path / "toy.nhb")

    compiled = run_engine("compile", ckpt_path, "-o", tmp_path / "toy.nhf")
    evaled = run_engine("eval", tmp_path / "toy.nhf", test_manifest)
    accuracy = -1.0
    for line in evaled.stdout.splitlines():
        if line.startswith("accuracy="):
            accuracy = float(line.split("=", 1)[1])
    sample = next(test_manifest.parent.glob("c0_*.png"))
    inferred = run_engine("infer", tmp_path / "toy.nhf", sample)

    ok = (
        compiled.returncode == 0
        and evaled.returncode == 0
        and inferred.returncode == 0
        and accuracy > 0.8
    )
    report(
        "export/compile/eval pipeline",
        ok,
        f"compile rc={compiled.returncode}, eval rc={evaled.returncode}, "
        f"fused accuracy {accuracy:.3f}",
    )


def test_clip_sweep_shape(toy_data):
    cfg = TrainConfig(architecture=toy_architecture(), epochs=12, seed=0)
    rows = {clip: test_acc for clip, _, test_acc in sweep_clip(cfg, *toy_data)}
    ok = (
        rows[31] >= 0.85
        and rows[8] <= rows[31] - 0.15
        and abs(rows[63] - rows[31]) <= 0.1
    )
    report(
        "clip sweep shape",
        ok,
        "test accuracy by clip: "
        + ", ".join(f"{c}={rows[c]:.3f}" for c in sorted(rows)),
    )
