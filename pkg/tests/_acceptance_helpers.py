"""Shared builders for the acceptance suite's trained artifacts.

Training runs are cached under tests/_artifacts (override with
CSIFEEDBACK_ARTIFACTS) keyed by their resolved configuration, so
repeated test runs reuse completed stages. Run this module directly to
pre-build everything:  python3 tests/_acceptance_helpers.py
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
import time

HERE = os.path.dirname(os.path.abspath(__file__))

DATA_SEED = 0
TRAIN_SEED = 1
EPOCHS = 100
FINETUNE_EPOCHS = 30
OFFSET_EPOCHS = 100
SPLITS = (5000, 1000, 1000)
# bumped when training-path changes invalidate cached runs
TRAINER_VERSION = 2


def artifact_root():
    root = os.environ.get("CSIFEEDBACK_ARTIFACTS", os.path.join(HERE, "_artifacts"))
    os.makedirs(root, exist_ok=True)
    return root


def _stamp(path, key):
    with open(os.path.join(path, "cache_key.txt"), "w") as fh:
        fh.write(key)


def _fresh(path, key):
    try:
        with open(os.path.join(path, "cache_key.txt")) as fh:
            return fh.read() == key
    except OSError:
        return False


def _key(payload) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _run_cli(argv):
    from csifeedback.cli import main

    code = main(argv)
    if code:
        raise RuntimeError(f"cli {argv[0]} failed with exit code {code}")


def ensure_data():
    from csifeedback.channel import ClusterModelConfig
    from dataclasses import asdict

    root = artifact_root()
    path = os.path.join(root, "data")
    key = _key({"gen": asdict(ClusterModelConfig(seed=DATA_SEED)), "splits": SPLITS})
    if not _fresh(path, key):
        t = time.time()
        _run_cli([
            "gen-data", "--samples", str(SPLITS[0]), "--val-samples", str(SPLITS[1]),
            "--test-samples", str(SPLITS[2]), "--seed", str(DATA_SEED), "--out", path,
        ])
        _stamp(path, key)
        print(f"[artifacts] dataset built in {time.time() - t:.0f}s", flush=True)
    return path


def ensure_model(arch, cr, epochs=EPOCHS):
    root = artifact_root()
    data = ensure_data()
    path = os.path.join(root, f"{arch}-cr{cr}")
    key = _key({"arch": arch, "cr": cr, "epochs": epochs, "seed": TRAIN_SEED,
                "data": os.path.basename(data), "trainer": TRAINER_VERSION})
    if not _fresh(path, key):
        t = time.time()
        _run_cli([
            "train", "--arch", arch, "--cr", str(cr), "--epochs", str(epochs),
            "--seed", str(TRAIN_SEED), "--data", data, "--out", path,
        ])
        _stamp(path, key)
        print(f"[artifacts] {arch} cr{cr} trained in {(time.time() - t) / 60:.1f} min",
              flush=True)
    return path


def ensure_offset(bits, mode="mulaw", epochs=OFFSET_EPOCHS):
    root = artifact_root()
    data = ensure_data()
    model = ensure_model("csinet-plus", 4)
    path = os.path.join(root, f"offset-b{bits}-{mode}")
    key = _key({"bits": bits, "mode": mode, "epochs": epochs, "model": "csinet-plus-cr4",
                "trainer": TRAINER_VERSION})
    if not _fresh(path, key):
        t = time.time()
        _run_cli([
            "train-offset", "--model", model, "--data", data, "--bits", str(bits),
            "--mode", mode, "--epochs", str(epochs), "--seed", str(TRAIN_SEED),
            "--out", path,
        ])
        _stamp(path, key)
        print(f"[artifacts] offset b{bits} {mode} trained in {(time.time() - t) / 60:.1f} min",
              flush=True)
    return path


def ensure_finetune(bits=3, mode="mulaw", epochs=FINETUNE_EPOCHS):
    root = artifact_root()
    data = ensure_data()
    model = ensure_model("csinet-plus", 4)
    offset = ensure_offset(bits, mode)
    path = os.path.join(root, f"finetune-b{bits}-{mode}")
    key = _key({"bits": bits, "mode": mode, "epochs": epochs, "trainer": TRAINER_VERSION})
    if not _fresh(path, key):
        t = time.time()
        _run_cli([
            "finetune", "--model", model, "--offset", offset, "--data", data,
            "--epochs", str(epochs), "--seed", str(TRAIN_SEED), "--out", path,
        ])
        _stamp(path, key)
        print(f"[artifacts] finetune b{bits} in {(time.time() - t) / 60:.1f} min",
              flush=True)
    return path


def build_all():
    # ordered so ordering-relevant endpoints appear early
    ensure_data()
    ensure_model("csinet-plus", 4)
    ensure_model("csinet", 4)
    ensure_model("csinet-plus", 32)
    ensure_offset(3)
    ensure_finetune(3)
    ensure_model("csinet-plus", 8)
    ensure_model("csinet", 8)
    ensure_model("csinet-plus", 16)
    ensure_offset(6)
    print("[artifacts] all stages complete", flush=True)


if __name__ == "__main__":
    sys.exit(build_all())
