#!/usr/bin/env python3
"""Smoke test for the matadv extension module.

Builds nothing itself: run `cargo build -p matadv-py` (or --release) first,
then `python3 python/smoke_test.py`. The script copies the compiled cdylib
into a temp directory as matadv.so and imports it from there.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def locate_cdylib() -> Path:
    candidates = [
        REPO / "target" / profile / "libmatadv.so"
        for profile in ("release", "debug")
    ]
    for path in candidates:
        if path.exists():
            return path
    sys.exit(
        "libmatadv.so not found; run `cargo build -p matadv-py` first "
        f"(looked in {', '.join(str(c) for c in candidates)})"
    )


def check(name: str, ok: bool, detail: str = "") -> None:
    if not ok:
        sys.exit(f"FAIL {name}{': ' + detail if detail else ''}")
    print(f"PASS {name}")


def main() -> None:
    cdylib = locate_cdylib()
    with tempfile.TemporaryDirectory() as tmp:
        shutil.copy(cdylib, Path(tmp) / "matadv.so")
        sys.path.insert(0, tmp)
        import matadv

        check("import", True)
        check("version", isinstance(matadv.version(), str) and matadv.version() != "")

        classes = matadv.shape_classes()
        check("shape_classes", len(classes) == 8 and "sphere" in classes, str(classes))

        # Noiseless sphere: normalization pins every point to the unit sphere.
        pts = matadv.synth_cloud("sphere", points=128, size_jitter=0.0,
                                 noise_sigma=0.0, seed=3)
        norms = [math.sqrt(x * x + y * y + z * z) for x, y, z in pts]
        check("sphere_norms", len(pts) == 128 and
              all(abs(n - 1.0) < 1e-6 for n in norms),
              f"count={len(pts)} worst={max(abs(n - 1.0) for n in norms):.2e}")

        check("synth_deterministic",
              matadv.synth_cloud("torus", seed=9) == matadv.synth_cloud("torus", seed=9))

        cube = matadv.synth_cloud("cube", points=96, noise_sigma=0.0, seed=1)
        check("chamfer_identity", matadv.chamfer(cube, cube) == 0.0)
        shifted = [[x + 0.5, y, z] for x, y, z in cube]
        check("chamfer_symmetry",
              abs(matadv.chamfer(cube, shifted) - matadv.chamfer(shifted, cube)) < 1e-12)
        check("hausdorff_positive", matadv.hausdorff(cube, shifted) > 0.0)
        check("knn_mean_positive", matadv.knn_mean(cube, k=4) > 0.0)

        # SOR with a far outlier appended: the outlier goes, the rest survive.
        spiked = cube + [[25.0, 25.0, 25.0]]
        kept = matadv.sor(spiked, k=2, alpha=1.1)
        check("sor_drops_outlier",
              [25.0, 25.0, 25.0] not in kept and len(kept) >= len(cube) // 2,
              f"kept {len(kept)} of {len(spiked)}")

        kept = matadv.srs(cube, drop=48, seed=5)
        check("srs_count", len(kept) == len(cube) - 48, f"kept {len(kept)}")

        for rho in (0.0, 0.25, 0.5, 1.0):
            mask = matadv.dropout_mask(64, rho, seed=2)
            dropped = sum(1 for keep in mask if not keep)
            check(f"dropout_rho_{rho}", dropped == round(rho * 64),
                  f"dropped {dropped}")

        check("stage_seed_deterministic",
              matadv.stage_seed("attack", 42) == matadv.stage_seed("attack", 42))
        check("stage_seed_labeled",
              matadv.stage_seed("attack", 42) != matadv.stage_seed("gen-data", 42))
        check("stream_seed_indexed",
              matadv.stream_seed("defense", 7, 0) != matadv.stream_seed("defense", 7, 1))

        try:
            matadv.synth_cloud("blob")
        except ValueError as err:
            check("bad_class_raises", "unknown shape class" in str(err), str(err))
        else:
            sys.exit("FAIL bad_class_raises: no exception")

    print("smoke test passed")


if __name__ == "__main__":
    main()
