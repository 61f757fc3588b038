#!/usr/bin/env python3
"""Smoke test for the homogwave_py extension module.

Builds nothing itself: expects `cargo build -p homogwave-py` to have
produced target/debug/libhomogwave_py.so. Copies the shared object next
to a temp directory under an importable name and exercises the main
entry points.
"""

import json
import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def import_module():
    so = REPO / "target" / "debug" / "libhomogwave_py.so"
    if not so.exists():
        sys.exit(f"missing {so}; run `cargo build -p homogwave-py` first")
    tmp = Path(tempfile.mkdtemp(prefix="homogwave_py_"))
    shutil.copy(so, tmp / "homogwave_py.so")
    sys.path.insert(0, str(tmp))
    import homogwave_py

    return homogwave_py


def main():
    hw = import_module()

    # coefficient field: eval + validation + homogenization oracle
    field = hw.Field(json.dumps({"kind": "preset", "name": "cosine-1d"}))
    assert field.d == 1 and field.smooth
    a0 = field.eval([0.0])[0][0]
    assert abs(a0 - 1.0 / 3.0) < 1e-12, a0
    diag = field.validate(64)
    assert diag["symmetry_defect"] < 1e-12
    hom = field.homogenize(resolution=256)
    assert abs(hom["a_hat"][0][0] - 0.5) <= 1e-4, hom["a_hat"]

    # boundary-adapted correctors stay near the identity
    corr = field.dirichlet_correctors(0.125, [1.0], [128])
    chi_max = max(hom["chi_sup_norms"])
    assert max(corr["sup_norms"]) <= 2 * 0.125 * chi_max + 1e-6
    assert corr["min_boundary_det"] > 0

    # eigenvalues approach the homogenized spectrum
    lam = hw.eigenvalues(field, 0.03125, [1.0], [256], 3)
    assert abs(lam[0] - 0.5 * math.pi**2) / (0.5 * math.pi**2) < 0.05, lam

    # filtering threshold formula
    assert abs(hw.frequency_threshold(0.001, 1.0, 1.0) - 100.0) < 1e-9

    # wave energy is conserved to a tight drift bound
    n = 129
    u0 = [math.sin(math.pi * i / (n - 1)) for i in range(n)]
    v0 = [0.0] * n
    traj = hw.wave_energy(field, 0.125, [1.0], [n - 1], u0, v0, 2.0)
    e = traj["energy"]
    drift = max(abs(x - e[0]) for x in e) / e[0]
    assert drift < 1e-3, drift

    # boundary control of the low modes on an interval
    ctrl = hw.control_interval(0.5, 64, 2.0, modes=4)
    assert ctrl["normal_residual"] <= 1e-10
    assert ctrl["residual_l2"] <= 1e-2
    assert ctrl["residual_h1neg"] <= 1e-2

    # config-driven runner end to end
    out = Path(tempfile.mkdtemp(prefix="homogwave_run_"))
    cfg = {
        "command": "cell",
        "scenario": {"field": {"kind": "preset", "name": "laminate-2d"}},
        "cell_resolution": 64,
        "out_dir": str(out),
    }
    run_dir = Path(hw.run_experiment(json.dumps(cfg)))
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["status"] == "ok"
    assert (run_dir / "a_hat.txt").exists()

    print("smoke test passed")


if __name__ == "__main__":
    main()
