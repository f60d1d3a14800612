"""Smoke test for the `fvlab` extension module.

Build first:  cargo build --release -p fvlab-py
then run:     python3 python/smoke_test.py
"""

import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load():
    built = os.path.join(ROOT, "target", "release", "libfvlab.so")
    if not os.path.exists(built):
        sys.exit(f"missing {built}; run `cargo build --release -p fvlab-py`")
    tmp = tempfile.mkdtemp()
    shutil.copy(built, os.path.join(tmp, "fvlab.so"))
    sys.path.insert(0, tmp)
    import fvlab

    return fvlab


def main():
    fvlab = load()

    mesh = fvlab.Mesh.uniform(3, 4)
    assert mesh.cells == [4, 4, 4]
    assert mesh.node_count == 125 and mesh.interior_count == 27

    again = fvlab.Mesh.from_text(mesh.to_text())
    assert again.coords(1) == mesh.coords(1)

    ones = [1.0] * mesh.node_count
    mu = fvlab.mu_transverse(mesh, ones, 0)
    # Defined where the transverse indices are interior, zero elsewhere.
    m = 4
    for flat, v in enumerate(mu):
        j, k = (flat // (m + 1)) % (m + 1), flat % (m + 1)
        inside = 0 < j < m and 0 < k < m
        assert abs(v - (1.0 if inside else 0.0)) < 1e-14, (flat, v)

    # Constants are annihilated at interior nodes.
    lv = fvlab.apply_lh(mesh, ones)
    assert max(abs(v) for v in lv) < 1e-12

    coarse = fvlab.solve(fvlab.Mesh.random([8, 8, 8], 0.3, 1), "gaussian_cube", {"c": 1.0})
    fine = fvlab.solve(fvlab.Mesh.random([16, 16, 16], 0.3, 1), "gaussian_cube", {"c": 1.0})
    assert fine["relative_residual"] <= 1e-10
    assert fine["h1h"] < coarse["h1h"] / 2, (coarse["h1h"], fine["h1h"])

    zero = fvlab.norms_of(mesh, [0.0] * mesh.node_count)
    assert zero == {"l2": 0.0, "h1_semi": 0.0, "h1h": 0.0, "max": 0.0}

    rows, aborted = fvlab.run_study(2, [8, 16, 32], "sine_product")
    assert aborted is None
    assert rows[0]["ord_h1h"] is None
    assert 1.8 <= rows[-1]["ord_h1h"] <= 2.2, rows[-1]

    checks = fvlab.verify(2, 5, 3, 5, 1)
    assert all(ok for (_, _, ok) in checks.values()), checks
    assert math.isclose(checks["poincare"][1], 0.5)

    try:
        fvlab.Mesh.uniform(1, 4)
    except ValueError:
        pass
    else:
        raise AssertionError("1-D mesh accepted")

    print("fvlab smoke test: ok")


if __name__ == "__main__":
    main()
