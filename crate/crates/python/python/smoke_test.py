"""Smoke test for the extension module.

Build first with `cargo build --release -p polymerlab-py`, then run
`python3 crates/python/python/smoke_test.py` from the workspace root.
"""

import json
import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..", ".."))


def load():
    lib = os.path.join(ROOT, "target", "release", "libpolymerlab_py.so")
    if not os.path.exists(lib):
        sys.exit(f"missing {lib}; run cargo build --release -p polymerlab-py")
    tmp = tempfile.mkdtemp()
    shutil.copy(lib, os.path.join(tmp, "polymerlab_py.so"))
    sys.path.insert(0, tmp)
    import polymerlab_py

    return polymerlab_py


def main():
    pl = load()
    k = pl.Kernel.simple(3)
    assert k.dim == 3 and len(k) == 6
    assert abs(sum(k.probs()) - 1.0) < 1e-15
    q = k.tilt(1.0, [0.5, 0.0, 0.0])
    assert q.probs()[0] != q.probs()[1]
    assert abs(k.entropy() - math.log(6)) < 1e-12

    w = pl.Weights.uniform()
    assert abs(w.log_mgf(1.0) - math.log(math.e - 1.0)) < 1e-12

    # two steps of the d = 1 walk against the four paths
    k1 = pl.Kernel.simple(1)
    poly = pl.Polymer(k1, 0.8, w, seed=5)
    poly.advance_to(2)
    e = lambda t, x: math.exp(0.8 * w.site_weight(5, 0, t, [x]))
    z = 0.25 * (e(1, 1) * (e(2, 2) + e(2, 0)) + e(1, -1) * (e(2, 0) + e(2, -2)))
    assert abs(poly.log_partition() - math.log(z)) < 1e-12
    sites, probs = poly.histogram()
    assert abs(sum(probs) - 1.0) < 1e-12 and len(sites) == 3
    assert poly.endpoint()["n"] == 2

    report = pl.classify(w, k, 0.3, [0.0, 0.0, 0.0], return_terms=40)
    assert report["class"] == "L2_WEAK", report
    assert abs(pl.fractional_moment(w, k, 1.0, 1.0) - 1.0) < 1e-12

    est = pl.estimate_gpl(w, k1, 1.0, [0.0], 50, 4, 1)
    assert est["g_mean"] <= est["annealed"]

    summary = pl.run_config(json.dumps({"command": "classify", "beta": 0.3, "return_terms": 40}))
    assert summary["class"] == "L2_WEAK"

    try:
        pl.Weights.gaussian(0.0, -1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative stdev accepted")
    print("python smoke test: ok")


if __name__ == "__main__":
    main()
