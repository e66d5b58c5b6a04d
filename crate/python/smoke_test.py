#!/usr/bin/env python3
"""Smoke test for the spotrank_py extension module.

Build the module first:

    cargo build -p spotrank-py --release

The script locates the built cdylib, exposes it as `spotrank_py`, and checks
a handful of known values plus a finite-difference probe of the loss
gradient.
"""

import math
import os
import shutil
import sys
import tempfile


def locate_module():
    here = os.path.dirname(os.path.abspath(__file__))
    root = os.path.dirname(here)
    candidates = [
        os.path.join(root, "target", profile, name)
        for profile in ("release", "debug")
        for name in ("libspotrank_py.so", "libspotrank_py.dylib", "spotrank_py.dll")
    ]
    for path in candidates:
        if os.path.exists(path):
            return path
    sys.exit("build the module first: cargo build -p spotrank-py --release")


def main():
    built = locate_module()
    staging = tempfile.mkdtemp(prefix="spotrank_py_")
    ext = ".so" if not built.endswith(".dll") else ".pyd"
    shutil.copy(built, os.path.join(staging, "spotrank_py" + ext))
    sys.path.insert(0, staging)
    import spotrank_py as sp

    # Edit distance.
    assert sp.levenshtein("kitten", "sitting") == 3
    assert sp.levenshtein("", "abcd") == 4

    # Relevance functions.
    table = sp.RelevanceSpec.evaluation_table()
    assert table.score("bank", "banks") == 15.0
    linear = sp.RelevanceSpec.graded_linear(4)
    assert linear.score("jones", "jones") == 4.0

    # Exact metrics: relevance-by-rank pattern [1, 0, 1].
    ctx = sp.QueryContext("w", ["w", "x", "w"])
    ap = sp.average_precision([0.9, 0.8, 0.1], ctx)
    assert abs(ap - 5.0 / 6.0) < 1e-12, ap

    ctx2 = sp.QueryContext("abc", ["abd", "wxyz"])
    nd = sp.ndcg([0.1, 0.9], ctx2, linear)
    assert abs(nd - 0.6309297535714574) < 1e-12, nd

    # Smooth objectives converge to the exact metrics as tau -> 0.
    scores = [0.40, 0.10, -0.30, 0.80, -0.6]
    gallery = ["w", "ww", "x", "w", "yyy"]
    ctx3 = sp.QueryContext("w", gallery)
    exact = sp.average_precision(scores, ctx3)
    smooth = sp.smooth_ap(scores, ctx3, 1e-4, linear)
    assert abs(exact - smooth) < 1e-3, (exact, smooth)

    # Loss gradient agrees with a central finite difference.
    sim = [scores, [0.2, -0.1, 0.6, 0.3, 0.0]]
    ctxs = [ctx3, sp.QueryContext("w", gallery)]
    value, grad = sp.loss_ap(sim, ctxs, 1.0, linear)
    assert 0.0 <= value <= 1.0
    h = 1e-6
    for q, i in [(0, 0), (0, 3), (1, 2)]:
        plus = [row[:] for row in sim]
        minus = [row[:] for row in sim]
        plus[q][i] += h
        minus[q][i] -= h
        numeric = (sp.loss_ap(plus, ctxs, 1.0, linear)[0]
                   - sp.loss_ap(minus, ctxs, 1.0, linear)[0]) / (2 * h)
        assert math.isclose(grad[q][i], numeric, rel_tol=1e-4, abs_tol=1e-9), (
            q, i, grad[q][i], numeric)

    # Dataset generation round-trips through a file.
    out = os.path.join(staging, "tiny.tsv")
    n = sp.generate_dataset_file(out, words=10, samples=4, seed=3)
    assert n == 40
    with open(out) as fh:
        assert len(fh.readlines()) == 40

    print("spotrank_py smoke test: ok")


if __name__ == "__main__":
    main()
