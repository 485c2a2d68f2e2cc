#!/usr/bin/env python3
"""Smoke test for the spectrum_mdl_py extension module.

Builds the cdylib with cargo (unless SPECTRUM_MDL_SKIP_BUILD is set), stages
it under an importable name, and exercises the bound surface end to end:
truncation, patterns, the census/dominant-ratio statistics, quantization
grids, a tiny training run with model IO, entropy/mutual information,
essence bounds, and a miniature pipeline run.

Usage: python3 python/smoke_test.py
"""

import math
import os
import shutil
import subprocess
import sys
import tempfile

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def build_and_import():
    if not os.environ.get("SPECTRUM_MDL_SKIP_BUILD"):
        subprocess.run(
            ["cargo", "build", "--release", "-p", "spectrum-mdl-py"],
            cwd=REPO,
            check=True,
        )
    src = os.path.join(REPO, "target", "release", "libspectrum_mdl_py.so")
    if not os.path.exists(src):  # macOS fallback
        src = os.path.join(REPO, "target", "release", "libspectrum_mdl_py.dylib")
    stage = tempfile.mkdtemp(prefix="spectrum_mdl_py_")
    shutil.copy(src, os.path.join(stage, "spectrum_mdl_py.so"))
    sys.path.insert(0, stage)
    import spectrum_mdl_py

    return spectrum_mdl_py


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def main():
    m = build_and_import()
    checks = 0

    def ok(label):
        nonlocal checks
        checks += 1
        print(f"ok {checks:2d} - {label}")

    # truncation and patterns
    params = m.SpectrumParams(0.2, 1.0, 4)
    z = m.truncate([0.1, 0.5, 1.5, 0.2], params)
    assert z.values() == [0.0, 0.5, 1.0, 0.2]
    assert z.pattern() == [2, 3, 4]
    assert not z.is_dormant()
    assert m.truncate([0.0, -1.0, 0.19, 0.1], params).is_dormant()
    ok("truncation and spiking patterns")

    # census + dominant ratio on the two-pattern worked example
    census = m.PatternCensus.from_counts([([2, 3], 5000), ([2, 9], 5000)])
    assert census.total == 10_000 and census.distinct == 2
    n0, delta, p_at, p_below = m.dominant_ratio(census, 0.99)
    assert n0 == 8 and delta == 1250.0, (n0, delta)
    assert p_at >= 0.99 > p_below
    assert m.prob_all_observed(census, 8) >= 0.99
    assert m.prob_all_observed(census, 7) < 0.99
    ok("dominant ratio reproduces N0=8, delta=1250")

    # quantization grid: exact counts, midpoint scales, tie-low rule
    gparams = m.SpectrumParams(0.25, 1.25, 2)
    grid = m.QuantGrid([1], [0.3], gparams)
    assert grid.counts() == [2]
    scales = grid.scales(0)
    approx(scales[0], 0.5)
    approx(scales[1], 1.0)
    zq = grid.quantize(m.Spectrum([0.75, 0.0], gparams))
    approx(zq.values()[0], 0.5)  # exact tie snaps low
    ok("quantization grid and tie-low rule")

    # reconstruction error
    approx(m.reconstruction_error([0.0, 0.0], [3.0, 4.0]), 5.0)
    ok("euclidean reconstruction error")

    # tiny training run: error improves, model round-trips through disk
    data = m.gen_two_circles(200, seed=3)
    assert all(
        min(
            math.dist(p, (2.0, 2.0)),
            math.dist(p, (5.0, 2.0)),
        )
        <= 1.2 + 1e-12
        for p in data
    )
    vae = m.SpectrumVae.seeded(
        m.SpectrumParams(0.2, 1.0, 4), 2, [10], [10], seed=5
    )
    trained = vae.train(data, seed=6, epochs=25)
    before = sum(
        m.reconstruction_error(x, vae.reconstruct(x)) for x in data
    ) / len(data)
    after = sum(
        m.reconstruction_error(x, trained.reconstruct(x)) for x in data
    ) / len(data)
    assert after < before, (before, after)
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "model.txt")
        trained.save(path)
        loaded = m.SpectrumVae.load(path)
        x = data[0]
        assert loaded.encode(x).values() == trained.encode(x).values()
    ok("training improves error; model document round-trips")

    # gradient check on a probe clear of the truncation breakpoints
    rel = None
    for probe_seed in range(40):
        probe_vae = m.SpectrumVae.seeded(
            m.SpectrumParams(0.2, 1.0, 3), 2, [5], [5], seed=probe_seed
        )
        try:
            rel = probe_vae.gradient_check([0.4, -0.3], 1e-5)
            break
        except ValueError:
            continue
    assert rel is not None and rel <= 1e-4, rel
    ok("analytic gradients match finite differences")

    # entropy and mutual information
    bits, clamped = m.discrete_entropy([0.1, 0.35, 0.6, 0.85], 0.0, 1.0, 4)
    approx(bits, 2.0)
    assert clamped == 0
    per_dim, total = m.mutual_information(data, data, [(0.8, 6.2), (0.8, 3.2)], 16)
    for h_orig, _, mi in per_dim:
        approx(mi, h_orig)
    assert total > 0
    ok("entropy and mutual information")

    # essence interval on the unit interval
    lower, upper, cover = m.essence_bounds_box([0.0], [1.0], 0.25, 0.0625, 0)
    assert (lower, upper) == (2, 2)
    assert sorted(c[0] for c in cover) == [0.25, 0.75]
    ok("essence bounds on the unit interval")

    # miniature pipeline run via the TOML config surface
    cfg = m.demo_config()
    cfg = cfg.replace("n_train = 2000", "n_train = 150")
    cfg = cfg.replace("n_holdout = 1000", "n_holdout = 60")
    cfg = cfg.replace("epochs = 600", "epochs = 30")
    cfg = cfg.replace("gamma1 = 1000.0", "gamma1 = 50.0")
    cfg = cfg.replace("u = 1.0", "u = 3.0")
    cfg = cfg.replace("gamma2 = 2.0", "gamma2 = 1.0")
    with tempfile.TemporaryDirectory() as d:
        manifest = m.run_pipeline(cfg, d)
        assert os.path.exists(os.path.join(d, "manifest.toml"))
        assert os.path.exists(os.path.join(d, "scatter.svg"))
        assert "compatible = true" in manifest
        assert "holds = true" in manifest
    ok("pipeline run from Python")

    print(f"smoke test passed ({checks} checks)")


if __name__ == "__main__":
    main()
