#!/usr/bin/env python3
"""Smoke test for the dgmphd_py extension module.

Builds nothing itself: run `cargo build -p dgmphd-py` first, then this
script. It locates the compiled cdylib under target/, stages it under an
importable name and exercises every exported class and function against
hand-computed values.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parents[1]


def stage_module() -> Path:
    candidates = [
        REPO / "target" / profile / name
        for profile in ("release", "debug")
        for name in ("libdgmphd_py.so", "libdgmphd_py.dylib", "dgmphd_py.dll")
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit("no compiled extension found; run `cargo build -p dgmphd-py` first")
    stage = Path(tempfile.mkdtemp(prefix="dgmphd_py_"))
    target = stage / ("dgmphd_py" + (".pyd" if built.suffix == ".dll" else ".so"))
    shutil.copy2(built, target)
    return stage


sys.path.insert(0, str(stage_module()))
import dgmphd_py as dg  # noqa: E402


def close(a, b, tol=1e-9):
    assert abs(a - b) <= tol * max(1.0, abs(a), abs(b)), f"{a} != {b}"


# Component round-trip.
c = dg.Component(0.8, [1.0, 2.0], [[4.0, 0.0], [0.0, 9.0]])
assert c.weight == 0.8
assert c.mean == [1.0, 2.0]
assert c.covariance == [[4.0, 0.0], [0.0, 9.0]]
assert c.dim == 2

# Moment-preserving merge: weights 3 and 1 at means 0 and 2 give mean 0.5;
# the merged covariance mixes each covariance plus its mean offset.
a = dg.Component(3.0, [0.0], [[1.0]])
b = dg.Component(1.0, [2.0], [[1.0]])
m = dg.smr_merge([a, b])
close(m.weight, 4.0)
close(m.mean[0], 0.5)
close(m.covariance[0][0], (3.0 * (1.0 + 0.25) + 1.0 * (1.0 + 2.25)) / 4.0)
o = dg.omr_merge([a, b])
close(o.weight, 4.0)
close(o.mean[0], 0.5)
close(o.covariance[0][0], 1.25)  # smaller spread-adjusted candidate
assert o.covariance[0][0] < m.covariance[0][0]

close(dg.mahalanobis_sq(dg.Component(1.0, [0.0], [[4.0]]), dg.Component(1.0, [2.0], [[4.0]])), 1.0)
close(dg.gaussian_density([0.0], [0.0], [[1.0]]), 1.0 / math.sqrt(2.0 * math.pi))
close(dg.gate_threshold(0.99, 2), math.sqrt(9.21034037), tol=1e-6)
close(dg.wrap_angle(3.5 * math.pi), -0.5 * math.pi, tol=1e-12)
assert dg.tuples_per_component(4) == 15
assert dg.tuples_per_component(2) == 6

# Reduction prunes the light component and merges the near pair.
mix = dg.Mixture(
    1,
    [
        dg.Component(0.5, [0.0], [[1.0]]),
        dg.Component(0.4, [0.1], [[1.0]]),
        dg.Component(0.005, [50.0], [[1.0]]),
    ],
)
red = dg.reduce_mixture(mix, 0.01, 4.0, 10, "smr")
assert len(red) == 1
close(red.weight_sum(), 0.9)

# Selection: rounded weight sum picks the two heaviest; a threshold picks
# by weight; a fixed count overrides.
mix3 = dg.Mixture(
    2,
    [
        dg.Component(0.9, [0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]),
        dg.Component(0.3, [5.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]),
        dg.Component(0.8, [0.0, 5.0], [[1.0, 0.0], [0.0, 1.0]]),
    ],
)
sel, rem, idx = dg.select_tgm(mix3)
assert idx == [0, 2] and len(sel) == 2 and len(rem) == 1
sel, rem, idx = dg.select_tgm(mix3, min_weight=0.5)
assert idx == [0, 2]
sel, rem, idx = dg.select_tgm(mix3, fixed=1)
assert idx == [0]

pairs, total, unrows, uncols = dg.assignment([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
close(total, 5.0)
assert sorted(pairs) == [(0, 1), (1, 0), (2, 2)]
assert unrows == [] and uncols == []

close(dg.ospa([[0.0, 0.0]], [[3.0, 4.0]], 10.0, 2.0), 5.0)
close(dg.ospa([], [[1.0, 1.0]], 10.0, 2.0), 10.0)

# Metropolis weights on a three-node path: the middle node splits evenly.
w1 = dg.metropolis_weights(3, [(0, 1), (1, 2)], 1)
close(w1[0], 1.0 / 3.0)
close(w1[2], 1.0 / 3.0)
close(w1[1], 1.0 / 3.0)
w0 = dg.metropolis_weights(3, [(0, 1), (1, 2)], 0)
close(w0[1], 1.0 / 3.0)
close(w0[0], 2.0 / 3.0)

close(dg.cardinality_consensus(0, 3.0, {1: 1.0}, {0: 0.5, 1: 0.5}), 2.0)

# Pooling fusion keeps both pooled components (the merge gate is tight),
# then rescales the pool to the averaged count.
local = dg.Mixture(1, [dg.Component(1.0, [0.0], [[1.0]])])
remote = dg.Mixture(1, [dg.Component(1.0, [2.0], [[1.0]])])
fused, count, pooled = dg.fuse_cgmm(0, local, [(1, remote, 1.0)], {0: 0.5, 1: 0.5}, 1e-6, 0.1, 10, "smr")
close(pooled, 2.0)
close(count, 1.0)
assert len(fused) == 2
close(fused.weight_sum(), 1.0)

# Assignment fusion never changes the host mixture size and lands the
# fused mean between the two sources.
host = dg.Mixture(1, [dg.Component(0.7, [0.0], [[1.0]])])
msg = dg.Mixture(1, [dg.Component(0.4, [1.0], [[1.0]])])
fused, count = dg.fuse_cgma(0, host, [0], [(1, msg, 0.4)], {0: 0.5, 1: 0.5}, 5.0)
assert len(fused) == 1
close(count, 0.55)
close(fused.weight_sum(), count)
assert 0.0 < fused.components()[0].mean[0] < 1.0

# Geometric fusion of a mixture with itself reproduces it.
same = dg.Mixture(1, [dg.Component(1.0, [0.5], [[2.0]])])
fused = dg.fuse_gci(0, same, [(1, same)], {0: 0.5, 1: 0.5}, 0.005, 1e-6, 4.0, 10, "smr")
assert len(fused) == 1
close(fused.components()[0].mean[0], 0.5)
close(fused.components()[0].covariance[0][0], 2.0)
close(fused.weight_sum(), 1.0)

# Extraction reports means of components heavier than a half.
post = dg.Mixture(2, [dg.Component(0.6, [1.0, 2.0], [[1.0, 0.0], [0.0, 1.0]]),
                      dg.Component(0.3, [9.0, 9.0], [[1.0, 0.0], [0.0, 1.0]])])
card, rounded, states = post.extract()
close(card, 0.9)
assert rounded == 1
assert states == [[1.0, 2.0]]

scaled = post.scaled(2.0)
close(scaled.weight_sum(), 1.8)
assert dg.Mixture.empty(4).weight_sum() == 0.0

print("smoke test passed:", dg.__name__, "exports",
      len([n for n in dir(dg) if not n.startswith("_")]), "public names")
