"""Smoke test for the wgflow_py extension.

Build and run from the repository root:

    cargo build --release -p wgflow-py --features extension-module
    cp target/release/libwgflow_py.so python/wgflow_py.so
    python3 python/smoke_test.py
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import wgflow_py as wg


def main():
    p = wg.gaussian([0.0], 1.0, 300, seed=1)
    q = wg.gaussian([0.5], 1.0, 300, seed=2)

    # p = N(0,1), q = N(0.5,1): the backward-KL field is -0.5 everywhere.
    queries = [[-0.5], [0.0], [0.5]]
    v = wg.velocity_field(p, q, queries)
    assert all(abs(row[0] + 0.5) < 0.4 for row in v), v

    nw = wg.nw_velocity(q, queries, [0.0], 1.0, 0.5)
    assert len(nw) == 3 and all(math.isfinite(r[0]) for r in nw)

    chosen, candidates, criterion = wg.select_bandwidth(p, q, folds=3)
    assert chosen in candidates and len(criterion) == len(candidates)

    q0 = wg.gaussian([-1.0], 0.25, 300, seed=3)
    particles, history = wg.flow(p, q0, iters=20, policy="median")
    assert len(particles) == 300
    assert history[-1][1] < history[0][1], history
    mean = sum(r[0] for r in particles) / len(particles)
    assert abs(mean) < 0.3, mean

    x = wg.s_shape(100, seed=4)
    holes = [list(r) for r in x]
    holes[0][0] = float("nan")
    holes[5][1] = float("nan")
    filled = wg.impute(holes, iters=5)
    assert math.isfinite(filled[0][0]) and math.isfinite(filled[5][1])
    assert filled[1] == x[1]

    try:
        wg.velocity_field([[0.0], [1.0, 2.0]], q, queries)
    except ValueError:
        pass
    else:
        raise AssertionError("ragged input accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
