"""Quick end-to-end check of the Python bindings on a small network.

Build the extension first (see README), then run:

    PYTHONPATH=python python3 python/smoke_test.py
"""

import math
import tempfile
from pathlib import Path

import sigsurr_py as ss

NET = "rows = 2\ncols = 3\nsegment_cells = 10\n"
SIM = "horizon_s = 600\nwarmup_s = 120\n"


def main():
    net = ss.Network(NET, SIM)
    n = net.n_intersections
    assert n == 6

    s = ss.random_setting(n, 3)
    r = net.simulate(s)
    assert r["total_red_wait_s"] == net.simulate(s)["total_red_wait_s"]
    assert net.simulate_batch([s, s]) == [r["total_red_wait_s"]] * 2

    enc = ss.encode(s)
    assert len(enc) == 2 * n
    assert all(abs(c * c + si * si - 1) < 1e-9 for c, si in zip(enc[::2], enc[1::2]))

    data = net.dataset(400, seed=5)
    train, test = data[:320], data[320:]
    gbt = ss.Model.train('family = "gbt"\nnum_trees = 60\nnum_leaves = 15\nmin_samples_leaf = 5\n', train)
    nn = ss.Model.train('family = "nn"\nlayer_widths = [16]\nepochs = 30\n', train)
    for m in (gbt, nn):
        err = m.test_error(test)
        print(f"{m.label:16} test MARE {100 * err:.2f}%")
        assert math.isfinite(err)

    ens = ss.Model.ensemble([gbt, nn])
    assert ens.family == "ensemble"

    run = ss.optimize(gbt, iterations=20, population=30, seed=1)
    assert run.is_elitist_monotone()
    curve = run.best_curve()
    assert len(curve) == 20 and curve[-1] == run.best_fitness
    summary = run.optima_errors(net, gbt)
    print(f"optima MARE {100 * summary['mean_abs_rel']:.2f}%, frac_under {summary['frac_under']:.2f}")

    oracle_run = ss.optimize_oracle(net, iterations=5, population=10, seed=2)
    assert oracle_run.fitness_id == "oracle"

    p = ss.pca([list(map(float, x)) for x in run.trajectory()], 2)
    assert len(p["components"]) == 2

    with tempfile.TemporaryDirectory() as d:
        gbt.save(Path(d) / "gbt.json")
        again = ss.Model.load(Path(d) / "gbt.json")
        assert again.predict(s) == gbt.predict(s)
        run.save(Path(d) / "run.jsonl")
        assert ss.GaRun.load(Path(d) / "run.jsonl").best == run.best

    try:
        net.simulate([0] * (n + 1))
    except ValueError as e:
        print("rejected wrong length:", e)
    else:
        raise AssertionError("expected ValueError")

    print("python smoke test ok")


if __name__ == "__main__":
    main()
