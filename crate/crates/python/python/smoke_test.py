"""Smoke test for the pvcast extension module.

Build with `cargo build --release -p pvcast-python` and put the resulting
shared library on the path as `pvcast.so`, or install with maturin.
"""

import math
import tempfile
from pathlib import Path

import pvcast


def main():
    xs = [[i / 10.0, (i % 3) / 2.0] for i in range(40)]
    ys = [math.sin(x[0]) + 0.1 * x[1] for x in xs]

    knn = pvcast.KnnRegressor(k=5)
    knn.fit(xs, ys)
    qrf = pvcast.QuantileForest(n_trees=20, seed=1)
    qrf.fit(xs, ys)
    svr = pvcast.NuSvr()
    svr.fit(xs, ys)
    preds = [m.predict(xs) for m in (knn, qrf, svr)]
    assert all(len(p) == len(ys) for p in preds)
    assert qrf.predict_quantile(xs[0], 0.1) <= qrf.predict_quantile(xs[0], 0.9)
    assert svr.n_support > 0

    net = pvcast.BayesianNet(max_epochs=50, seed=3)
    net.fit([x[0] / 4 for x in xs], ys)
    assert 0.0 <= net.gamma_eff <= 10.0

    stacked = [list(row) for row in zip(*preds)]
    ens = pvcast.Ensemble.fit(stacked, ys, ["knn", "qrf", "svr"])
    assert ens.members == ["knn", "qrf", "svr"]
    assert len(ens.predict(stacked)) == len(ys)

    assert math.isclose(pvcast.nmae([0.5, 0.5], [0.4, 0.6]), 10.0)
    stamps = [f"2014-02-20T{h:02d}:00" for h in range(24)]
    report = pvcast.daily_weekly_report(
        stamps, [0.0] * 24, [("qrf", [0.0537] * 24)], ["2014-02-20"]
    )
    assert abs(report.weekly("qrf") - 5.37) < 1e-9

    checks = pvcast.oracle(seed=42)
    failed = [c["name"] for c in checks if not c["passed"]]
    assert not failed, failed

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        pvcast.write_synthetic(tmp, start="2013-03-01T00:00", hours=24 * 60)
        config = tmp / "run.toml"
        config.write_text(
            "\n".join(
                [
                    'output_dir = "out"',
                    "[split]",
                    'train_start = "2013-03-01T00:00"',
                    'train_end = "2013-04-01T00:00"',
                    'validation_start = "2013-04-01T00:00"',
                    'validation_end = "2013-04-20T00:00"',
                    'test_days = ["2013-04-22"]',
                    "[knn]",
                    "k = 20",
                    "[qrf]",
                    "n_trees = 20",
                ]
            )
        )
        pvcast.train(config)
        report = pvcast.evaluate(config, ["nn.max_epochs=30"])
        print(report)
        assert report.models == ["qrf", "knn", "svr", "ens"]
        assert (tmp / "out" / "predictions.csv").exists()

    print("smoke test passed")


if __name__ == "__main__":
    main()
