"""Smoke test for the Python extension.

Build and install first, e.g. `pip install maturin && maturin develop -m
crates/python/Cargo.toml`, then run `python python/smoke_test.py`.
"""

import math

import dyndml_py as dd


def main() -> None:
    data = dd.simulate(n=1500, p=10, seed=3)
    assert len(data["y2"]) == 1500 and len(data["x0"][0]) == 10

    cols = (data["y2"], data["d1"], data["d2"], data["x0"], data["x1"])
    ate = dd.estimate(*cols, arm_a=(1, 1), arm_b=(0, 0), seed=1)
    assert ate["ci_low"] <= ate["estimate"] <= ate["ci_high"]
    assert abs(ate["estimate"] - 2.0) < 0.6, ate

    s = [d == 1 for d in data["d1"]]
    sub = dd.estimate(*cols, subgroup=s)
    assert sub["kind"] == "weighted_ate", sub

    t = [i % 2 == 0 for i in range(1500)]
    pl = dd.placebo(*cols, t=t)
    assert math.isfinite(pl["estimate"]) and pl["se"] > 0

    rows = dd.monte_carlo(p=5, n=400, reps=3, oracle=True)
    assert {r["estimator"] for r in rows} == {"ate", "weighted_ate"}
    for r in rows:
        assert abs(r["rmse"] ** 2 - (r["bias"] ** 2 + r["sd"] ** 2)) < 1e-9

    audit = dd.audit(*cols)
    assert 0.0 <= audit["pseudo_r2_d1"] <= 1.0

    try:
        dd.estimate(*cols, arm_a=(1, 1), arm_b=(1, 0))
    except ValueError as e:
        assert "invalid_contrast" in str(e)
    else:
        raise AssertionError("same first-period contrast accepted")

    print(f"ok: ate {ate['estimate']:.3f} (se {ate['se']:.3f}), version {dd.__version__}")


if __name__ == "__main__":
    main()
