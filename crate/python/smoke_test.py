"""Smoke test for the survkit_py extension module.

Build and run from the repository root:

    cargo build -p survkit-python --features extension-module --release
    cp target/release/libsurvkit_py.so python/survkit_py.so
    python3 python/smoke_test.py
"""

import json
import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import survkit_py as sk  # noqa: E402


def main():
    scenario = {
        "family": {"family": "weibull-ph", "beta": [1.0, -0.5], "shape": 1.5, "scale": 1.0},
        "censoring": {"kind": "exponential", "rate": 0.3},
        "n": 300,
        "seed": 7,
    }
    train, oracle = sk.simulate(json.dumps(scenario))
    test, _ = sk.simulate(json.dumps({**scenario, "seed": 8}))
    assert len(train) == 300 and train.dim == 2
    assert json.loads(oracle)["family"]["family"] == "weibull-ph"

    times, surv = sk.kaplan_meier_curve(train)
    assert all(a >= b for a, b in zip(surv, surv[1:])) and 0.0 <= surv[-1] <= 1.0

    model, losses = sk.fit(train, model="weibull", epochs=300)
    assert len(losses) == 300 and losses[-1] < losses[0]
    curve = model.predict([0.0, 0.0], times=[0.5, 1.0, 2.0])
    assert all(abs(s - math.exp(-h)) < 1e-12 for s, h in zip(curve["survival"], curve["cumhaz"]))

    ctd = sk.concordance_td(model, test)
    assert ctd > 0.65, ctd
    ibs = sk.integrated_brier_score(model, test, train, 0.1, 1.5)
    assert 0.0 < ibs < 0.25, ibs
    dcal = sk.d_calibration_test(model, test)
    assert abs(sum(dcal["proportions"]) - 1.0) < 1e-9

    clone = sk.Model.from_json(model.to_json())
    assert clone.survival([0.3, -0.2], 1.0) == model.survival([0.3, -0.2], 1.0)

    deephit, _ = sk.fit(train, json.dumps({"model": "deephit", "epochs": 20, "grid_size": 10}))
    out = deephit.predict([0.0, 0.0])
    assert len(out["time"]) == len(deephit.grid) and "pmf" in out

    rows, labels = sk.stack(sk.Dataset([[1, 2], [3, 4], [5, 6]], [1, 2, 3], [1, 0, 1]), [1.0, 3.0])
    assert rows == [[1, 2, 1, 0], [3, 4, 1, 0], [5, 6, 1, 0], [5, 6, 0, 1]] and labels == [1, 0, 0, 1]

    try:
        sk.fit(train, model="no-such-model")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown model accepted")

    print(f"smoke test passed: ctd={ctd:.3f} ibs={ibs:.3f} dcal_p={dcal['p_value']:.3f}")


if __name__ == "__main__":
    main()
