"""Smoke test for the Python bindings.

Build first with `cargo build -p choicegp-py` (or `--release`), then run
`python3 python/smoke_test.py`. The script copies the built shared library
into a temporary directory under the module's import name.
"""

import json
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_module():
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libchoicegp_py.so"
        if lib.exists():
            break
    else:
        sys.exit("libchoicegp_py.so not found; run `cargo build -p choicegp-py` first")
    tmp = Path(tempfile.mkdtemp())
    shutil.copy(lib, tmp / "choicegp_py.so")
    sys.path.insert(0, str(tmp))
    import choicegp_py

    return choicegp_py


def main():
    cg = load_module()

    chosen, rejected = cg.pareto_choice([[1.0, 0.0], [0.54, -0.84], [0.0, 1.0]])
    assert chosen == [0, 2] and rejected == [1], (chosen, rejected)

    try:
        cg.pareto_choice([[0.5, 0.5], [0.5, 0.5]])
    except ValueError:
        pass
    else:
        raise AssertionError("identical rows should raise")

    dataset, truth = cg.generate_example1(n_points=40, m_sets=25, set_size=3, seed=2)
    ds = json.loads(dataset)
    utilities = json.loads(truth)["utilities"]
    assert len(ds["features"]) == 40 and len(ds["observations"]) == 25

    # the true utilities explain every observation
    ll = cg.log_likelihood(dataset, utilities, 0.05)
    assert ll <= 0.0
    assert ll > cg.log_likelihood(dataset, [[0.0, 0.0]] * 40, 0.05)

    model, report = cg.fit(dataset, 2, iters=200, mc_samples=8, seed=1)
    assert json.loads(report)["iterations"] == 200
    again, _ = cg.fit(dataset, 2, iters=200, mc_samples=8, seed=1)
    assert model == again

    sets = [o["set"] for o in ds["observations"]]
    predicted = cg.predict(model, ds["features"], sets, n_samples=300, seed=4)
    assert len(predicted) == len(sets)
    for a, c in zip(sets, predicted):
        assert c and set(c) <= set(a)

    print("python smoke test passed")


if __name__ == "__main__":
    main()
