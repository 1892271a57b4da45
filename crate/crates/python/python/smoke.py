"""Smoke test for the pykqr extension.

Build first with `cargo build --release -p kqr-python`, then run
`python3 crates/python/python/smoke.py` from the workspace root.
"""

import importlib.util
import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..", ".."))


def load():
    built = os.path.join(ROOT, "target", "release", "libpykqr.so")
    if not os.path.exists(built):
        sys.exit(f"extension not found at {built}; build it with cargo first")
    tmp = tempfile.mkdtemp()
    target = os.path.join(tmp, "pykqr.so")
    shutil.copy(built, target)
    spec = importlib.util.spec_from_file_location("pykqr", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    kqr = load()

    value, term = kqr.alpha_general(0.5, 1.0, 1.0, 1.0)
    assert abs(value - 1 / 3) < 1e-12 and term == 3
    assert len(kqr.table2()) == 27
    assert kqr.example1_series(1) == (1.5, 1.0 + 2 * math.sqrt(math.pi) / math.e**2)
    assert kqr.pinball(0.5, 1.0, 3.0) == 1.0

    g = kqr.KernelSpec.gaussian(0.5)
    add = kqr.KernelSpec.additive([1, 1], [g, kqr.KernelSpec.sobolev_min()])
    assert kqr.KernelSpec.from_json(add.to_json()).to_json() == add.to_json()
    assert abs(add.eval([0.1, 0.2], [0.1, 0.2]) - 2.2) < 1e-12

    xs = [[i / 20, (i * 7 % 20) / 20] for i in range(20)]
    ys = [math.sin(3 * x[0]) + x[1] ** 2 for x in xs]
    model = kqr.fit(add, xs, ys, 1e-2, 0.5)
    assert model.gap <= 1e-6
    preds = model.predict(xs)
    assert len(preds) == 20
    again = kqr.Model.from_json(model.to_json())
    assert again.predict(xs) == preds

    try:
        kqr.fit(g, [[0.0]], [1.0], -1.0, 0.5)
    except ValueError:
        pass
    else:
        raise AssertionError("negative lambda accepted")

    ok, rows = kqr.verify("example1")
    assert ok and rows[0][0] == "additive_norm"
    print("pykqr smoke test passed")


if __name__ == "__main__":
    main()
