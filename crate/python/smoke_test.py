"""Smoke test for the `onebit` Python module.

Build and install the extension first, e.g.

    pip install maturin
    maturin develop --release -m crates/python/Cargo.toml

then run `python python/smoke_test.py` (or `pytest python/smoke_test.py`).
"""

import math

import onebit


def test_least_squares_theory():
    cell = onebit.theory("ls", 2.0, 0.0)
    assert cell["status"] == "ok"
    assert abs(cell["mu"] - math.sqrt(2 / math.pi)) < 1e-6
    assert abs(cell["corr"] - 0.79788) < 1e-4


def test_unbounded_cell_is_a_status():
    assert onebit.theory("hinge", 5.0, 0.0)["status"] == "unbounded"


def test_invalid_arguments_raise():
    for call in (
        lambda: onebit.theory("ls", 1.0, 0.0),
        lambda: onebit.theory("nope", 2.0, 0.0),
        lambda: onebit.bound(2.0, 0.6),
    ):
        try:
            call()
        except ValueError:
            continue
        raise AssertionError("expected ValueError")


def test_bound_and_threshold():
    b = onebit.bound(2.0, 0.5)
    assert abs(b["corr_upper"] - math.sqrt(0.5)) < 1e-4
    assert b["analytic_corr_upper"] is None
    assert onebit.bound(4.0, 0.0)["analytic_corr_upper"] > 0.0
    assert math.isinf(onebit.threshold(0.0))
    assert abs(onebit.threshold(0.5) - 2.0) < 1e-3
    assert onebit.threshold(0.1) > onebit.threshold(0.25)


def test_theory_below_bound():
    for loss in ("ls", "lad"):
        corr = onebit.theory(loss, 4.0, 0.1)["corr"]
        assert corr <= onebit.bound(4.0, 0.1)["corr_upper"] + 1e-3


def test_simulate_is_reproducible():
    a = onebit.simulate("ls", 32, 4.0, 0.0, trials=5, seed=3)
    b = onebit.simulate("ls", 32, 4.0, 0.0, trials=5, seed=3)
    assert a == b
    assert a["converged"] == 5 and len(a["correlations"]) == 5
    assert 0.5 < a["mean_corr"] < 1.0


def test_prox_and_envelope():
    assert onebit.prox("lad", 3.0, 1.0) == 2.0
    value, dx, dlam, p = onebit.envelope("ls", 2.0, 0.5)
    assert p == onebit.prox("ls", 2.0, 0.5)
    h = 1e-6
    fd = (onebit.envelope("ls", 2.0 + h, 0.5)[0] - onebit.envelope("ls", 2.0 - h, 0.5)[0]) / (2 * h)
    assert abs(dx - fd) < 1e-5
    assert abs(dlam + 0.5 * dx * dx) < 1e-12


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"{name}: ok")
    print("onebit", onebit.__version__, "smoke test passed")
