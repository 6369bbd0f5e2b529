"""Smoke test for the pathmfc Python extension.

Build and install it first, e.g. `pip install crates/py` (maturin backend),
then run `python python/smoke_test.py`.
"""

import math
import tempfile

import pathmfc


def check_ou_variance():
    model = pathmfc.Model("ou", steps=1000, params={"lambda": 1.0, "s0": 0.5})
    e = pathmfc.simulate(model, {"kind": "constant", "value": [0.0]}, particles=4000, seed=1)
    x = e.marginal(model.steps)
    n = len(x)
    m = sum(x) / n
    var = sum((v - m) ** 2 for v in x) / (n - 1)
    exact = 0.25 * (1 - math.exp(-2)) / 2
    assert abs(var - exact) < 0.01, (var, exact)
    assert len(e.mean_path()) == model.steps + 1
    assert e.diagnostics()["s2_norm"] > 0


def check_frozen_paths():
    model = pathmfc.Model("frozen", steps=10, params={"dim": 2})
    e = pathmfc.simulate(model, {"kind": "constant", "value": [1.0, -2.0]}, particles=3, seed=0)
    for path in e.paths():
        assert all(node == [1.0, -2.0] for node in path)


def check_yosida_ladder():
    model = pathmfc.Model("ou", steps=200, params={"lambda": 1.0, "s0": 0.5})
    init = {"kind": "constant", "value": [1.0]}
    exact = pathmfc.simulate(model, init, particles=500, seed=3)
    d = [pathmfc.simulate_yosida(model, n, init, particles=500, seed=3).s2_distance(exact) for n in (2.0, 8.0, 32.0)]
    assert d[0] > d[1] > d[2], d


def check_wasserstein():
    a = pathmfc.PathMeasure([[[0.0], [0.0]], [[1.0], [1.0]]])
    b = pathmfc.PathMeasure([[[0.0], [1.0]], [[1.0], [2.0]]])
    assert a.wasserstein2(a) == 0.0
    assert abs(a.wasserstein2(b) - 1.0) < 1e-12
    assert a.wasserstein2(b, mode="sliced", projections=64, seed=1) > 0
    assert a.mean_at(1.0) == [0.5]


def check_measure_derivative():
    mu = pathmfc.PathMeasure([[[0.5, 0.0], [1.0, 2.0]], [[-1.0, 1.0], [0.0, 0.5]]], weights=[0.25, 0.75])
    assert "quadratic_diagonal" in pathmfc.functionals(2)
    field = pathmfc.measure_derivative("quadratic_diagonal", 1.0, mu, richardson=True)
    expected = [[2.0, 8.0], [0.0, 2.0]]
    for got, want in zip(field, expected):
        assert all(abs(g - w) < 1e-5 for g, w in zip(got, want)), field


def check_value_and_dpp():
    model = pathmfc.Model("quadratic", steps=50)
    init = {"kind": "gaussian", "mean": [0.5], "std": 0.5}
    v = pathmfc.value(model, init, particles=1000, seed=4)
    assert v["value"]["mean"] < 0
    r = pathmfc.dpp(model, init, 0.5, particles=500, seed=4)
    assert abs(r["gap"]) <= 3 * r["stderr"] + 1e-12, r
    policies = [
        {"tag": "zero", "kind": {"kind": "constant", "u": [0.0]}},
        {"tag": "up", "kind": {"kind": "constant", "u": [1.0]}},
    ]
    cm = pathmfc.Model("controlled_linear", steps=20)
    best = pathmfc.value(cm, {"kind": "constant", "value": [0.0]}, particles=10, seed=1, policies=policies)
    assert best["best"] == 1


def check_ito():
    model = pathmfc.Model("ou", steps=200)
    reports = pathmfc.ito_check(["linear", "mean_square"], model, {"kind": "gaussian", "mean": [1.0], "std": 0.3}, 1000, 5)
    assert all(r["pass"] for r in reports), reports


def check_investment():
    s = pathmfc.investment_hamiltonian([1.0], 0.0, 0.0, [0.0], [1.0], [1.0], [-1.0], [1.0])
    assert abs(s["u_star"][0] - 0.5) < 1e-15 and abs(s["value"] - 0.25) < 1e-15


def check_errors():
    try:
        pathmfc.Model("no_such_model")
    except pathmfc.PathmfcError:
        pass
    else:
        raise AssertionError("unknown model accepted")
    blow = pathmfc.Model("linear_growth", steps=100, params={"kappa": 1e10})
    try:
        pathmfc.simulate(blow, {"kind": "constant", "value": [1.0]}, particles=2, seed=0)
    except pathmfc.PathmfcError as e:
        assert "blow-up" in str(e)
    else:
        raise AssertionError("blow-up not reported")


def check_run():
    with tempfile.TemporaryDirectory() as out:
        report = pathmfc.run("hamiltonian-forms", out)
        assert report["pass"], report


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("check_"):
            fn()
            print(f"{name[6:]:<22} ok")
    print(f"pathmfc {pathmfc.__version__}: all smoke checks passed")
