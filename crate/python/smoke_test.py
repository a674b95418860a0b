"""Quick end-to-end check of the Python bindings.

Build first, for example with
    pip install --no-build-isolation ./crates/python
then run
    python python/smoke_test.py
"""

import json
import math
import random

import pycoopkernel as ck


def check_kernels():
    rbf = ck.Kernel.rbf(0.5)
    assert rbf([0.0, 0.0], [0.0, 0.0]) == 1.0
    assert abs(rbf([1.0, 0.0], [0.0, 0.0]) - math.exp(-2.0)) < 1e-12
    assert ck.Kernel("matern:1.0:1.5")([0.3], [0.3]) == 1.0
    assert ck.Kernel.linear()([1.0, 2.0], [3.0, 4.0]) == 11.0


def check_regression():
    rng = random.Random(0)
    lin = ck.Kernel.linear()
    primal = ck.KernelRegression(lin, lin, lam=0.5)
    dual = ck.KernelRegression(lin, lin, lam=0.5, backend="dual")
    assert primal.is_primal and not dual.is_primal
    for _ in range(30):
        x = [rng.uniform(-1, 1) for _ in range(3)]
        y = x[0] - x[2]
        primal.incorporate(0, [1.0], x, y)
        dual.incorporate(0, [1.0], x, y)
    q = [0.2, -0.1, 0.4]
    (m1, v1), (m2, v2) = primal.predict(0, [1.0], q), dual.predict(0, [1.0], q)
    assert abs(m1 - m2) < 1e-9 and abs(v1 - v2) < 1e-9
    assert abs(primal.log_det() - dual.log_det()) < 1e-8
    assert len(primal) == 30


def check_graph():
    g = ck.Graph.path(5)
    assert g.diameter() == 4
    assert g.distances()[0][4] == 4
    assert len(g.clique_cover(4)) == 1
    er = ck.Graph.erdos_renyi(12, 0.3, seed=2)
    assert er.vertex_count == 12


def check_experiment():
    out = ck.run_experiment(
        {"graph": "complete", "V": 4, "T": 20, "trials": 2, "policies": "coop,independent", "dim": 3, "arms": 4}
    )
    assert out["policies"] == ["coop", "independent"]
    assert out["rounds"] == 20
    assert len(out["mean"]["coop"]) == 20
    assert out["csv"].startswith("round,policy,")
    assert json.loads(out["metrics"])["vertices"] == 4
    assert "lambda" in ck.config_keys()


if __name__ == "__main__":
    check_kernels()
    check_regression()
    check_graph()
    check_experiment()
    print("python smoke test ok")
