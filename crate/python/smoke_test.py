"""Smoke test for the urnld Python module.

Build and run from the repository root:

    cargo build --release -p urnld-py --features extension-module
    cp target/release/liburnld.so python/urnld.so
    python3 python/smoke_test.py
"""

import math

import urnld


def main():
    paper = urnld.Urn([[2, 4], [3, 6]])
    assert paper.is_valid
    eq = paper.equilibrium()
    assert abs(eq["y_star"] - 0.4) < 1e-10, eq
    assert abs(paper.drift(0.0) - 4.0) < 1e-12
    assert abs(paper.drift(1.0) + 3.0) < 1e-12

    atoms = paper.exact(1)
    assert [(k, z) for k, z, _ in atoms] == [(0, 5 / 12), (1, 3 / 7)], atoms
    assert all(p == 0.5 for _, _, p in atoms)

    states, steps = paper.simulate(200, seed=7)
    assert len(states) == 201 and len(steps) == 200
    again, _ = paper.simulate(200, seed=7)
    assert states == again

    golden = urnld.Urn([[4, 1], [5, 4]])
    y_star = golden.equilibrium()["y_star"]
    assert abs(y_star - (math.sqrt(5) - 1) / 4) < 1e-10
    tails = golden.mc_tails(y_star, [50, 100], [0.05], trials=2000, seed=1)
    assert [t["n"] for t in tails] == [50, 100]
    exact = golden.exact_tail(50, 0.05, y_star)
    assert abs(tails[0]["p_hat"] - exact) < 0.03, (tails[0], exact)

    fit = urnld.rate_fit([10, 20, 30, 40], [math.exp(-0.1 * n) for n in (10, 20, 30, 40)])
    assert abs(fit["a_hat"] - 0.1) < 1e-12

    try:
        urnld.Urn([[2, 3], [3, 2]])
    except urnld.UrnldError as e:
        assert "C2" in str(e)
    else:
        raise AssertionError("balanced matrix accepted")

    problem = urnld.SaProblem.from_urn(golden)
    assert problem.run(100, seed=3) == [s["z"] for s in golden.simulate(100, seed=3)[0]]
    audit = problem.audit(500, seed=3)
    assert audit["recursion_exact"], audit

    strong = urnld.SaProblem.tanh(2.0)
    print("regimes:", strong.predicted_regimes())
    print("ok")


if __name__ == "__main__":
    main()
