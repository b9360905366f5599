"""Smoke test for the Python bindings: python python/smoke_test.py (or pytest)."""

import math

import malab


def test_expression():
    assert malab.eval_expr("1 + 0.05*x", 2.0, 0.0) == 1.1
    try:
        malab.eval_expr("1+zz", 0.0, 0.0)
    except ValueError as e:
        assert "position 3" in str(e)
    else:
        raise AssertionError("unknown identifier accepted")


def test_solve_unit_disk():
    out = malab.solve("disk", "1", 65)
    assert abs(out["report"]["min_value"] + 0.5) < 1e-3
    rows = out["values"]
    assert len(rows) == len(rows[0]) == 65
    assert math.isnan(rows[0][0])


def test_chain_compounds():
    ch = malab.chain("1+0.05*x", (0.0, 0.0), 0.4, grid=65, k_max=3)
    assert ch["steps"][0]["m"] == 1.0
    m = ch["compounds"]
    assert all(b >= a for a, b in zip(m, m[1:]))


def test_bounds_and_verify():
    r = malab.bounds("holder:1,0.5", 1e-6)
    assert r["constants"]["h_c"] == 0.2 and r["hessian"] > 0
    assert malab.verify(6)["pass"]
    try:
        malab.solve("disk", "x", 65)
    except ValueError:
        pass
    else:
        raise AssertionError("nonpositive f accepted")


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_"):
            fn()
            print(f"{name} ok")
