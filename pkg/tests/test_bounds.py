import math

import pytest

from subspace_mtl.bounds import (BoundInputs, certify, kl, kl_inv, mtl_fast_bound, mtl_slow_bound,
                                 pinsker_bound, single_task_bound, single_task_kl_bound,
                                 single_task_summary, transfer_bound)
from subspace_mtl.linalg import make_rng


def test_kl_known_values():
    assert kl(0.5, 0.5) == 0
    assert kl(0.0, 0.5) == pytest.approx(math.log(2))
    assert kl(1.0, 0.5) == pytest.approx(math.log(2))
    assert kl(0.1, 0.3) == pytest.approx(0.1 * math.log(1 / 3) + 0.9 * math.log(0.9 / 0.7))
    assert kl(0.2, 0.0) == math.inf and kl(0.2, 1.0) == math.inf
    with pytest.raises(ValueError):
        kl(1.2, 0.5)


def test_kl_inv_consistency_sweep():
    rng = make_rng(0)
    for _ in range(1000):
        q = float(rng.uniform(0, 0.99))
        b = float(rng.uniform(0, 2))
        p = kl_inv(q, b)
        assert q <= p <= 1
        if p < 1 - 1e-9:
            assert abs(kl(q, p) - b) <= 1e-7
        assert kl_inv(q, 0.0) == q


def test_kl_inv_edges():
    assert kl_inv(0.0, 1.0) == pytest.approx(1 - math.exp(-1))
    assert kl_inv(1.0, 0.3) == 1.0
    assert kl_inv(0.2, math.inf) == 1.0
    with pytest.raises(ValueError):
        kl_inv(0.2, -1)


def test_single_task_bounds_by_hand():
    m, delta, risk, bits = 1000, 0.05, 0.1, 200
    slow = risk + math.sqrt((bits * math.log(2) + math.log(1 / delta)) / (2 * m))
    assert single_task_bound(m, delta, risk, bits) == pytest.approx(slow)
    budget = (bits * math.log(2) + math.log(2 * math.sqrt(m) / delta)) / m
    assert kl(risk, single_task_kl_bound(m, delta, risk, bits)) == pytest.approx(budget, abs=1e-9)
    assert transfer_bound(m, delta, risk, bits) == single_task_kl_bound(m, delta, risk, bits)
    assert transfer_bound(m, delta, risk, bits, kind="slow") == single_task_bound(m, delta, risk, bits)


def test_mtl_bounds_by_hand():
    inp = BoundInputs(n=30, m=2000, delta=0.05, emp_risk=0.1, bits_meta=2000, bits_multitask=500)
    mn = 60000
    slow = 0.1 + math.sqrt((2500 * math.log(2) + math.log(20)) / (2 * mn))
    assert mtl_slow_bound(inp) == pytest.approx(slow)
    budget = (2500 * math.log(2) + math.log(2 * math.sqrt(mn) / 0.05)) / mn
    assert kl(0.1, mtl_fast_bound(inp)) == pytest.approx(budget, abs=1e-9)
    assert pinsker_bound(inp) == pytest.approx(0.1 + math.sqrt(budget / 2))
    cert = certify(inp).to_dict()
    assert cert["bits_per_task"] == pytest.approx(2500 / 30)
    assert cert["non_vacuous"] == {"slow": True, "fast": True, "pinsker": True}


def test_fast_below_pinsker_random():
    rng = make_rng(1)
    for _ in range(1000):
        inp = BoundInputs(n=int(rng.integers(1, 200)), m=int(rng.integers(1, 5000)),
                          delta=float(rng.uniform(0.001, 1)), emp_risk=float(rng.uniform(0, 1)),
                          bits_meta=int(rng.integers(0, 50000)), bits_multitask=int(rng.integers(0, 50000)))
        assert mtl_fast_bound(inp) <= pinsker_bound(inp) + 1e-12


def test_monotone_in_bits_risk_and_samples():
    base = dict(n=10, m=500, delta=0.05, emp_risk=0.2, bits_meta=1000, bits_multitask=300)
    for fn in (mtl_slow_bound, mtl_fast_bound, pinsker_bound):
        b0 = fn(BoundInputs(**base))
        assert fn(BoundInputs(**{**base, "bits_meta": 2000})) >= b0
        assert fn(BoundInputs(**{**base, "emp_risk": 0.3})) >= b0
        assert fn(BoundInputs(**{**base, "m": 1000})) <= b0
        assert fn(BoundInputs(**{**base, "delta": 0.01})) >= b0


def test_bounds_clip_at_one():
    inp = BoundInputs(n=1, m=10, delta=0.05, emp_risk=0.5, bits_meta=10**6, bits_multitask=0)
    assert mtl_slow_bound(inp) == 1.0 and pinsker_bound(inp) == 1.0
    assert mtl_fast_bound(inp) > 1 - 1e-12


def test_input_validation():
    with pytest.raises(ValueError):
        BoundInputs(n=1, m=10, delta=0.0, emp_risk=0.1, bits_meta=1, bits_multitask=1)
    with pytest.raises(ValueError):
        BoundInputs(n=1, m=10, delta=0.1, emp_risk=1.1, bits_meta=1, bits_multitask=1)
    with pytest.raises(ValueError):
        BoundInputs(n=0, m=10, delta=0.1, emp_risk=0.1, bits_meta=1, bits_multitask=1)
    with pytest.raises(KeyError):
        BoundInputs.from_dict({"n": 1, "m": 2})


def test_single_task_summary_union_is_looser():
    per_task = [(500, 0.1, 300), (500, 0.2, 250), (400, 0.15, 280)]
    s = single_task_summary(per_task, 0.05)
    assert s["avg_kl"] == pytest.approx(sum(single_task_kl_bound(m, 0.05, r, b) for m, r, b in per_task) / 3)
    assert s["union_kl"] > s["avg_kl"] and s["union_slow"] > s["avg_slow"]
    assert s["avg_bits"] == pytest.approx(830 / 3)
