"""Encoding-length generalisation bounds for single-task and multi-task learning.

All functions take natural logarithms; bit counts are converted with ``ln 2``.
Results are clipped at 1, above which a risk bound says nothing.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

LN2 = math.log(2.0)


def kl(q: float, p: float) -> float:
    """Bernoulli KL divergence ``kl(q | p)`` with ``0 log 0 = 0``."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    out = 0.0
    if q > 0.0:
        if p == 0.0:
            return math.inf
        out += q * math.log(q / p)
    if q < 1.0:
        if p == 1.0:
            return math.inf
        out += (1.0 - q) * math.log((1.0 - q) / (1.0 - p))
    return max(out, 0.0)


def kl_inv(q: float, b: float) -> float:
    """``sup {p in [q, 1] : kl(q | p) <= b}`` by bisection down to float resolution."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    if b < 0:
        raise ValueError(f"budget must be nonnegative, got {b}")
    if b == 0.0 or q == 1.0:
        return q
    if math.isinf(b) or (q == 0.0 and b >= 700):
        return 1.0
    if q == 0.0:
        return -math.expm1(-b)
    lo, hi = q, 1.0
    while True:
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        if kl(q, mid) <= b:
            lo = mid
        else:
            hi = mid
    return lo


def _clip(x: float) -> float:
    return min(1.0, x)


def complexity_slow(bits: float, n_samples: float, delta: float, extra_log: float = 0.0) -> float:
    return math.sqrt((bits * LN2 + math.log(1.0 / delta) + extra_log) / (2.0 * n_samples))


def single_task_bound(m: int, delta: float, emp_risk: float, bits: float) -> float:
    """Hoeffding/Occam bound: risk + sqrt((bits ln2 + ln 1/delta) / 2m)."""
    _check(emp_risk, delta, m, 1)
    return _clip(emp_risk + complexity_slow(bits, m, delta))


def single_task_kl_bound(m: int, delta: float, emp_risk: float, bits: float) -> float:
    """kl-form single-task bound: kl_inv(risk, (bits ln2 + ln(2 sqrt(m) / delta)) / m)."""
    _check(emp_risk, delta, m, 1)
    return kl_inv(emp_risk, (bits * LN2 + math.log(2.0 * math.sqrt(m) / delta)) / m)


def _check(emp_risk, delta, m, n):
    if not 0.0 <= emp_risk <= 1.0:
        raise ValueError(f"empirical risk must lie in [0, 1], got {emp_risk}")
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    if m * n < 1:
        raise ValueError("need at least one training example")


@dataclass
class BoundInputs:
    n: int
    m: int
    delta: float
    emp_risk: float
    bits_meta: int
    bits_multitask: int

    def __post_init__(self):
        _check(self.emp_risk, self.delta, self.m, self.n)
        if self.bits_meta < 0 or self.bits_multitask < 0:
            raise ValueError("bit lengths must be nonnegative")

    @property
    def bits(self) -> float:
        return self.bits_meta + self.bits_multitask

    @property
    def mn(self) -> int:
        return self.m * self.n

    @classmethod
    def from_dict(cls, d: dict) -> "BoundInputs":
        missing = [k for k in ("n", "m", "emp_risk", "bits_meta", "bits_multitask") if k not in d]
        if missing:
            raise KeyError(f"missing bound inputs: {', '.join(missing)}")
        return cls(int(d["n"]), int(d["m"]), float(d.get("delta", 0.05)), float(d["emp_risk"]),
                   d["bits_meta"], d["bits_multitask"])


def mtl_slow_bound(inp: BoundInputs) -> float:
    return _clip(inp.emp_risk + complexity_slow(inp.bits, inp.mn, inp.delta))


def fast_budget(inp: BoundInputs) -> float:
    return (inp.bits * LN2 + math.log(2.0 * math.sqrt(inp.mn) / inp.delta)) / inp.mn


def mtl_fast_bound(inp: BoundInputs) -> float:
    return kl_inv(inp.emp_risk, fast_budget(inp))


def pinsker_bound(inp: BoundInputs) -> float:
    """Closed-form relaxation of the fast bound via ``2 (p - q)^2 <= kl(q | p)``."""
    return _clip(inp.emp_risk + math.sqrt(fast_budget(inp) / 2.0))


def transfer_bound(m: int, delta: float, emp_risk: float, bits: float, kind: str = "kl") -> float:
    """Single-task bound charged only for the new task's coefficients; the frozen basis is free."""
    if kind == "kl":
        return single_task_kl_bound(m, delta, emp_risk, bits)
    return single_task_bound(m, delta, emp_risk, bits)


@dataclass
class BoundCertificate:
    inputs: BoundInputs
    slow: float = field(init=False)
    fast: float = field(init=False)
    pinsker: float = field(init=False)

    def __post_init__(self):
        self.slow = mtl_slow_bound(self.inputs)
        self.fast = mtl_fast_bound(self.inputs)
        self.pinsker = pinsker_bound(self.inputs)

    @property
    def non_vacuous(self) -> dict:
        return {"slow": self.slow < 1, "fast": self.fast < 1, "pinsker": self.pinsker < 1}

    def to_dict(self) -> dict:
        return {"inputs": asdict(self.inputs), "slow": self.slow, "fast": self.fast,
                "pinsker": self.pinsker, "non_vacuous": self.non_vacuous,
                "bits_per_task": self.inputs.bits / self.inputs.n}


def certify(inp: BoundInputs) -> BoundCertificate:
    return BoundCertificate(inp)


def single_task_summary(per_task: list[tuple[int, float, float]], delta: float) -> dict:
    """Single-task certificates for a list of ``(m, emp_risk, bits)`` per task.

    Reports the average of per-task bounds (each at confidence ``delta``) and
    the union-bound variant that holds for all tasks simultaneously
    (each at ``delta / n``).
    """
    n = len(per_task)
    out = {}
    for name, fn in (("slow", single_task_bound), ("kl", single_task_kl_bound)):
        out[f"avg_{name}"] = sum(fn(m, delta, r, b) for m, r, b in per_task) / n
        out[f"union_{name}"] = sum(fn(m, delta / n, r, b) for m, r, b in per_task) / n
    out["avg_emp_risk"] = sum(r for _, r, _ in per_task) / n
    out["avg_bits"] = sum(b for _, _, b in per_task) / n
    return out
