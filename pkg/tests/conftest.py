import numpy as np
import pytest

from subspace_mtl.compression.codebook import Codebook
from subspace_mtl.linalg import NetworkSpec, make_rng
from subspace_mtl.models import SubspaceModel

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.fixture
def record(request):
    """Attach a one-line detail string to the running acceptance test."""
    def _record(detail: str):
        request.node.user_properties.append(("detail", detail))
        print(detail)
    return _record


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    entry = _ACCEPTANCE.setdefault(crit, {"ok": True, "details": []})
    entry["ok"] &= report.outcome == "passed"
    entry["details"] += [v for k, v in report.user_properties if k == "detail"]


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            item.user_properties.append(("criterion", mark.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[crit]
        detail = "; ".join(e["details"])
        terminalreporter.write_line(f"criterion {crit}: {'PASS' if e['ok'] else 'FAIL'}  {detail}")


# -- helpers ----------------------------------------------------------------------

SMALL = NetworkSpec(6, (10,), 3)


def random_codebook(rng, r, kind="local"):
    vals = np.sort(rng.choice(np.arange(-2000, 2000), size=r, replace=False)) / 512.0
    return Codebook(tuple(float(v) for v in vals), kind)


def random_shared(rng, spec=SMALL, k=None, l=None, n=None, r_g=None, r_l=None, skew=1.0):
    """Random shared model whose coefficients already lie on random codebooks."""
    k = k or int(rng.integers(1, 6))
    l = l or int(rng.integers(1, 9))
    n = n or int(rng.integers(1, 7))
    gcb = random_codebook(rng, r_g or int(rng.integers(1, 9)), "global")
    lcb = random_codebook(rng, r_l or int(rng.integers(1, 9)))
    pg = rng.dirichlet(np.full(gcb.r, skew))
    pl = rng.dirichlet(np.full(lcb.r, skew))
    model = SubspaceModel.shared(spec, int(rng.integers(0, 2**62)), k, l, n, int(rng.integers(0, 2**62)))
    model.params["v"] = gcb.array[rng.choice(gcb.r, size=(k, l), p=pg)]
    model.params["alpha"] = lcb.array[rng.choice(lcb.r, size=(n, k), p=pl)]
    grids = {"l": list(range(1, 9)), "k": list(range(1, 6)), "r_g": list(range(1, 9)),
             "r_l": list(range(1, 9))}
    return model, gcb, lcb, grids


@pytest.fixture
def rng():
    return make_rng(1234)
