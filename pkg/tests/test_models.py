from fractions import Fraction

import numpy as np
import pytest

from subspace_mtl.linalg import NetworkSpec, ShapeError, init_params, make_rng
from subspace_mtl.models import CHECKPOINT_MAGIC, SubspaceModel, amortized_count, total_count
from subspace_mtl.projector import KroneckerProjector, SharedBasis

SPEC = NetworkSpec(5, (6,), 3)


def test_zero_coefficients_give_theta0():
    for model in (SubspaceModel.single(SPEC, 1, 4, 2),
                  SubspaceModel.shared(SPEC, 1, 2, 3, 4, 5)):
        task = 0 if model.mode == "shared" else None
        np.testing.assert_array_equal(model.realize(task), init_params(SPEC, 1))


def test_single_realize_matches_dense():
    model = SubspaceModel.single(SPEC, 1, 7, 2)
    model.params["w"] = make_rng(0).standard_normal(7)
    P = KroneckerProjector(SPEC.D, 7, 2).dense()
    np.testing.assert_allclose(model.realize(), model.theta0 + P @ model.params["w"], atol=1e-12)


def test_shared_realize_matches_dense():
    rng = make_rng(1)
    model = SubspaceModel.shared(SPEC, 1, 3, 4, 5, 9)
    model.params["v"] = rng.standard_normal((3, 4))
    model.params["alpha"] = rng.standard_normal((5, 3))
    Q = SharedBasis(SPEC.D, 3, 4, 9, model.params["v"]).dense()
    for j in range(5):
        np.testing.assert_allclose(model.realize(j), model.theta0 + Q @ model.params["alpha"][j], atol=1e-12)
    np.testing.assert_allclose(model.realize_all()[2], model.realize(2), atol=1e-14)


def test_transfer_realize_combines_basis_and_projector():
    rng = make_rng(2)
    v = rng.standard_normal((3, 4))
    model = SubspaceModel.transfer(SPEC, 1, 9, v, 2, 11)
    model.params["alpha"] = rng.standard_normal(3)
    model.params["w"] = rng.standard_normal(2)
    Q = SharedBasis(SPEC.D, 3, 4, 9, v).dense()
    P = KroneckerProjector(SPEC.D, 2, 11).dense()
    expected = model.theta0 + Q @ model.params["alpha"] + P @ model.params["w"]
    np.testing.assert_allclose(model.realize(), expected, atol=1e-12)


def test_transfer_without_basis():
    model = SubspaceModel.transfer(SPEC, 1, 9, np.zeros((0, 0)), 3, 11)
    assert model.k == 0 and model.trainable_count() == 3


def test_task_index_rules():
    shared = SubspaceModel.shared(SPEC, 1, 2, 3, 4, 5)
    with pytest.raises(ValueError):
        shared.realize()
    with pytest.raises(IndexError):
        shared.realize(4)
    with pytest.raises(ValueError):
        SubspaceModel.single(SPEC, 1, 3, 2).realize(0)


def test_invalid_construction():
    with pytest.raises(ValueError):
        SubspaceModel.single(SPEC, 1, 0, 2)
    with pytest.raises(ValueError):
        SubspaceModel(SPEC, "shared", 1, k=2, l=0, n_tasks=3)
    with pytest.raises(ValueError):
        SubspaceModel(SPEC, "bogus", 1)
    with pytest.raises(ShapeError):
        SubspaceModel(SPEC, "single", 1, d=3, params={"w": np.zeros(4)})


def test_amortized_count():
    assert amortized_count(100, 5, 20) == Fraction(30)
    assert amortized_count(7, 3, 2) == Fraction(21, 2) + 3
    assert total_count(100, 5, 20) == 600
    model = SubspaceModel.shared(SPEC, 1, 5, 100, 20, 2)
    assert model.trainable_count() == 600 and model.amortized_count() == 30
    with pytest.raises(ValueError):
        amortized_count(0, 1, 1)


@pytest.mark.parametrize("mode", ["direct", "single", "shared", "transfer"])
def test_checkpoint_round_trip(tmp_path, mode):
    rng = make_rng(4)
    model = {"direct": lambda: SubspaceModel.direct(SPEC, 3),
             "single": lambda: SubspaceModel.single(SPEC, 3, 5, 4),
             "shared": lambda: SubspaceModel.shared(SPEC, 3, 2, 4, 3, 6),
             "transfer": lambda: SubspaceModel.transfer(SPEC, 3, 6, rng.standard_normal((2, 4)), 3, 8)}[mode]()
    for key in model.params:
        model.params[key] = rng.standard_normal(model.params[key].shape)
    path = tmp_path / "m.ckpt"
    model.save(path)
    raw = path.read_bytes()
    assert raw[:4] == CHECKPOINT_MAGIC
    back = SubspaceModel.load(path)
    assert back.to_bytes() == raw
    task = 1 if mode == "shared" else None
    np.testing.assert_array_equal(back.realize(task), model.realize(task))


def test_checkpoint_rejects_garbage():
    raw = SubspaceModel.single(SPEC, 3, 5, 4).to_bytes()
    with pytest.raises(ValueError, match="magic"):
        SubspaceModel.from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError, match="trailing"):
        SubspaceModel.from_bytes(raw + b"\0" * 8)
