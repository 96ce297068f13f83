"""Coefficient gradients against central finite differences of the batch loss."""
import numpy as np
import pytest

from subspace_mtl.linalg import NetworkSpec, make_rng
from subspace_mtl.models import SubspaceModel
from subspace_mtl.training import batch_loss_grad


def fd_check(model, batches, eps=1e-6):
    _, grads = batch_loss_grad(model, batches)
    worst = 0.0
    for key, g in grads.items():
        base = model.params[key]
        fd = np.zeros_like(base)
        for i in np.ndindex(base.shape):
            p_plus = {k: v.copy() for k, v in model.params.items()}
            p_minus = {k: v.copy() for k, v in model.params.items()}
            p_plus[key][i] += eps
            p_minus[key][i] -= eps
            fd[i] = (batch_loss_grad(model, batches, p_plus)[0] - batch_loss_grad(model, batches, p_minus)[0]) / (2 * eps)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))
    return worst


def _batches(rng, spec, n, size=9):
    return [(rng.standard_normal((size, spec.input_dim)), rng.integers(0, spec.output_dim, size)) for _ in range(n)]


def random_models(spec, seed):
    """Single, shared and transfer models with random nonzero coefficients."""
    rng = make_rng(seed)
    single = SubspaceModel.single(spec, 1, 12, 2)
    shared = SubspaceModel.shared(spec, 1, 3, 6, 4, 5)
    transfer = SubspaceModel.transfer(spec, 1, 5, rng.standard_normal((3, 6)), 4, 7)
    for m in (single, shared, transfer):
        for key in m.params:
            m.params[key] = rng.standard_normal(m.params[key].shape)
    return {"single": (single, _batches(rng, spec, 1)),
            "shared": (shared, _batches(rng, spec, 4)),
            "transfer": (transfer, _batches(rng, spec, 1))}


@pytest.mark.parametrize("act", ["relu", "elu"])
@pytest.mark.parametrize("mode", ["single", "shared", "transfer"])
def test_coefficient_gradients(mode, act):
    spec = NetworkSpec(7, (9,), 3, act)
    model, batches = random_models(spec, 3)[mode]
    assert fd_check(model, batches) < 1e-5


def test_direct_gradient():
    spec = NetworkSpec(3, (4,), 2)
    model = SubspaceModel.direct(spec, 0)
    assert fd_check(model, _batches(make_rng(1), spec, 1)) < 1e-5


def test_trainable_filter():
    spec = NetworkSpec(3, (4,), 2)
    model = SubspaceModel.shared(spec, 1, 2, 3, 2, 5)
    _, grads = batch_loss_grad(model, _batches(make_rng(0), spec, 2), trainable={"alpha"})
    assert set(grads) == {"alpha"}
