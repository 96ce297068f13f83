"""Quantisation-aware fine-tuning with a straight-through estimator."""
from __future__ import annotations

import numpy as np

from ..linalg import derive_seed, make_rng
from ..models import SubspaceModel
from ..training import (TrainConfig, TrainingDiverged, _as_datasets, batch_loss_grad,
                        evaluate_all, iterate_batches)
from .codebook import Codebook, quantize


def snap(model: SubspaceModel, codebooks: dict) -> SubspaceModel:
    """Copy of ``model`` with every coefficient group snapped to its codebook."""
    out = model.copy()
    for key, cb in codebooks.items():
        out.params[key] = quantize(out.params[key], cb)[1]
    return out


def finetune_quantized(model: SubspaceModel, codebooks: dict[str, Codebook], data,
                       config: TrainConfig, epochs: int | None = None, lr: float | None = None):
    """SGD on latent coefficients with gradients taken at their snapped values.

    ``codebooks`` maps a parameter group (``v``, ``alpha``, ``w``) to the codebook
    it is constrained to; groups not listed stay frozen.  After every step the
    snapped model is a legal quantised model.  The snapshot with the best
    training accuracy (the initial snap included) is returned with the history.
    """
    datasets = _as_datasets(model, data)
    keys = set(codebooks)
    latent = {k: np.array(v, dtype=np.float64) for k, v in model.params.items()}
    current = snap(model, codebooks)
    best, best_acc = current.copy(), evaluate_all(current, datasets)
    lr = config.finetune_lr if lr is None else lr
    rng = make_rng(derive_seed(config.seed, "finetune", model.mode))
    history = [{"epoch": -1, "train_acc": best_acc}]
    for epoch in range(config.finetune_epochs if epochs is None else epochs):
        losses = []
        for batches in iterate_batches(datasets, config.batch_size, rng):
            loss, grads = batch_loss_grad(current, batches, trainable=keys)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss during quantised fine-tuning at epoch {epoch}")
            losses.append(loss)
            for key in keys:
                latent[key] -= lr * grads[key]
                current.params[key] = quantize(latent[key], codebooks[key])[1]
        acc = evaluate_all(current, datasets)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "train_acc": acc})
        if acc > best_acc:
            best, best_acc = current.copy(), acc
    return best, history
