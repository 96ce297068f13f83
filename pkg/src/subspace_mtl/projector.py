"""Matrix-free Kronecker random projections ``(Q1 kron Q2) / sqrt(D)``.

A projector maps a coefficient vector of length ``d`` to the ambient weight
space of length ``D``.  The factors are regenerated from seeds, so a
projector is fully described by ``(D, d, seed)``.
"""
from __future__ import annotations

import math
from functools import cached_property

import numpy as np

from .linalg import ShapeError, derive_seed, gaussian


def factor_dims(n: int) -> tuple[int, int]:
    """Split ``n`` as ``(ceil(sqrt n), ceil(n / ceil(sqrt n)))``."""
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    a = math.isqrt(n)
    if a * a < n:
        a += 1
    return a, -(-n // a)


class KroneckerProjector:
    def __init__(self, D: int, d: int, seed: int):
        self.D, self.d, self.seed = int(D), int(d), int(seed)
        self.D1, self.D2 = factor_dims(self.D)
        self.d1, self.d2 = factor_dims(self.d)
        self.scale = 1.0 / math.sqrt(self.D)

    def __repr__(self):
        return f"KroneckerProjector(D={self.D}, d={self.d}, seed={self.seed})"

    @cached_property
    def Q1(self) -> np.ndarray:
        return gaussian(derive_seed(self.seed, "Q1"), self.D1, self.d1)

    @cached_property
    def Q2(self) -> np.ndarray:
        return gaussian(derive_seed(self.seed, "Q2"), self.D2, self.d2)

    def apply(self, w: np.ndarray) -> np.ndarray:
        """``P @ w`` for one vector (shape ``(d,)``) or a stack (shape ``(n, d)``)."""
        w = np.asarray(w, dtype=np.float64)
        if w.shape[-1] != self.d or w.ndim not in (1, 2):
            raise ShapeError(f"coefficients have shape {w.shape}, projector expects (..., {self.d})")
        lead = w.shape[:-1]
        pad = np.zeros(lead + (self.d1 * self.d2,))
        pad[..., :self.d] = w
        W = pad.reshape(lead + (self.d1, self.d2))
        Y = self.Q1 @ W @ self.Q2.T
        return Y.reshape(lead + (self.D1 * self.D2,))[..., :self.D] * self.scale

    def adjoint_apply(self, g: np.ndarray) -> np.ndarray:
        """``P.T @ g``; accepts ``(D,)`` or ``(n, D)``."""
        g = np.asarray(g, dtype=np.float64)
        if g.shape[-1] != self.D or g.ndim not in (1, 2):
            raise ShapeError(f"ambient vector has shape {g.shape}, projector expects (..., {self.D})")
        lead = g.shape[:-1]
        pad = np.zeros(lead + (self.D1 * self.D2,))
        pad[..., :self.D] = g
        G = pad.reshape(lead + (self.D1, self.D2))
        U = self.Q1.T @ G @ self.Q2
        return U.reshape(lead + (self.d1 * self.d2,))[..., :self.d] * self.scale

    def dense(self) -> np.ndarray:
        """Explicit ``D x d`` matrix; only for small sizes and testing."""
        return (np.kron(self.Q1, self.Q2)[:self.D, :self.d]) * self.scale


class SharedBasis:
    """``Q = [P_1 v_1, ..., P_k v_k]`` with ``[P_1, ..., P_k]`` one Kronecker projector."""

    def __init__(self, D: int, k: int, l: int, seed: int, v: np.ndarray | None = None):
        if k < 1 or l < 1:
            raise ValueError(f"shared basis needs k >= 1 and l >= 1, got k={k}, l={l}")
        self.D, self.k, self.l, self.seed = int(D), int(k), int(l), int(seed)
        self.projector = KroneckerProjector(D, k * l, seed)
        self.v = np.zeros((k, l)) if v is None else np.asarray(v, dtype=np.float64).reshape(k, l)

    def _check_alpha(self, alpha):
        alpha = np.asarray(alpha, dtype=np.float64)
        if alpha.shape[-1] != self.k:
            raise ShapeError(f"alpha has shape {alpha.shape}, basis has k={self.k}")
        return alpha

    def combine(self, alpha: np.ndarray, v: np.ndarray | None = None) -> np.ndarray:
        """``Q @ alpha``; ``alpha`` may be ``(k,)`` or ``(n, k)``."""
        alpha = self._check_alpha(alpha)
        v = self.v if v is None else v
        c = alpha[..., :, None] * v
        return self.projector.apply(c.reshape(alpha.shape[:-1] + (self.k * self.l,)))

    def gradients(self, alpha: np.ndarray, g: np.ndarray, v: np.ndarray | None = None):
        """Pull an ambient gradient back through ``Q @ alpha``.

        Returns ``(dv, dalpha)`` with shapes ``(k, l)`` and ``(k,)``.  For a
        stack of ``n`` alphas and gradients, ``dv`` is summed over the stack
        and ``dalpha`` has shape ``(n, k)``.
        """
        alpha = self._check_alpha(alpha)
        v = self.v if v is None else v
        u = self.projector.adjoint_apply(g).reshape(alpha.shape[:-1] + (self.k, self.l))
        dalpha = (u * v).sum(axis=-1)
        dv = alpha[..., :, None] * u
        if dv.ndim == 3:
            dv = dv.sum(axis=0)
        return dv, dalpha

    def dense(self) -> np.ndarray:
        P = self.projector.dense()
        return np.stack([P[:, i * self.l:(i + 1) * self.l] @ self.v[i] for i in range(self.k)], axis=1)


def basis_combine(basis: SharedBasis, alpha) -> np.ndarray:
    return basis.combine(alpha)


def basis_gradients(basis: SharedBasis, alpha, g):
    return basis.gradients(alpha, g)
