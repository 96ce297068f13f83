"""Subspace parametrisations over a frozen random initialisation ``theta0``.

Modes
-----
direct    theta = trainable vector (D values)
single    theta = theta0 + P w
shared    theta_j = theta0 + Q alpha_j,  Q = [P_1 v_1, ..., P_k v_k]
transfer  theta = theta0 + Q alpha + P w, with Q frozen from a multi-task run
"""
from __future__ import annotations

import io
import json
import struct
from fractions import Fraction
from functools import cached_property

import numpy as np

from .linalg import NetworkSpec, ShapeError, init_params
from .projector import KroneckerProjector, SharedBasis

MODES = ("direct", "single", "shared", "transfer")
CHECKPOINT_MAGIC = b"SMCK"
CHECKPOINT_VERSION = 1


class SubspaceModel:
    def __init__(self, spec: NetworkSpec, mode: str, theta0_seed: int, *,
                 d: int = 0, projector_seed: int = 0,
                 k: int = 0, l: int = 0, n_tasks: int = 0, basis_seed: int = 0,
                 frozen_v: np.ndarray | None = None, params: dict | None = None):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.spec, self.mode, self.theta0_seed = spec, mode, int(theta0_seed)
        self.d, self.projector_seed = int(d), int(projector_seed)
        self.k, self.l, self.n_tasks, self.basis_seed = int(k), int(l), int(n_tasks), int(basis_seed)
        self.frozen_v = None if frozen_v is None else np.asarray(frozen_v, dtype=np.float64).reshape(self.k, self.l)

        if mode == "single" and self.d < 1:
            raise ValueError("single mode needs d >= 1")
        if mode == "shared":
            if self.k < 1 or self.l < 1:
                raise ValueError("shared mode needs k >= 1 and l >= 1")
            if self.n_tasks < 1:
                raise ValueError("shared mode needs n_tasks >= 1")
        if mode == "transfer":
            if self.k > 0 and self.frozen_v is None:
                raise ValueError("transfer mode with k > 0 needs the frozen basis coefficients")
            if self.k + self.d < 1:
                raise ValueError("transfer mode needs k + k' >= 1")

        self.params = self._zero_params(self.frozen_v) if params is None else {
            key: np.asarray(val, dtype=np.float64).copy() for key, val in params.items()}
        for key, val in self._zero_params(self.frozen_v).items():
            if key not in self.params or self.params[key].shape != val.shape:
                raise ShapeError(f"parameter {key!r} must have shape {val.shape}")

    # -- constructors -------------------------------------------------
    @classmethod
    def direct(cls, spec, theta0_seed):
        return cls(spec, "direct", theta0_seed)

    @classmethod
    def single(cls, spec, theta0_seed, d, projector_seed):
        return cls(spec, "single", theta0_seed, d=d, projector_seed=projector_seed)

    @classmethod
    def shared(cls, spec, theta0_seed, k, l, n_tasks, basis_seed, init_seed=None):
        model = cls(spec, "shared", theta0_seed, k=k, l=l, n_tasks=n_tasks, basis_seed=basis_seed)
        if init_seed is not None:
            from .linalg import make_rng
            model.params["v"] = make_rng(init_seed).standard_normal((k, l)) / np.sqrt(l)
        return model

    @classmethod
    def transfer(cls, spec, theta0_seed, basis_seed, v, k_new, projector_seed):
        v = np.atleast_2d(np.asarray(v, dtype=np.float64))
        k, l = (v.shape if v.size else (0, 0))
        return cls(spec, "transfer", theta0_seed, d=k_new, projector_seed=projector_seed,
                   k=k, l=l, basis_seed=basis_seed, frozen_v=v if k else None)

    def _zero_params(self, frozen_v):
        if self.mode == "direct":
            return {"theta": init_params(self.spec, self.theta0_seed)}
        if self.mode == "single":
            return {"w": np.zeros(self.d)}
        if self.mode == "shared":
            return {"v": np.zeros((self.k, self.l)), "alpha": np.zeros((self.n_tasks, self.k))}
        return {"alpha": np.zeros(self.k), "w": np.zeros(self.d)}

    def copy(self) -> "SubspaceModel":
        return SubspaceModel(self.spec, self.mode, self.theta0_seed, d=self.d,
                             projector_seed=self.projector_seed, k=self.k, l=self.l,
                             n_tasks=self.n_tasks, basis_seed=self.basis_seed,
                             frozen_v=self.frozen_v, params=self.params)

    # -- frozen pieces ------------------------------------------------
    @cached_property
    def theta0(self) -> np.ndarray:
        t = init_params(self.spec, self.theta0_seed)
        t.setflags(write=False)
        return t

    @cached_property
    def projector(self) -> KroneckerProjector | None:
        if self.mode in ("single", "transfer") and self.d > 0:
            return KroneckerProjector(self.spec.D, self.d, self.projector_seed)
        return None

    @cached_property
    def basis(self) -> SharedBasis | None:
        if self.mode in ("shared", "transfer") and self.k > 0:
            return SharedBasis(self.spec.D, self.k, self.l, self.basis_seed)
        return None

    @property
    def v(self) -> np.ndarray:
        return self.params["v"] if self.mode == "shared" else self.frozen_v

    # -- realisation --------------------------------------------------
    def realize(self, task: int | None = None, params: dict | None = None) -> np.ndarray:
        p = self.params if params is None else params
        if (task is not None) != (self.mode == "shared"):
            raise ValueError("a task index is required in shared mode and only there")
        if self.mode == "direct":
            return np.array(p["theta"], dtype=np.float64)
        if self.mode == "single":
            return self.theta0 + self.projector.apply(p["w"])
        if self.mode == "shared":
            if not 0 <= task < self.n_tasks:
                raise IndexError(f"task {task} out of range for {self.n_tasks} tasks")
            return self.theta0 + self.basis.combine(p["alpha"][task], p["v"])
        theta = self.theta0.copy()
        if self.k:
            theta += self.basis.combine(p["alpha"], self.frozen_v)
        if self.d:
            theta += self.projector.apply(p["w"])
        return theta

    def realize_all(self, params: dict | None = None) -> np.ndarray:
        """All task weight vectors of a shared model, shape ``(n, D)``."""
        p = self.params if params is None else params
        if self.mode != "shared":
            return self.realize(params=p)[None, :]
        return self.theta0 + self.basis.combine(p["alpha"], p["v"])

    def coefficient_grad(self, task: int | None, g: np.ndarray, params: dict | None = None) -> dict:
        """Gradient w.r.t. the trainable coefficients of a loss whose ambient gradient is ``g``."""
        p = self.params if params is None else params
        g = np.asarray(g, dtype=np.float64)
        if g.shape != (self.spec.D,):
            raise ShapeError(f"ambient gradient has shape {g.shape}, expected ({self.spec.D},)")
        if (task is not None) != (self.mode == "shared"):
            raise ValueError("a task index is required in shared mode and only there")
        if self.mode == "direct":
            return {"theta": g.copy()}
        if self.mode == "single":
            return {"w": self.projector.adjoint_apply(g)}
        if self.mode == "shared":
            dv, da = self.basis.gradients(p["alpha"][task], g, p["v"])
            dalpha = np.zeros_like(p["alpha"])
            dalpha[task] = da
            return {"v": dv, "alpha": dalpha}
        out = {"alpha": np.zeros(self.k), "w": np.zeros(self.d)}
        if self.k:
            out["alpha"] = self.basis.gradients(p["alpha"], g, self.frozen_v)[1]
        if self.d:
            out["w"] = self.projector.adjoint_apply(g)
        return out

    def shared_grad_all(self, G: np.ndarray, params: dict | None = None) -> dict:
        """Gradients for a stack of per-task ambient gradients ``G`` (``n x D``)."""
        p = self.params if params is None else params
        dv, dalpha = self.basis.gradients(p["alpha"], G, p["v"])
        return {"v": dv, "alpha": dalpha}

    # -- counting -----------------------------------------------------
    def trainable_count(self) -> int:
        return sum(int(v.size) for v in self.params.values())

    def amortized_count(self) -> Fraction:
        if self.mode == "shared":
            return amortized_count(self.l, self.k, self.n_tasks)
        return Fraction(self.trainable_count())

    # -- persistence --------------------------------------------------
    def header(self) -> dict:
        return {"spec": self.spec.to_dict(), "mode": self.mode, "theta0_seed": self.theta0_seed,
                "d": self.d, "projector_seed": self.projector_seed, "k": self.k, "l": self.l,
                "n_tasks": self.n_tasks, "basis_seed": self.basis_seed,
                "has_frozen_v": self.frozen_v is not None,
                "params": [[key, list(val.shape)] for key, val in sorted(self.params.items())]}

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), sort_keys=True).encode()
        buf = io.BytesIO()
        buf.write(CHECKPOINT_MAGIC)
        buf.write(struct.pack(">BI", CHECKPOINT_VERSION, len(head)))
        buf.write(head)
        if self.frozen_v is not None:
            buf.write(self.frozen_v.astype(">f8").tobytes())
        for key in sorted(self.params):
            buf.write(self.params[key].astype(">f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "SubspaceModel":
        if raw[:4] != CHECKPOINT_MAGIC:
            raise ValueError("not a checkpoint file (bad magic bytes)")
        version, hlen = struct.unpack(">BI", raw[4:9])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        head = json.loads(raw[9:9 + hlen])
        pos = 9 + hlen

        def take(shape):
            nonlocal pos
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(raw, dtype=">f8", count=count, offset=pos).astype(np.float64)
            pos += 8 * count
            return arr.reshape(shape)

        frozen = take([head["k"], head["l"]]) if head["has_frozen_v"] else None
        params = {key: take(shape) for key, shape in head["params"]}
        if pos != len(raw):
            raise ValueError(f"checkpoint has {len(raw) - pos} trailing bytes")
        return cls(NetworkSpec.from_dict(head["spec"]), head["mode"], head["theta0_seed"],
                   d=head["d"], projector_seed=head["projector_seed"], k=head["k"], l=head["l"],
                   n_tasks=head["n_tasks"], basis_seed=head["basis_seed"], frozen_v=frozen,
                   params=params)

    def save(self, path):
        from .io_utils import atomic_write_bytes
        atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "SubspaceModel":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def amortized_count(l: int, k: int, n: int) -> Fraction:
    """Per-task trainable count ``lk/n + k`` of the shared-basis parametrisation."""
    if k < 1 or l < 1 or n < 1:
        raise ValueError("l, k and n must all be >= 1")
    return Fraction(l * k, n) + k


def total_count(l: int, k: int, n: int) -> int:
    return l * k + n * k
