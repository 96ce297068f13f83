"""Self-delimiting encodings of quantised subspace models.

Bit layout of the code parts (MSB first)
----------------------------------------
Every part starts with a 32-bit count of its own length in bits (the count
includes those 32 bits), so parts are self-delimiting and the code is
prefix-free.  Hyperparameters that were chosen from a grid are sent as grid
indices of ``ceil(log2 |grid|)`` bits.

shared / meta part           l(E)
    32   part length
    idx  l, k, r_g, r_l      (grid indices)
    16 * r_g                 global codebook (float16 bit patterns)
    r_g * ceil(log2(k*l+1))  index counts
    ...  arithmetic stream over the k*l indices of v (row-major)

shared / multitask part      l_E(f_1..f_n)
    32   part length
    16 * r_l                 local codebook
    r_l * ceil(log2(n*k+1))  index counts
    ...  arithmetic stream over the n*k indices of alpha (row-major)

single part
    32, idx d, idx r, 16 * r, r * ceil(log2(d+1)), stream over w

transfer part
    32, idx k', 1 bit "new codebook", [idx r, 16 * r when new],
    r * ceil(log2(k+k'+1)), stream over (alpha, w)

The file container wraps the parts with data-independent metadata (seeds,
architecture, grids) and a CRC32; see README for the byte layout.
"""
from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..linalg import NetworkSpec
from ..models import SubspaceModel
from .arith import (BitReader, BitWriter, CorruptStreamError, FrequencyTable,
                    arithmetic_decode, arithmetic_encode)
from .codebook import Codebook, quantize

MAGIC = b"MTLB"
VERSION = 1
KINDS = ("shared", "single", "transfer")
LENGTH_PREFIX_BITS = 32

DEFAULT_GRIDS = {
    "l": (20, 30, 40, 50, 60, 70, 80, 90, 100, 120, 150, 200, 300, 400, 500, 600, 700, 800, 900,
          1000, 1200, 1400, 1600, 1800, 2000, 2500, 3000, 3500, 4000, 5000, 6000, 7000, 8000),
    "k": (5, 10, 15, 20, 30, 35, 40, 50, 60, 70, 80, 90),
    "r_g": (10, 15, 20, 30),
    "r_l": (3, 10, 15, 20, 25, 30),
    "r": (2, 3, 5, 10, 15, 20, 30, 40),
    "d": (20, 30, 40, 50, 60, 70, 80, 90, 100, 120, 150, 200, 300, 400, 500, 600, 700, 800, 900,
          1000, 1200, 1400, 1600, 1800, 2000, 2500, 3000, 3500, 4000, 5000, 6000, 7000, 8000),
    "k_new": (0, 1, 2, 5, 10, 20, 50, 100),
}


class BundleError(ValueError):
    pass


def index_bits(grid) -> int:
    return math.ceil(math.log2(len(grid))) if len(grid) > 1 else 0


def codebook_bits(r: int) -> int:
    return 16 * r


def grid_index(grid, value, name) -> int:
    grid = list(grid)
    if value not in grid:
        raise BundleError(f"{name}={value} is not in its grid {grid}")
    return grid.index(value)


def merged_grids(grids: dict | None) -> dict:
    out = {k: tuple(v) for k, v in DEFAULT_GRIDS.items()}
    for k, v in (grids or {}).items():
        out[k] = tuple(int(x) for x in v)
    return out


def _half_bits(value: float) -> int:
    return int(np.array([value], dtype=np.float16).view(np.uint16)[0])


def _half_value(bits: int) -> float:
    return float(np.array([bits], dtype=np.uint16).view(np.float16)[0])


def _write_codebook(w: BitWriter, cb: Codebook):
    for c in cb.centers:
        w.write(_half_bits(c), 16)


def _read_codebook(reader: BitReader, r: int, kind: str) -> Codebook:
    vals = [_half_value(reader.read(16)) for _ in range(r)]
    try:
        return Codebook(tuple(vals), kind)
    except ValueError as exc:
        raise CorruptStreamError(f"invalid codebook: {exc}") from None


def _indices_on_codebook(values, cb: Codebook, what: str, strict: bool):
    idx, q = quantize(np.ravel(values), cb)
    if strict and not np.array_equal(q, np.ravel(values)):
        raise BundleError(f"{what} coefficients are not all codebook centers; quantise first")
    return idx


def _write_stream(w: BitWriter, idx, r: int) -> FrequencyTable:
    table = FrequencyTable.from_indices(idx, r)
    table.write(w)
    w.extend(arithmetic_encode(idx, table))
    return table


def _read_stream(reader: BitReader, r: int, N: int, end: int) -> np.ndarray:
    table = FrequencyTable.read(reader, r, N)
    stream = reader.bits[reader.pos:end]
    idx, _ = arithmetic_decode(stream, table)
    if np.bincount(np.asarray(idx, dtype=np.int64), minlength=r)[:r].tolist() != table.counts:
        raise CorruptStreamError("decoded indices disagree with the transmitted counts")
    if arithmetic_encode(idx, table) != list(stream):
        raise CorruptStreamError("arithmetic stream is not the canonical encoding of its symbols")
    return np.asarray(idx, dtype=np.int64)


def _finish_part(w: BitWriter) -> list[int]:
    total = LENGTH_PREFIX_BITS + len(w.bits)
    head = BitWriter()
    head.write(total, LENGTH_PREFIX_BITS)
    return head.bits + w.bits


def _open_part(bits) -> tuple[BitReader, int]:
    reader = BitReader(bits)
    total = reader.read(LENGTH_PREFIX_BITS)
    if total != len(bits):
        raise CorruptStreamError(f"part announces {total} bits but holds {len(bits)}")
    return reader, total


@dataclass
class EncodedBundle:
    kind: str
    header: dict
    parts: dict = field(default_factory=dict)

    @property
    def bits_meta(self) -> int:
        """l(E): length of the meta-encoder output (zero without shared parameters)."""
        return len(self.parts.get("meta", ()))

    @property
    def bits_multitask(self) -> int:
        """l_E: length of the joint per-task encoding (or the single model part)."""
        return len(self.parts.get("multitask", self.parts.get("model", ())))

    @property
    def total_bits(self) -> int:
        return self.bits_meta + self.bits_multitask

    def summary(self) -> dict:
        n = max(1, int(self.header.get("n", 1)))
        return {"kind": self.kind, "bits_meta": self.bits_meta, "bits_multitask": self.bits_multitask,
                "total_bits": self.total_bits, "n": n, "bits_per_task": self.total_bits / n}

    # -- container ----------------------------------------------------
    def to_bytes(self) -> bytes:
        h = self.header
        blob = json.dumps({"spec": h["spec"], "grids": {k: list(v) for k, v in h["grids"].items()},
                           "parent": h.get("parent")}, sort_keys=True).encode()
        out = bytearray(MAGIC)
        out += struct.pack(">BB", VERSION, KINDS.index(self.kind))
        out += struct.pack(">QQQ", h["theta0_seed"], h["basis_seed"], h["projector_seed"])
        out += struct.pack(">IIIIII", h["D"], h["n"], h["l"], h["k"], h["d"], h.get("k_new", 0))
        out += struct.pack(">I", len(blob)) + blob
        names = PART_NAMES[self.kind]
        for name in names:
            bits = self.parts[name]
            out += struct.pack(">I", len(bits))
            out += np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()
        out += struct.pack(">I", zlib.crc32(bytes(out)))
        return bytes(out)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "EncodedBundle":
        if len(raw) < 4 or raw[:4] != MAGIC:
            raise BundleError("not an encoded bundle (bad magic bytes)")
        if len(raw) < 10:
            raise BundleError("truncated bundle")
        (crc,) = struct.unpack(">I", raw[-4:])
        if zlib.crc32(raw[:-4]) != crc:
            raise CorruptStreamError("bundle checksum mismatch; file is corrupted")
        version, kind_id = struct.unpack(">BB", raw[4:6])
        if version != VERSION:
            raise BundleError(f"unsupported bundle version {version} (this build reads {VERSION})")
        if kind_id >= len(KINDS):
            raise CorruptStreamError(f"unknown bundle kind {kind_id}")
        kind = KINDS[kind_id]
        pos = 6
        t0, bs, ps = struct.unpack(">QQQ", raw[pos:pos + 24])
        pos += 24
        D, n, l, k, d, k_new = struct.unpack(">IIIIII", raw[pos:pos + 24])
        pos += 24
        (blen,) = struct.unpack(">I", raw[pos:pos + 4])
        pos += 4
        try:
            blob = json.loads(raw[pos:pos + blen])
        except ValueError:
            raise CorruptStreamError("bundle metadata is not valid JSON") from None
        pos += blen
        header = {"spec": blob["spec"], "grids": {k2: tuple(v) for k2, v in blob["grids"].items()},
                  "parent": blob.get("parent"), "theta0_seed": t0, "basis_seed": bs,
                  "projector_seed": ps, "D": D, "n": n, "l": l, "k": k, "d": d, "k_new": k_new}
        parts = {}
        for name in PART_NAMES[kind]:
            (nbits,) = struct.unpack(">I", raw[pos:pos + 4])
            pos += 4
            nbytes = -(-nbits // 8)
            chunk = np.frombuffer(raw[pos:pos + nbytes], dtype=np.uint8)
            if chunk.size != nbytes:
                raise CorruptStreamError(f"part {name!r} is truncated")
            parts[name] = np.unpackbits(chunk)[:nbits].astype(int).tolist()
            pos += nbytes
        if pos != len(raw) - 4:
            raise CorruptStreamError(f"{len(raw) - 4 - pos} unexpected bytes after the last part")
        return cls(kind, header, parts)

    def save(self, path):
        from ..io_utils import atomic_write_bytes
        atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "EncodedBundle":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def digest(self) -> int:
        return zlib.crc32(self.to_bytes())


PART_NAMES = {"shared": ("meta", "multitask"), "single": ("model",), "transfer": ("model",)}


def _base_header(model: SubspaceModel, grids) -> dict:
    return {"spec": model.spec.to_dict(), "grids": merged_grids(grids),
            "theta0_seed": model.theta0_seed, "basis_seed": model.basis_seed,
            "projector_seed": model.projector_seed, "D": model.spec.D, "n": max(model.n_tasks, 1),
            "l": model.l, "k": model.k, "d": model.d if model.mode != "transfer" else 0,
            "k_new": model.d if model.mode == "transfer" else 0, "parent": None}


# -- shared ----------------------------------------------------------------------

def encode_bundle(model: SubspaceModel, global_cb: Codebook, local_cb: Codebook,
                  grids: dict | None = None, strict: bool = True) -> EncodedBundle:
    """Meta part (basis coefficients v) and joint multitask part (all alpha_j)."""
    if model.mode != "shared":
        raise BundleError(f"encode_bundle needs a shared-mode model, got {model.mode}")
    header = _base_header(model, grids)
    g = header["grids"]
    k, l, n = model.k, model.l, model.n_tasks

    w = BitWriter()
    w.write(grid_index(g["l"], l, "l"), index_bits(g["l"]))
    w.write(grid_index(g["k"], k, "k"), index_bits(g["k"]))
    w.write(grid_index(g["r_g"], global_cb.r, "r_g"), index_bits(g["r_g"]))
    w.write(grid_index(g["r_l"], local_cb.r, "r_l"), index_bits(g["r_l"]))
    _write_codebook(w, global_cb)
    _write_stream(w, _indices_on_codebook(model.params["v"], global_cb, "shared", strict), global_cb.r)
    meta = _finish_part(w)

    w = BitWriter()
    _write_codebook(w, local_cb)
    _write_stream(w, _indices_on_codebook(model.params["alpha"], local_cb, "per-task", strict), local_cb.r)
    multitask = _finish_part(w)
    if header["n"] != n:
        raise BundleError("task count drifted between header and streams")
    return EncodedBundle("shared", header, {"meta": meta, "multitask": multitask})


def _decode_shared(bundle: EncodedBundle):
    h = bundle.header
    g = h["grids"]
    reader, end = _open_part(bundle.parts["meta"])
    try:
        l = g["l"][reader.read(index_bits(g["l"]))]
        k = g["k"][reader.read(index_bits(g["k"]))]
        r_g = g["r_g"][reader.read(index_bits(g["r_g"]))]
        r_l = g["r_l"][reader.read(index_bits(g["r_l"]))]
    except IndexError:
        raise CorruptStreamError("hyperparameter index outside its grid") from None
    if (l, k) != (h["l"], h["k"]):
        raise CorruptStreamError(f"header says (l, k) = ({h['l']}, {h['k']}), stream says ({l}, {k})")
    gcb = _read_codebook(reader, r_g, "global")
    v_idx = _read_stream(reader, r_g, k * l, end)

    reader, end = _open_part(bundle.parts["multitask"])
    lcb = _read_codebook(reader, r_l, "local")
    a_idx = _read_stream(reader, r_l, h["n"] * k, end)
    spec = NetworkSpec.from_dict(h["spec"])
    model = SubspaceModel(spec, "shared", h["theta0_seed"], k=k, l=l, n_tasks=h["n"],
                          basis_seed=h["basis_seed"],
                          params={"v": gcb.array[v_idx].reshape(k, l),
                                  "alpha": lcb.array[a_idx].reshape(h["n"], k)})
    return model, {"global": gcb, "local": lcb}


# -- single ----------------------------------------------------------------------

def encode_single(model: SubspaceModel, cb: Codebook, grids: dict | None = None,
                  strict: bool = True) -> EncodedBundle:
    if model.mode != "single":
        raise BundleError(f"encode_single needs a single-mode model, got {model.mode}")
    header = _base_header(model, grids)
    g = header["grids"]
    w = BitWriter()
    w.write(grid_index(g["d"], model.d, "d"), index_bits(g["d"]))
    w.write(grid_index(g["r"], cb.r, "r"), index_bits(g["r"]))
    _write_codebook(w, cb)
    _write_stream(w, _indices_on_codebook(model.params["w"], cb, "single-task", strict), cb.r)
    return EncodedBundle("single", header, {"model": _finish_part(w)})


def _decode_single(bundle: EncodedBundle):
    h = bundle.header
    g = h["grids"]
    reader, end = _open_part(bundle.parts["model"])
    try:
        d = g["d"][reader.read(index_bits(g["d"]))]
        r = g["r"][reader.read(index_bits(g["r"]))]
    except IndexError:
        raise CorruptStreamError("hyperparameter index outside its grid") from None
    if d != h["d"]:
        raise CorruptStreamError(f"header says d = {h['d']}, stream says {d}")
    cb = _read_codebook(reader, r, "local")
    idx = _read_stream(reader, r, d, end)
    model = SubspaceModel(NetworkSpec.from_dict(h["spec"]), "single", h["theta0_seed"], d=d,
                          projector_seed=h["projector_seed"], params={"w": cb.array[idx]})
    return model, {"local": cb}


# -- transfer --------------------------------------------------------------------

def encode_transfer(model: SubspaceModel, cb: Codebook, parent: EncodedBundle, reuse: bool,
                    grids: dict | None = None, strict: bool = True) -> EncodedBundle:
    """New-task coefficients (alpha, w) on top of a decoded multi-task bundle.

    With ``reuse=True`` the codebook must be the parent's local codebook and
    costs nothing; otherwise it is sent after a grid index for its size.
    """
    if model.mode != "transfer":
        raise BundleError(f"encode_transfer needs a transfer-mode model, got {model.mode}")
    header = _base_header(model, grids or parent.header["grids"])
    header["n"] = 1
    header["parent"] = parent.digest()
    g = header["grids"]
    if reuse:
        _, cbs = decode_bundle(parent)
        if cb != cbs["local"] and cb.centers != cbs["local"].centers:
            raise BundleError("reuse=True but the codebook differs from the parent's local codebook")
    w = BitWriter()
    w.write(grid_index(g["k_new"], model.d, "k_new"), index_bits(g["k_new"]))
    w.write(0 if reuse else 1, 1)
    if not reuse:
        w.write(grid_index(g["r"], cb.r, "r"), index_bits(g["r"]))
        _write_codebook(w, cb)
    coeffs = np.concatenate([model.params["alpha"], model.params["w"]])
    _write_stream(w, _indices_on_codebook(coeffs, cb, "transfer", strict), cb.r)
    return EncodedBundle("transfer", header, {"model": _finish_part(w)})


def _decode_transfer(bundle: EncodedBundle, parent: EncodedBundle):
    h = bundle.header
    if parent is None:
        raise BundleError("decoding a transfer bundle needs its parent multi-task bundle")
    if h["parent"] != parent.digest():
        raise BundleError("parent bundle does not match the one this transfer bundle was built on")
    parent_model, parent_cbs = decode_bundle(parent)
    g = h["grids"]
    reader, end = _open_part(bundle.parts["model"])
    try:
        k_new = g["k_new"][reader.read(index_bits(g["k_new"]))]
        new_cb = reader.read(1)
        cb = parent_cbs["local"]
        if new_cb:
            cb = _read_codebook(reader, g["r"][reader.read(index_bits(g["r"]))], "local")
    except IndexError:
        raise CorruptStreamError("hyperparameter index outside its grid") from None
    if k_new != h["k_new"]:
        raise CorruptStreamError(f"header says k' = {h['k_new']}, stream says {k_new}")
    k = parent_model.k
    idx = _read_stream(reader, cb.r, k + k_new, end)
    vals = cb.array[idx]
    model = SubspaceModel(parent_model.spec, "transfer", parent_model.theta0_seed, d=k_new,
                          projector_seed=h["projector_seed"], k=k, l=parent_model.l,
                          basis_seed=parent_model.basis_seed, frozen_v=parent_model.params["v"],
                          params={"alpha": vals[:k], "w": vals[k:]})
    return model, {"local": cb, "reused": not new_cb}


def decode_bundle(bundle: EncodedBundle, parent: EncodedBundle | None = None):
    """Rebuild the quantised model; returns ``(model, codebooks)``."""
    if bundle.kind == "shared":
        return _decode_shared(bundle)
    if bundle.kind == "single":
        return _decode_single(bundle)
    return _decode_transfer(bundle, parent)


def separate_task_bits(alpha_idx: np.ndarray, r: int) -> list[int]:
    """Per-task lengths (count table + stream) when each task is encoded on its own."""
    out = []
    for row in np.atleast_2d(alpha_idx):
        table = FrequencyTable.from_indices(row, r)
        out.append(table.bit_length() + len(arithmetic_encode(row, table)))
    return out


def joint_task_bits(alpha_idx: np.ndarray, r: int) -> int:
    """Length of the joint multitask part for a shared codebook of ``r`` entries."""
    flat = np.ravel(alpha_idx)
    table = FrequencyTable.from_indices(flat, r)
    return LENGTH_PREFIX_BITS + codebook_bits(r) + table.bit_length() + len(arithmetic_encode(flat, table))


def reencode(bundle: EncodedBundle, parent: EncodedBundle | None = None) -> EncodedBundle:
    """Decode and encode again; a canonical bundle reproduces itself byte for byte."""
    model, cbs = decode_bundle(bundle, parent)
    grids = bundle.header["grids"]
    if bundle.kind == "shared":
        out = encode_bundle(model, cbs["global"], cbs["local"], grids)
    elif bundle.kind == "single":
        out = encode_single(model, cbs["local"], grids)
    else:
        out = encode_transfer(model, cbs["local"], parent, cbs["reused"], grids)
    if out.to_bytes() != bundle.to_bytes():
        raise CorruptStreamError("bundle does not re-encode to itself")
    return out
