"""Self-describing binary containers for transports.

FTT1: little-endian {magic, d, ranks, per-dim grid nodes, row-major cores}.
SIR1: reference spec + tau/zeta/mass + embedded FTT1 + marginal factors.
DIR1: layer count + SIR1 blocks + JSON metadata (schedule params, provenance).
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .basis import ReferenceDensity1D, UnivariateBasis
from .dirt import DIRT
from .ftt import FunctionalTT
from .sirt import SIRT

__all__ = [
    "save_ftt",
    "load_ftt",
    "save_sirt",
    "load_sirt",
    "save_dirt",
    "load_dirt",
]

_FTT_MAGIC = b"FTT1"
_SIRT_MAGIC = b"SIR1"
_DIRT_MAGIC = b"DIR1"
_REF_KINDS = {"uniform": 0, "truncated_normal": 1}
_REF_NAMES = {v: k for k, v in _REF_KINDS.items()}


def _write_array(fh, arr: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_array(fh, count: int) -> np.ndarray:
    buf = fh.read(8 * count)
    if len(buf) != 8 * count:
        raise ValueError("truncated container")
    return np.frombuffer(buf, dtype="<f8").copy()


def _write_ftt_block(fh, tt: FunctionalTT) -> None:
    fh.write(_FTT_MAGIC)
    ranks = tt.ranks
    fh.write(struct.pack("<I", tt.dim))
    fh.write(struct.pack(f"<{tt.dim + 1}I", *ranks))
    for basis in tt.bases:
        fh.write(struct.pack("<I", basis.size))
        _write_array(fh, basis.nodes)
    for core in tt.cores:
        _write_array(fh, core)


def _read_ftt_block(fh) -> FunctionalTT:
    if fh.read(4) != _FTT_MAGIC:
        raise ValueError("not an FTT1 container")
    (d,) = struct.unpack("<I", fh.read(4))
    ranks = struct.unpack(f"<{d + 1}I", fh.read(4 * (d + 1)))
    bases = []
    for _ in range(d):
        (n,) = struct.unpack("<I", fh.read(4))
        bases.append(UnivariateBasis(_read_array(fh, n)))
    cores = []
    for k in range(d):
        shape = (ranks[k], bases[k].size, ranks[k + 1])
        cores.append(_read_array(fh, int(np.prod(shape))).reshape(shape))
    return FunctionalTT(bases, cores)


def _write_sirt_block(fh, sirt: SIRT) -> None:
    fh.write(_SIRT_MAGIC)
    fh.write(struct.pack("<I", sirt.dim))
    for ref in sirt.references:
        fh.write(struct.pack("<Bdd", _REF_KINDS[ref.kind], ref.lower, ref.upper))
    fh.write(struct.pack("<ddd", sirt.tau, sirt.zeta, sirt.mass))
    _write_ftt_block(fh, sirt.tt)
    for factor in sirt.factors:
        fh.write(struct.pack("<I", factor.shape[0]))
        _write_array(fh, factor)


def _read_sirt_block(fh) -> SIRT:
    if fh.read(4) != _SIRT_MAGIC:
        raise ValueError("not a SIR1 container")
    (d,) = struct.unpack("<I", fh.read(4))
    refs = []
    for _ in range(d):
        kind, lo, hi = struct.unpack("<Bdd", fh.read(17))
        refs.append(ReferenceDensity1D(_REF_NAMES[kind], lo, hi))
    tau, zeta, mass = struct.unpack("<ddd", fh.read(24))
    tt = _read_ftt_block(fh)
    factors = []
    for _ in range(d + 1):
        (r,) = struct.unpack("<I", fh.read(4))
        factors.append(_read_array(fh, r * r).reshape(r, r))
    sirt = SIRT(tt, tau, refs, factors, mass)
    if abs(sirt.zeta - zeta) > 1e-12 * max(abs(zeta), 1.0):
        raise ValueError("inconsistent normalizing constant in container")
    return sirt


def _open(path_or_file, mode: str):
    if isinstance(path_or_file, (str, Path)):
        return open(path_or_file, mode), True
    return path_or_file, False


def save_ftt(path_or_file, tt: FunctionalTT) -> None:
    fh, owned = _open(path_or_file, "wb")
    try:
        _write_ftt_block(fh, tt)
    finally:
        if owned:
            fh.close()


def load_ftt(path_or_file) -> FunctionalTT:
    fh, owned = _open(path_or_file, "rb")
    try:
        return _read_ftt_block(fh)
    finally:
        if owned:
            fh.close()


def save_sirt(path_or_file, sirt: SIRT) -> None:
    fh, owned = _open(path_or_file, "wb")
    try:
        _write_sirt_block(fh, sirt)
    finally:
        if owned:
            fh.close()


def load_sirt(path_or_file) -> SIRT:
    fh, owned = _open(path_or_file, "rb")
    try:
        return _read_sirt_block(fh)
    finally:
        if owned:
            fh.close()


def save_dirt(path_or_file, dirt: DIRT) -> None:
    fh, owned = _open(path_or_file, "wb")
    try:
        fh.write(_DIRT_MAGIC)
        fh.write(struct.pack("<I", dirt.n_layers))
        for layer in dirt.layers:
            _write_sirt_block(fh, layer)
        meta = json.dumps(dirt.provenance, sort_keys=True).encode()
        fh.write(struct.pack("<Q", len(meta)))
        fh.write(meta)
    finally:
        if owned:
            fh.close()


def load_dirt(path_or_file) -> DIRT:
    fh, owned = _open(path_or_file, "rb")
    try:
        if fh.read(4) != _DIRT_MAGIC:
            raise ValueError("not a DIR1 container")
        (n_layers,) = struct.unpack("<I", fh.read(4))
        layers = [_read_sirt_block(fh) for _ in range(n_layers)]
        (meta_len,) = struct.unpack("<Q", fh.read(8))
        provenance = json.loads(fh.read(meta_len).decode())
        refs = layers[0].references if layers else []
        return DIRT(layers, refs, provenance)
    finally:
        if owned:
            fh.close()


def dirt_bytes(dirt: DIRT) -> bytes:
    buf = io.BytesIO()
    save_dirt(buf, dirt)
    return buf.getvalue()
