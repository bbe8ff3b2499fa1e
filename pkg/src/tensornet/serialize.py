"""File formats: ensemble CSV, SYMT binary tensors, JSON reports and trace CSV."""
from __future__ import annotations

import json
import math
import re
import struct
from pathlib import Path

import numpy as np

from .ensembles import WeightEnsemble
from .tensors import SymmetricTensor

FLOAT_FMT = "%.17g"
SYMT_MAGIC = b"SYMT"
SYMT_VERSION = 1
_HEADER_RE = re.compile(r"#\s*d=(\d+)\s+r=(\d+)\s+kind=(\S+)\s+seed=(-?\d+)")


def fmt(x: float) -> str:
    return FLOAT_FMT % x


def save_ensemble_csv(ens: WeightEnsemble, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# d={ens.d} r={ens.r} kind={ens.kind} seed={ens.seed}\n")
        for row in ens.W:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def load_ensemble_csv(path) -> WeightEnsemble:
    with open(path) as fh:
        header = fh.readline()
        m = _HEADER_RE.match(header)
        if not m:
            raise ValueError(f"{path}: missing or malformed header line {header.strip()!r}")
        d, r, kind, seed = int(m[1]), int(m[2]), m[3], int(m[4])
        W = np.loadtxt(fh, delimiter=",", ndmin=2)
    if W.shape != (r, d):
        raise ValueError(f"{path}: header says {r}x{d} but found {W.shape[0]}x{W.shape[1]}")
    return WeightEnsemble(W, kind=kind, seed=seed)


def save_tensor(T: SymmetricTensor, path) -> None:
    """Binary layout: 'SYMT', u32 version, u32 order, u32 dim, then d^k LE float64."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(SYMT_MAGIC + struct.pack("<III", SYMT_VERSION, T.order, T.dim))
        fh.write(np.ascontiguousarray(T.entries, dtype="<f8").tobytes())
    sidecar = {"order": T.order, "dim": T.dim, "provenance": T.provenance}
    path.with_suffix(path.suffix + ".json").write_text(dumps(sidecar))


def load_tensor(path) -> SymmetricTensor:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != SYMT_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    version, order, dim = struct.unpack("<III", raw[4:16])
    if version != SYMT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    data = np.frombuffer(raw[16:], dtype="<f8")
    if data.size != dim**order:
        raise ValueError(f"{path}: expected {dim ** order} entries, found {data.size}")
    side = path.with_suffix(path.suffix + ".json")
    prov = json.loads(side.read_text()).get("provenance", {}) if side.exists() else {}
    return SymmetricTensor(data.reshape((dim,) * order).astype(float), dim, prov)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    if isinstance(obj, float):
        if math.isnan(obj):
            return None
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return float(fmt(obj))
    return obj


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, NaN as null, floats round-trip exactly."""
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_json(obj, path) -> None:
    Path(path).write_text(dumps(obj))


TRACE_COLUMNS = ("step", "norm_gen_err", "chamfer_err", "raw_mse")


def write_trace_csv(records, path) -> None:
    """records: iterable of (step, norm_gen_err, chamfer_err, raw_mse)."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for step, *vals in records:
            fh.write(",".join([str(int(step))] + [fmt(v) for v in vals]) + "\n")


def read_trace_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
