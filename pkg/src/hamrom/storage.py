"""Binary snapshot and checkpoint containers.

Layout of both formats::

    magic      8 bytes   b"HAMSNAP1" or b"HAMCKPT1"
    hdr_len    uint64    little-endian byte length of the header
    header     hdr_len   UTF-8 JSON, keys sorted, no whitespace
    payload    rest      little-endian float64 values

Snapshot payloads hold the trajectories parameter-major, then time-major, and
each state as ``q`` followed by ``p``.  Checkpoint payloads hold the arrays
listed in ``header["arrays"]`` (name and shape) concatenated in that order,
each flattened in C order.  Headers carry no timestamps, so writing the same
content twice yields identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .foms import params_from_vector, params_vector
from .linear import SnapshotSet, SymplecticBasis
from .networks import NetParams, architecture_from_dict
from .training import Preprocessor, ReducedNet

__all__ = [
    "FormatError",
    "SNAPSHOT_MAGIC",
    "CHECKPOINT_MAGIC",
    "write_container",
    "read_container",
    "write_snapshots",
    "read_snapshots",
    "Checkpoint",
    "write_checkpoint",
    "read_checkpoint",
    "checkpoint_from_basis",
    "checkpoint_from_net",
]

SNAPSHOT_MAGIC = b"HAMSNAP1"
CHECKPOINT_MAGIC = b"HAMCKPT1"
_LE_F64 = np.dtype("<f8")


class FormatError(ValueError):
    """Malformed container file."""


def _encode_header(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def write_container(path, magic: bytes, header: dict, payload: np.ndarray) -> None:
    raw = _encode_header(header)
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        fh.write(np.ascontiguousarray(payload, dtype=_LE_F64).tobytes())


def read_container(path, magic: bytes) -> tuple[dict, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != magic:
        raise FormatError(f"{path}: not a {magic.decode()} file")
    (hlen,) = struct.unpack("<Q", data[8:16])
    if 16 + hlen > len(data):
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header ({exc})") from exc
    body = data[16 + hlen :]
    if len(body) % 8:
        raise FormatError(f"{path}: payload is not a whole number of float64 values")
    return header, np.frombuffer(body, dtype=_LE_F64).astype(np.float64)


# ---------------------------------------------------------------- snapshots


def write_snapshots(path, snaps: SnapshotSet, extra: dict | None = None) -> None:
    header = {
        "format": "snapshots",
        "version": 1,
        "family": snaps.family,
        "n": snaps.n,
        "p": snaps.n_params,
        "m": snaps.n_steps,
        "dt": snaps.dt,
        "params": [[float(v) for v in params_vector(mu)] for mu in snaps.params],
        "byte_order": "little",
        "precision": "float64",
    }
    if extra:
        header["meta"] = extra
    write_container(path, SNAPSHOT_MAGIC, header, snaps.trajectories.ravel())


def read_snapshots(path) -> tuple[SnapshotSet, dict]:
    header, payload = read_container(path, SNAPSHOT_MAGIC)
    try:
        p, m, n = int(header["p"]), int(header["m"]), int(header["n"])
        expected = p * (m + 1) * 2 * n
        if payload.size != expected:
            raise FormatError(f"{path}: payload has {payload.size} values, header implies {expected}")
        params = [params_from_vector(header["family"], v) for v in header["params"]]
    except KeyError as exc:
        raise FormatError(f"{path}: header is missing {exc}") from exc
    traj = payload.reshape(p, m + 1, 2 * n)
    return SnapshotSet(traj, params, float(header["dt"]), header["family"]), header


# ---------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    """Reduced model on disk: a linear basis or a trained network."""

    method: str
    family: str
    k: int
    dt: float
    arrays: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def basis(self) -> SymplecticBasis:
        if self.method not in ("psd", "pod"):
            raise ValueError(f"checkpoint holds a {self.method} model, not a basis")
        kind = "psd_cotangent_lift" if self.method == "psd" else "pod"
        return SymplecticBasis(self.arrays["A"], kind, self.arrays.get("phi"), self.arrays.get("sigma"))

    def net(self) -> ReducedNet:
        if self.method not in ("aehnn", "aeflow"):
            raise ValueError(f"checkpoint holds a {self.method} model, not a network")
        m = self.meta
        params = NetParams(dict(self.arrays), m.get("seed"))
        return ReducedNet(
            "ae_hnn" if self.method == "aehnn" else "ae_flow",
            architecture_from_dict(m["ae"]),
            architecture_from_dict(m["dyn"]),
            params,
            self.dt,
            Preprocessor.from_dict(m["preprocessor"]),
            m.get("fp_tol", 1e-10),
            m.get("fp_max_iter", 100),
        )


def checkpoint_from_basis(basis: SymplecticBasis, family: str, dt: float, meta: dict | None = None) -> Checkpoint:
    method = "psd" if basis.kind == "psd_cotangent_lift" else "pod"
    arrays = {"A": basis.A}
    if basis.phi is not None:
        arrays["phi"] = basis.phi
    if basis.sigma is not None:
        arrays["sigma"] = basis.sigma
    return Checkpoint(method, family, basis.k, dt, arrays, dict(meta or {}))


def checkpoint_from_net(net: ReducedNet, family: str, meta: dict | None = None) -> Checkpoint:
    m = dict(meta or {})
    m.update(
        {
            "ae": net.ae.to_dict(),
            "dyn": net.dyn.to_dict(),
            "preprocessor": net.prep.to_dict(),
            "seed": net.params.seed,
            "fp_tol": net.fp_tol,
            "fp_max_iter": net.fp_max_iter,
        }
    )
    method = "aehnn" if net.kind == "ae_hnn" else "aeflow"
    return Checkpoint(method, family, net.ae.latent_dim // 2, net.dt, dict(net.params.arrays), m)


def write_checkpoint(path, ckpt: Checkpoint) -> None:
    names = list(ckpt.arrays)
    header = {
        "format": "checkpoint",
        "version": 1,
        "method": ckpt.method,
        "family": ckpt.family,
        "k": ckpt.k,
        "dt": ckpt.dt,
        "arrays": [[name, list(np.shape(ckpt.arrays[name]))] for name in names],
        "param_count": int(sum(np.size(ckpt.arrays[n]) for n in names)),
        "meta": ckpt.meta,
        "byte_order": "little",
        "precision": "float64",
    }
    payload = np.concatenate([np.ravel(ckpt.arrays[n]) for n in names]) if names else np.zeros(0)
    write_container(path, CHECKPOINT_MAGIC, header, payload)


def read_checkpoint(path) -> Checkpoint:
    header, payload = read_container(path, CHECKPOINT_MAGIC)
    try:
        if payload.size != int(header["param_count"]):
            raise FormatError(f"{path}: payload has {payload.size} values, manifest declares {header['param_count']}")
        arrays, offset = {}, 0
        for name, shape in header["arrays"]:
            size = int(np.prod(shape)) if shape else 1
            arrays[name] = payload[offset : offset + size].reshape(shape).copy()
            offset += size
        if offset != payload.size:
            raise FormatError(f"{path}: array table does not cover the payload")
        return Checkpoint(header["method"], header["family"], int(header["k"]), float(header["dt"]), arrays, header["meta"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: bad manifest ({exc})") from exc
