"""Readers for the solver's run.csv schema and binary checkpoint format.

This package talks to the solver only through its documented file formats:
the diagnostics CSV (named columns, 17-significant-digit floats) and the
checkpoint layout (8 magic bytes ``VPDLRAC1``, u32 version, u64 header
length, JSON header, little-endian float64 payload, trailing 64-bit BLAKE2b
checksum).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"VPDLRAC1"


class FormatError(ValueError):
    pass


def read_run_csv(path):
    """Columns of a run.csv as a dict of numpy arrays."""
    with open(path) as fh:
        header = fh.readline().strip()
        if not header:
            raise FormatError(f"{path}: empty CSV")
        names = header.split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        raise FormatError(f"{path}: CSV has a header but no rows")
    if data.shape[1] != len(names):
        raise FormatError(f"{path}: {data.shape[1]} columns vs "
                          f"{len(names)} header names")
    return {name: data[:, i] for i, name in enumerate(names)}


def require_columns(table, names):
    missing = [n for n in names if n not in table]
    if missing:
        raise FormatError("missing CSV columns: " + ", ".join(missing))


@dataclass
class Checkpoint:
    t: float
    m: int
    weight: str
    mesh_x: dict
    mesh_v: dict
    p_x: int
    q_x: int
    p_v: int
    q_v: int
    S: np.ndarray
    X: np.ndarray
    V: np.ndarray
    U: np.ndarray


def read_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 28:
        raise FormatError("checkpoint truncated")
    body, digest = blob[:-8], blob[-8:]
    if hashlib.blake2b(body, digest_size=8).digest() != digest:
        raise FormatError("checkpoint checksum mismatch")
    if body[:8] != MAGIC:
        raise FormatError("bad checkpoint magic")
    version, = struct.unpack("<I", body[8:12])
    if version != 1:
        raise FormatError(f"unsupported checkpoint version {version}")
    hlen, = struct.unpack("<Q", body[12:20])
    header = json.loads(body[20:20 + hlen].decode())
    arrays = {}
    off = 20 + hlen
    for name, shape in header["arrays"]:
        n = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(body, dtype="<f8", count=n,
                                     offset=off).reshape(shape).copy()
        off += 8 * n
    return Checkpoint(
        t=header["t"], m=header["m"], weight=header["weight"],
        mesh_x=header["mesh_x"], mesh_v=header["mesh_v"],
        p_x=header["p_x"], q_x=header["q_x"],
        p_v=header["p_v"], q_v=header["q_v"],
        S=arrays["S"], X=arrays["X"], V=arrays["V"], U=arrays["U"])


def leaf_geometry(mesh):
    """Lower corners and sizes of the leaves of a serialized mesh."""
    extents = np.asarray(mesh["extents"], dtype=float)
    roots = np.asarray(mesh["root_cells"], dtype=float)
    h0 = (extents[:, 1] - extents[:, 0]) / roots
    levels = np.array([lvl for lvl, _ in mesh["leaves"]])
    idx = np.array([ij for _, ij in mesh["leaves"]], dtype=float)
    sizes = h0[None, :] / 2.0 ** levels[:, None]
    lower = extents[None, :, 0] + idx * sizes
    return lower, sizes


def element_mean_density(cp: Checkpoint):
    """Per-element mean of rho = integral of f over v, from a 2D checkpoint.

    Uses Gauss-Legendre quadrature on the velocity mesh and the fact that
    the first local mode of the orthonormal Legendre basis is the constant.
    """
    deg_v, q = cp.p_v, cp.q_v
    xg, wg = np.polynomial.legendre.leggauss(q)
    b1 = np.zeros((deg_v + 1, q))
    for k in range(deg_v + 1):
        c = np.zeros(k + 1)
        c[k] = 1.0
        b1[k] = np.polynomial.legendre.legval(xg, c) * np.sqrt((2 * k + 1) / 2)

    lower_v, sizes_v = leaf_geometry(cp.mesh_v)
    dim = len(cp.mesh_v["root_cells"])
    if dim == 2:
        modes = [(kx, ky) for kx in range(deg_v + 1) for ky in range(deg_v + 1)]
        basis = np.stack([np.kron(b1[kx], b1[ky]) for kx, ky in modes])
        ref = np.stack(np.meshgrid(xg, xg, indexing="ij"), -1).reshape(-1, 2)
        w_ref = np.kron(wg, wg)
    else:
        basis = b1
        ref = xg[:, None]
        w_ref = wg
    pts = lower_v[:, None, :] + (ref[None] + 1) / 2 * sizes_v[:, None, :]
    wq = np.prod(sizes_v / 2, axis=1)[:, None] * w_ref[None]
    vscale = np.prod(np.sqrt(2.0 / sizes_v), axis=1)
    if cp.weight == "gaussian":
        om = np.exp(-0.5 * np.sum(pts ** 2, axis=-1))
    else:
        om = np.ones(pts.shape[:-1])
    vvals = (cp.V @ basis) * vscale[None, :, None]
    c = np.einsum('jeq,eq->j', vvals, wq * om)          # (V_j, 1)_w

    lower_x, sizes_x = leaf_geometry(cp.mesh_x)
    mean_x = cp.X[:, :, 0] / np.prod(np.sqrt(sizes_x), axis=1)[None, :]
    rho = np.einsum('ie,ij,j->e', mean_x, cp.S, c)
    return rho, lower_x, sizes_x
