"""Experiment runner: YAML config in, CSV diagnostics and checkpoints out.

CSV schema (fixed column order, floats with 17 significant digits):
  t, mass, mass_rel_err, momentum_1..d, momentum_abs_err, electric_energy,
  kinetic_energy, total_energy, total_energy_rel_err, rank, n_elements_x,
  n_elements_v, continuity_res_rho, continuity_res_j_1..d, cfl_flag,
  wall_time_s

Checkpoints are little-endian binary: 8 magic bytes, a u32 format version, a
u64 header length, a JSON header describing meshes/spaces/arrays, the raw
float64 payload, and a trailing 64-bit BLAKE2b checksum of everything before
it.  Round trips are bitwise exact.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import struct
import sys
import time
from dataclasses import dataclass, field, asdict

import numpy as np
import yaml

from . import scenarios
from .adaptivity import AdaptConfig
from .dg import DgSpace, FieldBundle, WeightDescriptor
from .diagnostics import continuity_residual, observe
from .integrators import BUG, KSL, IntegratorConfig, run
from .lowrank import FixedBasis, LowRankState
from .mesh import PeriodicMesh
from .poisson import compute_moments, solve_poisson, zero_field

log = logging.getLogger(__name__)

MAGIC = b"VPDLRAC1"
CP_VERSION = 1
THREADS_ENV = "VLASOV_DLRA_THREADS"

SCENARIOS = ("landau_1d", "landau_2d", "free_transport_2d", "custom")


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class SimConfig:
    scenario: str = "landau_1d"
    n_x: int = 32
    n_v: int = 64
    degree: int = 2
    quad_points: int | None = None
    tau: float = 1e-4
    t_final: float = 40.0
    alpha: float = 1.0
    m: int = 2
    scheme: str = BUG
    trunc_tol: float | None = None
    fixed_rank: int | None = 10
    max_rank: int = 30
    initial_rank: int | None = None
    adaptive_mesh: bool = False
    enrich_velocity: bool = False
    adapt_epsilon: float = 1e-3
    adapt_c: float = 0.15
    adapt_max_level: int = 3
    output_stride: int = 1
    threads: int | None = None
    # custom-scenario knobs (cosine-perturbed Maxwellian)
    custom_dim: int = 1
    custom_alpha: float = scenarios.LANDAU_ALPHA
    custom_k: float = scenarios.LANDAU_K

    def validate(self):
        problems = []
        if self.scenario not in SCENARIOS:
            problems.append(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.n_x < 1 or self.n_v < 1:
            problems.append("n_x and n_v must be positive")
        if self.degree < 0:
            problems.append("degree must be >= 0")
        if self.tau <= 0:
            problems.append("tau must be positive")
        if self.t_final <= 0:
            problems.append("t_final must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            problems.append(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.m < 0:
            problems.append("m must be >= 0")
        if self.scheme not in (BUG, KSL):
            problems.append(f"scheme must be 'bug' or 'ksl', got {self.scheme!r}")
        if self.scheme == BUG and self.trunc_tol is None and self.fixed_rank is None:
            problems.append("the bug scheme needs trunc_tol or fixed_rank")
        if self.trunc_tol is not None and self.trunc_tol < 0:
            problems.append("trunc_tol must be >= 0")
        if self.adaptive_mesh:
            if self.adapt_epsilon <= 0:
                problems.append("adapt_epsilon must be positive")
            if not 0 < self.adapt_c < 1:
                problems.append("adapt_c must lie in (0, 1)")
        if self.output_stride < 1:
            problems.append("output_stride must be >= 1")
        if problems:
            raise ConfigError(problems)


SCENARIO_DEFAULTS = {
    # section-4 settings of the experiments, at paper resolution
    "landau_1d": dict(n_x=32, n_v=64, degree=2, tau=1e-4, t_final=40.0,
                      m=2, scheme=BUG, fixed_rank=10, alpha=1.0),
    "landau_2d": dict(n_x=32, n_v=64, degree=2, tau=1e-4, t_final=40.0,
                      m=3, scheme=BUG, trunc_tol=1e-7, fixed_rank=None, alpha=1.0),
    "free_transport_2d": dict(n_x=16, n_v=32, degree=2, tau=2.5e-3, t_final=2.0,
                              m=0, scheme=BUG, trunc_tol=1e-4, fixed_rank=None,
                              alpha=1.0, adaptive_mesh=True, adapt_epsilon=1e-3,
                              adapt_c=0.15, enrich_velocity=True),
    "custom": dict(),
}


def load_config(path, overrides=()):
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError([f"config root must be a mapping, got {type(raw).__name__}"])
    scenario = raw.get("scenario", "landau_1d")
    merged = dict(SCENARIO_DEFAULTS.get(scenario, {}))
    merged.update(raw)
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError([f"override {ov!r} is not of the form key=value"])
        key, val = ov.split("=", 1)
        merged[key.strip()] = yaml.safe_load(val)
    known = set(SimConfig.__dataclass_fields__)
    unknown = sorted(set(merged) - known)
    if unknown:
        raise ConfigError([f"unknown config field {k!r}" for k in unknown])
    cfg = SimConfig(**_coerce_numbers(merged))
    cfg.validate()
    return cfg


_FLOAT_FIELDS = {"tau", "t_final", "alpha", "trunc_tol", "adapt_epsilon",
                 "adapt_c", "custom_alpha", "custom_k"}
_INT_FIELDS = {"n_x", "n_v", "degree", "quad_points", "m", "fixed_rank",
               "max_rank", "initial_rank", "adapt_max_level", "output_stride",
               "threads", "custom_dim"}


def _coerce_numbers(merged):
    """YAML 1.1 reads '1e-3' as a string; coerce numeric fields explicitly."""
    out = dict(merged)
    problems = []
    for key, val in merged.items():
        if val is None or not isinstance(val, str):
            continue
        try:
            if key in _FLOAT_FIELDS:
                out[key] = float(val)
            elif key in _INT_FIELDS:
                out[key] = int(val)
        except ValueError:
            problems.append(f"field {key!r} expects a number, got {val!r}")
    if problems:
        raise ConfigError(problems)
    return out


def build_state(cfg: SimConfig) -> LowRankState:
    rank = cfg.initial_rank
    if rank is None:
        rank = cfg.fixed_rank if cfg.fixed_rank is not None else cfg.m + 5
    if cfg.scenario == "landau_1d":
        return scenarios.landau_1d(cfg.n_x, cfg.n_v, cfg.degree, cfg.m,
                                   cfg.quad_points, rank=rank)
    if cfg.scenario == "landau_2d":
        return scenarios.landau_2d(cfg.n_x, cfg.n_v, cfg.degree, cfg.m,
                                   cfg.quad_points, rank=rank)
    if cfg.scenario == "free_transport_2d":
        return scenarios.free_transport_2d(cfg.n_x, cfg.n_v, cfg.degree,
                                           cfg.quad_points, rank=rank)
    # custom: cosine-perturbed Maxwellian in custom_dim dimensions
    if cfg.custom_dim == 1:
        return scenarios.landau_1d(cfg.n_x, cfg.n_v, cfg.degree, cfg.m,
                                   cfg.quad_points, rank=rank)
    return scenarios.landau_2d(cfg.n_x, cfg.n_v, cfg.degree, cfg.m,
                               cfg.quad_points, rank=rank)


def integrator_config(cfg: SimConfig) -> IntegratorConfig:
    adapt = None
    if cfg.adaptive_mesh:
        adapt = AdaptConfig(epsilon=cfg.adapt_epsilon, c=cfg.adapt_c,
                            max_level=cfg.adapt_max_level)
    return IntegratorConfig(
        scheme=cfg.scheme, tau=cfg.tau, alpha=cfg.alpha, m=cfg.m,
        trunc_tol=cfg.trunc_tol, fixed_rank=cfg.fixed_rank,
        max_rank=cfg.max_rank,
        self_consistent_field=(cfg.scenario != "free_transport_2d"),
        enrich_velocity=cfg.enrich_velocity,
        adapt=adapt)


# -- CSV writer -------------------------------------------------------------------


def csv_header(dim):
    cols = ["t", "mass", "mass_rel_err"]
    cols += [f"momentum_{s + 1}" for s in range(dim)]
    cols += ["momentum_abs_err", "electric_energy", "kinetic_energy",
             "total_energy", "total_energy_rel_err", "rank", "n_elements_x",
             "n_elements_v", "continuity_res_rho"]
    cols += [f"continuity_res_j_{s + 1}" for s in range(dim)]
    cols += ["cfl_flag", "wall_time_s"]
    return cols


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


class CsvWriter:
    """Streams diagnostics rows; keeps the previous state for residuals."""

    def __init__(self, fh, state, ef, tau, stride=1):
        self.fh = fh
        self.dim = state.space_x.dim
        self.tau = tau
        self.stride = stride
        self.prev = state
        self.ref = observe(state, ef)
        fh.write(",".join(csv_header(self.dim)) + "\n")
        self.write_row(0.0, self.ref, 0.0, np.zeros(self.dim), False, 0.0)

    def write_row(self, t, d, res_rho, res_j, cfl, wall):
        ref = self.ref
        mom_err = float(np.linalg.norm(np.asarray(d.momentum) - ref.momentum))
        row = [d.t, d.mass, abs(d.mass - ref.mass) / abs(ref.mass)]
        row += list(np.atleast_1d(d.momentum))
        row += [mom_err, d.electric_energy, d.kinetic_energy, d.total_energy,
                abs(d.total_energy - ref.total_energy) / abs(ref.total_energy),
                d.rank, d.n_elements_x, d.n_elements_v, res_rho]
        row += list(np.atleast_1d(res_j))
        row += [int(cfl), wall]
        self.fh.write(",".join(_fmt(x) for x in row) + "\n")

    def __call__(self, i, t, report):
        state = report.state
        if i % self.stride == 0:
            d = observe(state, report.ef, t=t)
            same_mesh = state.space_x.generation == self.prev.space_x.generation
            if same_mesh:
                res_rho = continuity_residual(self.prev, state, report.ef,
                                              self.tau, "rho")
                res_j = continuity_residual(self.prev, state, report.ef,
                                            self.tau, "j")
            else:
                res_rho, res_j = 0.0, np.zeros(self.dim)
            self.write_row(t, d, res_rho, res_j, report.cfl_flag,
                           report.wall_time)
            self.fh.flush()
        self.prev = state


# -- checkpoints -------------------------------------------------------------------


def _mesh_payload(mesh: PeriodicMesh):
    return {
        "dim": mesh.dim,
        "extents": [list(e) for e in mesh.extents],
        "root_cells": list(mesh.root_cells),
        "generation": mesh.generation,
        "leaves": [[k[0], list(k[1])] for k in mesh.leaves],
    }


def _mesh_from_payload(d):
    leaves = tuple((lvl, tuple(idx)) for lvl, idx in d["leaves"])
    return PeriodicMesh(d["dim"], tuple(tuple(e) for e in d["extents"]),
                        tuple(d["root_cells"]), leaves, d["generation"])


def save_checkpoint(path, state: LowRankState, t: float, extra=None):
    arrays = [("S", state.S), ("X", state.X.data), ("V", state.V.data),
              ("U", state.fixed.bundle.data)]
    header = {
        "t": t,
        "m": state.m,
        "weight": state.weight.kind,
        "p_x": state.space_x.p, "q_x": state.space_x.q,
        "p_v": state.space_v.p, "q_v": state.space_v.q,
        "mesh_x": _mesh_payload(state.space_x.mesh),
        "mesh_v": _mesh_payload(state.space_v.mesh),
        "arrays": [[name, list(a.shape)] for name, a in arrays],
        "extra": extra or {},
    }
    hdr = json.dumps(header, sort_keys=True).encode()
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", CP_VERSION)
    blob += struct.pack("<Q", len(hdr))
    blob += hdr
    for _, a in arrays:
        blob += np.ascontiguousarray(a, dtype="<f8").tobytes()
    digest = hashlib.blake2b(bytes(blob), digest_size=8).digest()
    with open(path, "wb") as fh:
        fh.write(bytes(blob) + digest)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 12 + 8:
        raise ValueError("checkpoint truncated")
    body, digest = blob[:-8], blob[-8:]
    if hashlib.blake2b(body, digest_size=8).digest() != digest:
        raise ValueError("checkpoint checksum mismatch")
    if body[:8] != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version, = struct.unpack("<I", body[8:12])
    if version != CP_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    hlen, = struct.unpack("<Q", body[12:20])
    header = json.loads(body[20:20 + hlen].decode())
    off = 20 + hlen
    arrays = {}
    for name, shape in header["arrays"]:
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body, dtype="<f8", count=n, offset=off).reshape(shape)
        arrays[name] = arr.copy()
        off += 8 * n
    mesh_x = _mesh_from_payload(header["mesh_x"])
    mesh_v = _mesh_from_payload(header["mesh_v"])
    sx = DgSpace(mesh_x, header["p_x"], header["q_x"])
    sv = DgSpace(mesh_v, header["p_v"], header["q_v"])
    weight = WeightDescriptor(header["weight"])
    fixed = FixedBasis(FieldBundle(sv, arrays["U"]), weight, header["m"])
    state = LowRankState(FieldBundle(sx, arrays["X"]), arrays["S"],
                         FieldBundle(sv, arrays["V"]), header["m"], weight, fixed)
    return state, header["t"], header.get("extra", {})


def checkpoint_roundtrip(state: LowRankState, path=None) -> LowRankState:
    """Serialize and deserialize; the result is bitwise identical."""
    import tempfile
    if path is None:
        fd, path = tempfile.mkstemp(suffix=".ckpt")
        os.close(fd)
    save_checkpoint(path, state, 0.0)
    new, _, _ = load_checkpoint(path)
    return new


# -- runner --------------------------------------------------------------------------


def _apply_threads(n):
    if n is None:
        n = os.environ.get(THREADS_ENV)
        n = int(n) if n else None
    if n is None:
        return None
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(n)
    except ImportError:
        log.warning("threadpoolctl unavailable; thread count request ignored")
    return n


def run_experiment(config_path, overrides=(), output_dir="out", threads=None,
                   resume=None) -> int:
    try:
        cfg = load_config(config_path, overrides)
    except ConfigError as err:
        record = {"error": "config_validation", "problems": err.problems}
        print(json.dumps(record), file=sys.stderr)
        return 2
    os.makedirs(output_dir, exist_ok=True)
    threads = _apply_threads(threads if threads is not None else cfg.threads)

    t0 = 0.0
    if resume:
        state, t0, _ = load_checkpoint(resume)
    else:
        state = build_state(cfg)
    icfg = integrator_config(cfg)

    manifest = {"config": asdict(cfg), "threads": threads,
                "resumed_from": resume, "t_start": t0,
                "schema": csv_header(state.space_x.dim)}
    with open(os.path.join(output_dir, "manifest.yaml"), "w") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=True)

    if icfg.self_consistent_field:
        ef0 = solve_poisson(compute_moments(state).rho)
    else:
        ef0 = zero_field(state.space_x)

    csv_path = os.path.join(output_dir, "run.csv")
    status = 0
    with open(csv_path, "w") as fh:
        writer = CsvWriter(fh, state, ef0, cfg.tau, stride=cfg.output_stride)
        try:
            final = run(state, icfg, cfg.t_final - t0, callbacks=[writer])
        except Exception as err:  # persist what we have, then report
            save_checkpoint(os.path.join(output_dir, "failure.ckpt"),
                            writer.prev, t0)
            record = {"error": "run_failed", "message": str(err),
                      "type": type(err).__name__}
            with open(os.path.join(output_dir, "error.json"), "w") as efh:
                json.dump(record, efh)
            print(json.dumps(record), file=sys.stderr)
            return 1
    save_checkpoint(os.path.join(output_dir, "final.ckpt"), final, cfg.t_final)
    return status


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="vlasov-dlra",
        description="Conservative dynamical low-rank DG Vlasov-Poisson solver")
    parser.add_argument("config", help="path to a YAML run configuration")
    parser.add_argument("--override", "-D", action="append", default=[],
                        help="key=value config override (repeatable)")
    parser.add_argument("--output", default="out", help="output directory")
    parser.add_argument("--threads", type=int, default=None,
                        help=f"BLAS thread count (default: ${THREADS_ENV})")
    parser.add_argument("--resume", default=None,
                        help="checkpoint to resume from")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    return run_experiment(args.config, args.override, args.output,
                          args.threads, args.resume)


if __name__ == "__main__":
    sys.exit(main())
