"""Projection-defect error indicators and the refine/coarsen driver.

The indicator of an element is the L2 norm of the modes a field loses when
projected one polynomial degree down, maximized over bundle components.  The
adaptive driver marks, refines (exact polynomial restriction), re-steps, and
finally coarsens sibling groups whose summed indicators fall below the
safety threshold (L2 projection, followed by re-orthonormalization).
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from . import mesh as vm
from .dg import DgSpace, FieldBundle, orthonormalize, weighted_project_Pw
from .lowrank import LowRankState

log = logging.getLogger(__name__)


@dataclass
class AdaptConfig:
    epsilon: float
    c: float = 0.15
    max_level: int = 3
    adapt_spatial: bool = True
    adapt_velocity: bool = False

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 < self.c < 1.0:
            raise ValueError("coarsening factor c must lie in (0, 1)")


@dataclass
class AdaptReport:
    refined: int = 0
    coarsened: int = 0
    loops: int = 0
    coarsen_defect: float = 0.0


def error_indicator(bundle: FieldBundle) -> np.ndarray:
    """Per-element defect of the projection onto degree p-1, max over fields."""
    space = bundle.space
    if space.p < 1:
        raise ValueError("error indicator needs degree p >= 1")
    defect = space.modes.max(axis=1) == space.p
    tail = bundle.data[..., defect]
    return np.sqrt(np.sum(tail ** 2, axis=-1)).max(axis=0)


# -- inter-mesh transfer ----------------------------------------------------------

def _half_transfer(space: DgSpace):
    """Per-axis child-from-parent matrices T[kc, kp]; exact for degree <= p."""
    xg, wg = space.xg, space.wg
    from .dg import _legendre_table
    bc = _legendre_table(space.p, xg)
    out = []
    for lo in (True, False):
        mapped = (xg - 1.0) / 2.0 if lo else (xg + 1.0) / 2.0
        bp = _legendre_table(space.p, mapped)
        out.append(np.einsum('q,cq,pq->cp', wg, bc, bp) / math.sqrt(2.0))
    return out


def _compose_down(space, path):
    """Transfer matrix (n_loc, n_loc) for a chain of child offsets."""
    halves = space._halves if hasattr(space, "_halves") else None
    if halves is None:
        halves = _half_transfer(space)
        space._halves = halves
    n1 = space.p + 1
    t_ax = [np.eye(n1) for _ in range(space.dim)]
    for offsets in path:
        for s in range(space.dim):
            t_ax[s] = halves[0 if offsets[s] == 0 else 1] @ t_ax[s]
    if space.dim == 1:
        return t_ax[0]
    full = np.einsum('ac,bd->abcd', t_ax[0], t_ax[1])
    return full.reshape(space.n_loc, space.n_loc)


def _descent_path(ancestor, descendant):
    """Child offsets from ancestor down to descendant, top level first."""
    lvl_a, lvl_d = ancestor[0], descendant[0]
    path = []
    for lvl in range(lvl_a + 1, lvl_d + 1):
        shift = lvl_d - lvl
        idx = tuple(i >> shift for i in descendant[1])
        pidx = tuple(i >> (shift + 1) for i in descendant[1])
        path.append(tuple(i - 2 * p for i, p in zip(idx, pidx)))
    return path


def transfer(old_space: DgSpace, new_space: DgSpace, data: np.ndarray) -> np.ndarray:
    """Move bundle coefficients between meshes of the same hierarchy.

    Refinement restriction is exact; coarsening applies the elementwise L2
    projection of the children union.
    """
    old_mesh, new_mesh = old_space.mesh, new_space.mesh
    old_index = old_mesh.leaf_index
    old_set = set(old_mesh.leaves)
    out_shape = data.shape[:-2] + (new_mesh.n_leaves, new_space.n_loc)
    out = np.zeros(out_shape)
    for pos, key in enumerate(new_mesh.leaves):
        cover = vm._covering_leaf(old_set, key)
        if cover is not None:
            if cover == key:
                out[..., pos, :] = data[..., old_index[key], :]
            else:  # new leaf is a descendant: exact restriction
                t = _compose_down(old_space, _descent_path(cover, key))
                out[..., pos, :] = data[..., old_index[cover], :] @ t.T
        else:     # new leaf is an ancestor: L2 projection of the children
            stack = [key]
            while stack:
                k = stack.pop()
                if k in old_set:
                    t = _compose_down(old_space, _descent_path(key, k))
                    out[..., pos, :] += data[..., old_index[k], :] @ t
                else:
                    stack.extend(vm._children(k, old_mesh.dim))
    return out


# -- one adapt pass over a field bundle ---------------------------------------------

def adapt_step(mesh: vm.PeriodicMesh, bundle: FieldBundle, config: AdaptConfig):
    """Refine above epsilon, then coarsen sibling groups below c*epsilon.

    Returns (new_mesh, transferred_bundle, report).  The refinement loop
    repeats until no element exceeds the threshold or max_level is reached.
    """
    report = AdaptReport()
    space = bundle.space
    data = bundle.data
    while True:
        levels = space.mesh.levels
        ind = error_indicator(FieldBundle(space, data))
        marks = [space.mesh.leaves[e] for e in np.where(
            (ind > config.epsilon) & (levels < config.max_level))[0]]
        if np.any((ind > config.epsilon) & (levels >= config.max_level)):
            log.warning("adapt: %d elements above threshold at max_level",
                        int(np.sum((ind > config.epsilon) & (levels >= config.max_level))))
        if not marks:
            break
        new_mesh = vm.refine(space.mesh, marks)
        new_space = DgSpace(new_mesh, space.p, space.q)
        data = transfer(space, new_space, data)
        space = new_space
        report.refined += len(marks)
        report.loops += 1

    # coarsening: sibling groups with all children leaves
    ind = error_indicator(FieldBundle(space, data))
    mesh_now = space.mesh
    groups = {}
    for pos, key in enumerate(mesh_now.leaves):
        if key[0] == 0:
            continue
        groups.setdefault(vm._parent(key), []).append(pos)
    parents = [p for p, kids in groups.items()
               if len(kids) == 2 ** mesh_now.dim
               and ind[kids].sum() < config.c * config.epsilon]
    if parents:
        new_mesh, skipped = vm.coarsen_with_report(mesh_now, parents)
        if new_mesh is not mesh_now:
            new_space = DgSpace(new_mesh, space.p, space.q)
            coarse = transfer(space, new_space, data)
            back = transfer(new_space, space, coarse)
            report.coarsen_defect = float(np.linalg.norm(back - data))
            report.coarsened = len(parents) - len(skipped)
            space, data = new_space, coarse
    return space.mesh, FieldBundle(space, data), report


# -- adaptive time loop ----------------------------------------------------------------

def _spatial_bundle(state: LowRankState) -> FieldBundle:
    """Physically scaled columns K = X.S used for spatial indicators."""
    return state.k_bundle()


def _velocity_bundle(state: LowRankState) -> FieldBundle:
    pwv = weighted_project_Pw(state.V, state.weight)
    return FieldBundle(state.space_v,
                       np.einsum('ij,jek->iek', state.S, pwv.data))


def _move_state(state: LowRankState, which: str, new_space: DgSpace,
                reorthonormalize: bool) -> LowRankState:
    if which == "x":
        data = transfer(state.space_x, new_space, state.X.data)
        xb = FieldBundle(new_space, data)
        s = state.S
        if reorthonormalize:
            xb, r = orthonormalize(xb)
            s = r @ s
        return LowRankState(xb, s, state.V, state.m, state.weight, state.fixed)
    data = transfer(state.space_v, new_space, state.V.data)
    vb = FieldBundle(new_space, data)
    s = state.S
    if reorthonormalize:
        vb, r = orthonormalize(vb, state.weight)
        s = s @ r.T
    return LowRankState(state.X, s, vb, state.m, state.weight, state.fixed)


def adaptive_run(state: LowRankState, config, t_final: float,
                 callbacks=(), observe_stride: int = 1):
    """Mesh- and rank-adaptive march (the free-transport experiment driver).

    Conservation is not claimed on adaptive meshes; the driver therefore
    forces m = 0.  Each step is recomputed after every refinement round until
    no element exceeds the threshold, then eligible siblings are coarsened.
    """
    from .integrators import step as one_step  # local import to avoid a cycle
    from .poisson import PoissonSolver

    acfg: AdaptConfig = config.adapt
    if state.m != 0:
        log.warning("adaptive run forces m = 0: conservation is not claimed "
                    "under mesh adaptivity")
        state = LowRankState(state.X, state.S, state.V, 0, state.weight, state.fixed)

    # initial refinement around the initial condition
    if acfg.adapt_spatial:
        state = _initial_adapt(state, acfg, "x")
    if acfg.adapt_velocity:
        state = _initial_adapt(state, acfg, "v")

    solver = PoissonSolver(state.space_x) if config.self_consistent_field else None
    n_steps = int(round(t_final / config.tau))
    for i in range(n_steps):
        t0 = time.perf_counter()
        while True:
            report = one_step(state, config, solver)
            if not acfg.adapt_spatial:
                break
            cand = report.state
            ind = error_indicator(_spatial_bundle(cand))
            levels = cand.space_x.mesh.levels
            marks = [cand.space_x.mesh.leaves[e] for e in np.where(
                (ind > acfg.epsilon) & (levels < acfg.max_level))[0]]
            if not marks:
                break
            new_mesh = vm.refine(cand.space_x.mesh, marks)
            new_space = DgSpace(new_mesh, state.space_x.p, state.space_x.q)
            state = _move_state(state, "x", new_space, reorthonormalize=False)
            if solver is not None:
                solver = PoissonSolver(new_space)
        state = report.state

        if acfg.adapt_spatial:
            state, solver = _coarsen_phase(state, acfg, solver,
                                           config.self_consistent_field)
        report.state = state
        report.wall_time = time.perf_counter() - t0
        if (i + 1) % observe_stride == 0 or i + 1 == n_steps:
            for cb in callbacks:
                cb(i + 1, (i + 1) * config.tau, report)
    return state


def _initial_adapt(state: LowRankState, acfg: AdaptConfig, which: str) -> LowRankState:
    while True:
        bundle = _spatial_bundle(state) if which == "x" else _velocity_bundle(state)
        space = bundle.space
        ind = error_indicator(bundle)
        levels = space.mesh.levels
        marks = [space.mesh.leaves[e] for e in np.where(
            (ind > acfg.epsilon) & (levels < acfg.max_level))[0]]
        if not marks:
            return state
        new_space = DgSpace(vm.refine(space.mesh, marks), space.p, space.q)
        state = _move_state(state, which, new_space, reorthonormalize=False)


def _coarsen_phase(state, acfg, solver, self_consistent):
    ind = error_indicator(_spatial_bundle(state))
    mesh_now = state.space_x.mesh
    groups = {}
    for pos, key in enumerate(mesh_now.leaves):
        if key[0] == 0:
            continue
        groups.setdefault(vm._parent(key), []).append(pos)
    parents = [p for p, kids in groups.items()
               if len(kids) == 2 ** mesh_now.dim
               and ind[kids].sum() < acfg.c * acfg.epsilon]
    if not parents:
        return state, solver
    new_mesh, _ = vm.coarsen_with_report(mesh_now, parents)
    if new_mesh is mesh_now:
        return state, solver
    new_space = DgSpace(new_mesh, state.space_x.p, state.space_x.q)
    state = _move_state(state, "x", new_space, reorthonormalize=True)
    if self_consistent:
        from .poisson import PoissonSolver
        solver = PoissonSolver(new_space)
    return state, solver
