"""Time-step orchestration: the rank-adaptive BUG integrator and the
modified projector-splitting (KSL) integrator, plus the outer run loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import adaptivity
from .coupling import (assemble_coupling, cfl_number, k_step, l_step,
                       s_step_backward, s_step_full)
from .dg import FieldBundle, orthonormalize
from .lowrank import LowRankState, _xside_block_qr, augment_bases, truncate
from .poisson import PoissonSolver, compute_moments, zero_field

log = logging.getLogger(__name__)

BUG, KSL = "bug", "ksl"


@dataclass
class IntegratorConfig:
    scheme: str = BUG
    tau: float = 1e-3
    alpha: float = 1.0
    m: int = 0
    trunc_tol: float | None = None
    fixed_rank: int | None = None
    max_rank: int = 30
    self_consistent_field: bool = True
    enrich_velocity: bool = False
    adapt: "adaptivity.AdaptConfig | None" = None

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.trunc_tol is not None and self.trunc_tol < 0:
            raise ValueError("truncation tolerance must be >= 0")
        if self.scheme not in (BUG, KSL):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.scheme == BUG and self.fixed_rank is None and self.trunc_tol is None:
            raise ValueError("the BUG scheme needs a truncation policy")


@dataclass
class StepReport:
    state: LowRankState
    ef: "object"
    rank_before: int
    rank_after: int
    discarded: np.ndarray
    cfl_flag: bool
    wall_time: float
    moments_before: "object" = None


def _field_for(state, config, solver: PoissonSolver | None):
    mom = compute_moments(state)
    if config.self_consistent_field:
        ef = solver.solve(mom.rho)
    else:
        ef = zero_field(state.space_x)
    return mom, ef


def _cfl_flag(state, cm, config):
    nx = cfl_number(state.space_x, cm.ax, config.tau)
    hats = [cm.hat('av', s) for s in range(state.space_v.dim)]
    nv = cfl_number(state.space_v, hats, config.tau) if state.rank > state.m else 0.0
    return max(nx, nv) > 1.0


def bug_step(state: LowRankState, config: IntegratorConfig,
             solver: PoissonSolver | None = None) -> StepReport:
    """One step of the rank-adaptive unconventional integrator.

    K- and L-step run independently from the same state and field, the bases
    are augmented, a full Galerkin S-step is taken forward, and the result is
    truncated with the fixed part against the conservation basis untouched.
    """
    t0 = time.perf_counter()
    mom, ef = _field_for(state, config, solver)
    cm = assemble_coupling(state, ef)
    cfl = _cfl_flag(state, cm, config)

    k1 = k_step(state, ef, config.tau, config.alpha, cm)
    l1 = l_step(state, ef, config.tau, config.alpha, cm)
    if config.enrich_velocity:
        # optional extra enrichment directions v_s * V_j: the advection
        # action on the current basis.  Needed to bootstrap states whose
        # modified L-step is trivial (rank 1, zero field, m = 0).
        sv = state.space_v
        extra = [sv.project_values(sv.eval_at_quad(state.V.data)
                                   * sv.xq[None, ..., s])
                 for s in range(sv.dim)]
        l1 = FieldBundle(sv, np.concatenate([l1.data] + extra))

    xt, vt, m_mat, n_mat = augment_bases(state.X, k1, state.V, l1,
                                         state.m, state.weight)
    s_tilde = m_mat @ state.S @ n_mat.T
    s_tilde = s_step_full(state, s_tilde, xt, vt, ef, config.tau)

    big = LowRankState(xt, s_tilde, vt, state.m, state.weight, state.fixed)
    if config.fixed_rank is not None:
        new = truncate(big, fixed_rank=min(config.fixed_rank, config.max_rank))
    else:
        new = truncate(big, tol=config.trunc_tol)
        if new.rank > config.max_rank:
            log.warning("rank cap %d hit after tolerance truncation", config.max_rank)
            new = truncate(new, fixed_rank=config.max_rank)

    sig_before = np.linalg.svd(s_tilde[:, state.m:], compute_uv=False) \
        if s_tilde.shape[1] > state.m else np.zeros(0)
    discarded = sig_before[new.rank - state.m:]
    return StepReport(new, ef, state.rank, new.rank, discarded, cfl,
                      time.perf_counter() - t0, mom)


def ksl_step(state: LowRankState, config: IntegratorConfig,
             solver: PoissonSolver | None = None) -> StepReport:
    """One step of the modified projector-splitting integrator (fixed rank).

    K-step on the old velocity basis, block-QR restore, backward partial
    S-step with matrices from the new X and old V, then the modified L-step.
    """
    t0 = time.perf_counter()
    m, r = state.m, state.rank
    mom, ef = _field_for(state, config, solver)
    cm0 = assemble_coupling(state, ef)
    cfl = _cfl_flag(state, cm0, config)

    k1 = k_step(state, ef, config.tau, config.alpha, cm0)
    x1, s_tilde = _xside_block_qr(k1, m)

    mid = LowRankState(x1, s_tilde, state.V, m, state.weight, state.fixed)
    cm1 = assemble_coupling(mid, ef)
    if m < r:
        s_hat = s_step_backward(s_tilde[m:, m:], s_tilde[:, :m], cm1, config.tau)
        mid.S = s_tilde.copy()
        mid.S[m:, m:] = s_hat

        l1 = l_step(mid, ef, config.tau, config.alpha, cm1)
        vq, rmat = orthonormalize(
            FieldBundle(state.space_v,
                        np.concatenate([state.fixed.bundle.data, l1.data])
                        if m else l1.data),
            state.weight, fixed_prefix=m)
        s_new = np.zeros((r, r))
        s_new[:, :m] = mid.S[:, :m]
        s_new[m:, :m] += rmat[:m, m:].T      # residual U_a content of L
        s_new[m:, m:] = rmat[m:, m:].T
        new = LowRankState(mid.X, s_new,
                           FieldBundle(state.space_v, vq.data[:r]),
                           m, state.weight, state.fixed)
    else:
        new = mid
    return StepReport(new, ef, r, new.rank, np.zeros(0), cfl,
                      time.perf_counter() - t0, mom)


def step(state, config, solver=None):
    fn = bug_step if config.scheme == BUG else ksl_step
    return fn(state, config, solver)


def run(state: LowRankState, config: IntegratorConfig, t_final: float,
        callbacks=(), observe_stride: int = 1, solver: PoissonSolver | None = None):
    """March until t >= t_final, invoking callbacks every `observe_stride` steps.

    Callbacks receive (step_index, t, report).  Returns the final state.
    With mesh adaptivity enabled the spatial mesh is adapted around every
    step (see adaptivity.adaptive_run for the inner loop).
    """
    if t_final <= 0:
        raise ValueError("t_final must be positive")
    if config.adapt is not None:
        return adaptivity.adaptive_run(state, config, t_final, callbacks,
                                       observe_stride)
    if solver is None and config.self_consistent_field:
        solver = PoissonSolver(state.space_x)
    n_steps = int(round(t_final / config.tau))
    t = 0.0
    for i in range(n_steps):
        report = step(state, config, solver)
        t = (i + 1) * config.tau
        state = report.state
        if (i + 1) % observe_stride == 0 or i + 1 == n_steps:
            for cb in callbacks:
                cb(i + 1, t, report)
    return state
