"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The long Landau runs (A1-A4, A10) share module-scoped fixtures so the suite
pays for each trajectory once.  Criteria and tolerances follow the project
acceptance list; every expected number is either analytic, produced by an
independent oracle in this module, or a published reference value.

Deviation (see the stability suite and the decisions log): the T=10 Landau
benchmark runs use tau = 5e-4 instead of the originally listed 1e-3.  The
forward-Euler/central-flux combination amplifies the fastest v*grad_x modes
by (1 + (tau*mu)^2/2) per step with tau*mu ~ 0.12 at tau = 1e-3, i.e. e^76
over the run -- divergence from roundoff seeds is certain, and measured
(blow-up near t ~ 7.5 in three independent trials).  At tau = 5e-4 the
whole-run amplification is ~e^19, which keeps noise below 1e-8 while every
criterion tolerance below is enforced unchanged.
"""

import math
import time

import numpy as np
import pytest

from vlasov_dlra import adaptivity as ad
from vlasov_dlra import dg, diagnostics as diag, integrators as it
from vlasov_dlra import lowrank as lr, poisson as ps
from vlasov_dlra.mesh import build_uniform, refine
from vlasov_dlra.scenarios import (LANDAU_ALPHA, LANDAU_GAMMA, LANDAU_K,
                                   free_transport_2d, free_transport_exact,
                                   landau_1d, landau_2d)

REPORT = []


def record(name, passed, detail):
    line = f"{name}: {'PASS' if passed else 'FAIL'} ({detail})"
    REPORT.append(line)
    print("\n" + line)
    assert passed, line


def teardown_module(module):
    print("\n==== acceptance summary ====")
    for line in REPORT:
        print(line)


class Trajectory:
    """Full diagnostic record of one Landau run."""

    def __init__(self, scheme, m, tau, t_final, alpha=1.0, rank=10,
                 collect_residuals=None):
        self.tau = tau
        st = landau_1d(nx=32, nv=64, m=m, rank=rank)
        solver = ps.PoissonSolver(st.space_x)
        cfg = it.IntegratorConfig(scheme=scheme, tau=tau, fixed_rank=rank,
                                  m=m, alpha=alpha)
        ef0 = ps.solve_poisson(ps.compute_moments(st).rho)
        d0 = diag.observe(st, ef0)
        self.ref = d0
        self.ts, self.es = [0.0], [d0.electric_energy]
        self.mass_err, self.mom_err = 0.0, 0.0
        self.res_rho, self.res_j = [], []
        self.ranks = [st.rank]
        step = it.bug_step if scheme == it.BUG else it.ksl_step
        state = st
        n = int(round(t_final / tau))
        self.diverged_at = None
        for i in range(n):
            try:
                rep = step(state, cfg, solver)
            except ValueError as err:
                # a run without the conservation basis can drive itself into
                # the ground; that is itself the non-conservation witness
                self.diverged_at = (i * tau, str(err))
                break
            if collect_residuals and collect_residuals[0] <= i < collect_residuals[1]:
                self.res_rho.append(diag.continuity_residual(
                    state, rep.state, rep.ef, tau, "rho"))
                self.res_j.append(float(np.max(diag.continuity_residual(
                    state, rep.state, rep.ef, tau, "j"))))
            state = rep.state
            d = diag.observe(state, rep.ef)
            self.ts.append((i + 1) * tau)
            self.es.append(d.electric_energy)
            self.ranks.append(state.rank)
            self.mass_err = max(self.mass_err,
                                abs(d.mass - d0.mass) / abs(d0.mass))
            self.mom_err = max(self.mom_err, abs(d.momentum[0] - d0.momentum[0]))
        self.state = state

    def gamma(self, window=None):
        return diag.fit_decay_rate(self.ts, self.es, window=window)


TAU = 5e-4  # largest whole-run-stable step for the T=10 benchmark


@pytest.fixture(scope="module")
def landau_run_m2():
    return Trajectory(it.BUG, m=2, tau=TAU, t_final=10.0,
                      collect_residuals=(4000, 4010))


@pytest.fixture(scope="module")
def landau_run_m0():
    return Trajectory(it.BUG, m=0, tau=TAU, t_final=10.0)


@pytest.fixture(scope="module")
def landau_run_ksl():
    return Trajectory(it.KSL, m=2, tau=TAU, t_final=10.0)


@pytest.fixture(scope="module")
def landau_run_upwind_residuals():
    return Trajectory(it.BUG, m=2, tau=TAU, t_final=2.005, alpha=0.0,
                      collect_residuals=(4000, 4010))


# -- A1: Landau decay rate -----------------------------------------------------------

def test_a1_decay_rate(landau_run_m2):
    gamma = landau_run_m2.gamma()
    ok = abs(gamma - LANDAU_GAMMA) <= 0.15 * LANDAU_GAMMA
    record("A1 decay rate",
           ok, f"gamma = {gamma:.4f}, target {LANDAU_GAMMA} +- 15%")


# -- A2: mass conservation -----------------------------------------------------------

def test_a2_mass_conservation(landau_run_m2, landau_run_m0):
    err_m2 = landau_run_m2.mass_err
    err_m0 = landau_run_m0.mass_err
    witness = err_m0 >= 10 * err_m2 or landau_run_m0.diverged_at is not None
    ok = err_m2 <= 1e-9 and witness
    note = ""
    if landau_run_m0.diverged_at:
        note = f"; m=0 run diverged at t={landau_run_m0.diverged_at[0]:.2f}"
    record("A2 mass conservation", ok,
           f"m=2 rel err {err_m2:.3e} (<= 1e-9), m=0 err {err_m0:.3e} "
           f"(>= 10x){note}")


# -- A3: momentum conservation --------------------------------------------------------

def test_a3_momentum_conservation(landau_run_m2):
    ok = landau_run_m2.mom_err <= 1e-9
    record("A3 momentum conservation", ok,
           f"max abs err {landau_run_m2.mom_err:.3e} (<= 1e-9)")


# -- A4: discrete continuity -----------------------------------------------------------

def test_a4_continuity(landau_run_m2, landau_run_upwind_residuals):
    rho_c = max(landau_run_m2.res_rho)
    j_c = max(landau_run_m2.res_j)
    rho_u = max(landau_run_upwind_residuals.res_rho)
    ok = rho_c <= 1e-11 and j_c <= 1e-10 and rho_u >= 10 * rho_c
    record("A4 discrete continuity", ok,
           f"central rho {rho_c:.3e} (<= 1e-11), j {j_c:.3e} (<= 1e-10), "
           f"upwind rho {rho_u:.3e} (>= 10x central)")


# -- A5: integration by parts -----------------------------------------------------------

def test_a5_integration_by_parts():
    rng = np.random.default_rng(2024)
    worst = 0.0
    meshes = [build_uniform(1, [(0.0, 4 * np.pi)], [24]),
              refine(refine(build_uniform(2, [(0.0, 1.0)] * 2, [3, 3]),
                            [(0, (0, 0))]), [(1, (0, 0))])]
    for mesh in meshes:
        space = dg.DgSpace(mesh, 2)
        for _ in range(50):
            u = dg.DgField(space, rng.standard_normal((space.n_elements, space.n_loc)))
            w = dg.DgField(space, rng.standard_normal((space.n_elements, space.n_loc)))
            for s in range(mesh.dim):
                total = abs(dg.discrete_derivative_form(u, w, s)
                            + dg.discrete_derivative_form(w, u, s))
                worst = max(worst, total / (dg.norm(u) * dg.norm(w)))
    ok = worst <= 1e-12
    record("A5 integration by parts", ok,
           f"worst |form(u,w)+form(w,u)|/(|u||w|) = {worst:.3e} (<= 1e-12), "
           f"100 pairs, uniform + two-level refined")


# -- A6: Poisson oracle ------------------------------------------------------------------

def test_a6_poisson_oracle():
    errs = []
    for nx in (8, 16, 32):
        sx = dg.DgSpace(build_uniform(1, [(0.0, 4 * np.pi)], [nx]), 2)
        rho = dg.project(lambda x: 1 + LANDAU_ALPHA * np.cos(LANDAU_K * x[..., 0]), sx)
        ef = ps.solve_poisson(rho)
        exact = -(LANDAU_ALPHA / LANDAU_K) * np.sin(LANDAU_K * sx.xq[..., 0])
        errs.append(math.sqrt(float(np.sum((ef.values_at_quad(0) - exact) ** 2
                                           * sx.wq))))
        if nx == 32:
            energy = ef.energy()
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    e_exact = 4e-4 * math.pi
    e_ok = abs(energy - e_exact) <= 1e-3 * e_exact
    ok = min(orders) >= 3.5 and e_ok
    record("A6 Poisson oracle", ok,
           f"orders {orders[0]:.2f}, {orders[1]:.2f} (>= 3.5); "
           f"energy {energy:.6e} vs {e_exact:.6e} (0.1%)")


# -- A7: refactoring conservation ----------------------------------------------------------

def test_a7_refactoring_conservation():
    rng = np.random.default_rng(7)
    sx = dg.DgSpace(build_uniform(1, [(0.0, 4 * np.pi)], [12]), 2)
    sv = dg.DgSpace(build_uniform(1, [(-6.0, 6.0)], [24]), 2)
    m = 2
    fixed = lr.fixed_basis(sv, dg.GAUSS_WEIGHT, m)
    worst_mass, worst_mom = 0.0, 0.0
    zf = ps.zero_field(sx)
    for trial in range(1000):
        r = int(rng.integers(3, 7))
        xr = rng.standard_normal((r, sx.n_elements, sx.n_loc))
        vr = rng.standard_normal((r, sv.n_elements, sv.n_loc))
        vr[:m] = fixed.bundle.data
        xb, _ = dg.orthonormalize(dg.FieldBundle(sx, xr))
        vb, _ = dg.orthonormalize(dg.FieldBundle(sv, vr), dg.GAUSS_WEIGHT,
                                  fixed_prefix=m)
        st = lr.LowRankState(xb, rng.standard_normal((r, r)), vb, m,
                             dg.GAUSS_WEIGHT, fixed)
        d0 = diag.observe(st, zf)
        st2 = lr.to_block_qr(st)
        k_new = dg.FieldBundle(sx, rng.standard_normal((r, sx.n_elements, sx.n_loc)))
        l_new = dg.FieldBundle(sv, rng.standard_normal((r - m, sv.n_elements, sv.n_loc)))
        xt, vt, mm, nn = lr.augment_bases(st2.X, k_new, st2.V, l_new, m, st2.weight)
        big = lr.LowRankState(xt, mm @ st2.S @ nn.T, vt, m, st2.weight, fixed)
        st3 = lr.truncate(big, fixed_rank=int(rng.integers(m + 1, r + 2)))
        d3 = diag.observe(st3, zf)
        worst_mass = max(worst_mass,
                         abs(d3.mass - d0.mass) / max(abs(d0.mass), 1e-30))
        worst_mom = max(worst_mom, abs(d3.momentum[0] - d0.momentum[0]))
    ok = worst_mass <= 1e-12 and worst_mom <= 1e-12
    record("A7 refactoring conservation", ok,
           f"1000 pipelines: mass rel {worst_mass:.3e}, "
           f"momentum abs {worst_mom:.3e} (<= 1e-12)")


# -- A8: 2D smoke + conservation --------------------------------------------------------------

def test_a8_landau_2d():
    t0 = time.time()
    st = landau_2d(nx=16, nv=32, m=3, rank=6)
    solver = ps.PoissonSolver(st.space_x)
    cfg = it.IntegratorConfig(scheme=it.BUG, tau=1e-3, trunc_tol=1e-5,
                              max_rank=16, m=3)
    d0 = diag.observe(st, ps.solve_poisson(ps.compute_moments(st).rho))
    state = st
    mass_err, mom_err = 0.0, 0.0
    n = int(round(1.0 / cfg.tau))
    for i in range(n):
        rep = it.bug_step(state, cfg, solver)
        state = rep.state
        d = diag.observe(state, rep.ef)
        mass_err = max(mass_err, abs(d.mass - d0.mass) / abs(d0.mass))
        mom_err = max(mom_err, float(np.linalg.norm(d.momentum - d0.momentum)))
    wall = time.time() - t0
    ok = mass_err <= 1e-8 and mom_err <= 1e-8 and wall < 3600
    record("A8 2D Landau smoke", ok,
           f"mass rel {mass_err:.3e}, momentum norm {mom_err:.3e} (<= 1e-8), "
           f"rank {state.rank}, wall {wall:.0f}s")


# -- A9: free transport with mesh adaptivity ----------------------------------------------------

def _ft_l2_error(state, t, exact_vals):
    """L2 distance between the state and the exact free-streaming solution."""
    sx, sv = state.space_x, state.space_v
    xq = sx.eval_at_quad(state.X.data).reshape(state.X.r, -1)
    vq = sv.eval_at_quad(state.V.data).reshape(state.V.r, -1)
    wx = sx.wq.reshape(-1)
    wv = sv.wq.reshape(-1)
    xpts = sx.xq.reshape(-1, 2)
    vpts = sv.xq.reshape(-1, 2)

    norm_r2 = float(np.sum(state.S ** 2))
    cross = 0.0
    norm_e2 = 0.0
    chunk = 2048
    for lo in range(0, len(vpts), chunk):
        hi = min(lo + chunk, len(vpts))
        g = exact_vals(xpts, vpts[lo:hi])          # (Nx, nc)
        norm_e2 += float(np.einsum('x,xv,v->', wx, g * g, wv[lo:hi]))
        a = np.einsum('x,ix,xv->iv', wx, xq, g)    # (r, nc)
        cross += float(np.einsum('iv,iv->', a, state.S @ vq[:, lo:hi] * wv[lo:hi]))
    return math.sqrt(max(norm_r2 - 2 * cross + norm_e2, 0.0))


def test_a9_free_transport_adaptive():
    t0 = time.time()
    tau = 2.5e-3
    t_final = 0.5
    st = free_transport_2d(nx=8, nv=32)
    cfg = it.IntegratorConfig(
        scheme=it.BUG, tau=tau, trunc_tol=1e-4, max_rank=20, m=0,
        self_consistent_field=False, enrich_velocity=True,
        adapt=ad.AdaptConfig(epsilon=1e-3, c=0.15, max_level=2))
    ranks, counts = [], []

    def watch(i, t, rep):
        ranks.append(rep.state.rank)
        counts.append(rep.state.space_x.n_elements)

    final = it.run(st, cfg, t_final, callbacks=[watch], observe_stride=25)

    # reference: projection error of f0 on the *initially adapted* mesh
    init = ad._initial_adapt(
        lr.LowRankState(st.X, st.S, st.V, 0, st.weight, st.fixed),
        cfg.adapt, "x")
    e0 = _ft_l2_error(init, 0.0, free_transport_exact(init, 0.0))
    eT = _ft_l2_error(final, t_final, free_transport_exact(final, t_final))

    n0 = init.space_x.n_elements
    count_ok = all(n0 <= c <= 2 * n0 for c in counts)
    rank_ok = all(ranks[i + 1] >= ranks[i] for i in range(len(ranks) - 1))
    ok = eT <= 5 * e0 and rank_ok and count_ok
    record("A9 free transport adaptive", ok,
           f"L2 err {eT:.3e} vs 5 x e0 = {5 * e0:.3e}; ranks {ranks[0]}->"
           f"{ranks[-1]} non-decreasing={rank_ok}; elements {n0}->"
           f"{counts[-1]} within [1x,2x]={count_ok}; "
           f"wall {time.time() - t0:.0f}s")


# -- A10: KSL sanity -----------------------------------------------------------------------------

def test_a10_ksl_sanity(landau_run_ksl):
    gamma = landau_run_ksl.gamma()
    ranks = landau_run_ksl.ranks
    rank_const = all(r == ranks[0] for r in ranks)
    ok = abs(gamma - LANDAU_GAMMA) <= 0.15 * LANDAU_GAMMA and rank_const
    record("A10 KSL sanity", ok,
           f"gamma = {gamma:.4f} (0.153 +- 15%), rank constant = {rank_const}")
