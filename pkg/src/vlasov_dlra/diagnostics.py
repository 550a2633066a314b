"""Physical observables, discrete continuity residuals and decay-rate fits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dg import moment_vector, project, weighted_project_Pw
from .poisson import ElectricField, compute_moments


@dataclass
class DiagnosticsRecord:
    t: float
    mass: float
    momentum: np.ndarray
    electric_energy: float
    kinetic_energy: float
    total_energy: float
    rank: int
    n_elements_x: int
    n_elements_v: int
    continuity_res_rho: float = 0.0
    continuity_res_j: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cfl_flag: bool = False
    wall_time: float = 0.0


def observe(state, ef: ElectricField, t: float = 0.0) -> DiagnosticsRecord:
    """All observables via the shared quadrature inner products."""
    sx, sv = state.space_x, state.space_v
    x_int = np.einsum('ieq,eq->i', sx.eval_at_quad(state.X.data), sx.wq)
    one = lambda x: np.ones(x.shape[:-1])
    c = moment_vector(sv, state.V.data, one, state.weight)
    mass = float(x_int @ state.S @ c)
    momentum = np.array([
        float(x_int @ state.S @ moment_vector(
            sv, state.V.data, lambda x, s=s: x[..., s], state.weight))
        for s in range(sv.dim)])
    vsq = moment_vector(sv, state.V.data,
                        lambda x: np.sum(x ** 2, axis=-1), state.weight)
    kinetic = 0.5 * float(x_int @ state.S @ vsq)
    electric = ef.energy()
    return DiagnosticsRecord(
        t=t, mass=mass, momentum=momentum,
        electric_energy=electric, kinetic_energy=kinetic,
        total_energy=kinetic + electric,
        rank=state.rank, n_elements_x=sx.n_elements, n_elements_v=sv.n_elements)


def _wrap_flux_coefficients(state, axis):
    """(d^_{v_s} P_w(V_j), v_s)_v + (V_j, 1)_w for every j.

    On the truncated periodic velocity box the coordinate field v_s jumps
    across its wrap face, so the integration-by-parts identity behind the
    momentum continuity equation picks up a boundary flux: the returned
    coefficients assemble sum_e int n_s {P_w V_j} [v_s] over all faces.  The
    values are exponentially small in the box size (the trace of the weight).
    """
    sv = state.space_v
    vfield = project(lambda x: x[..., axis], sv)
    pwv = weighted_project_Pw(state.V, state.weight)
    out = np.zeros(state.V.r)
    for g in sv.face_groups:
        if g.axis != axis:
            continue
        um, up = sv.group_traces(g, pwv.data)       # (r, nf, nfq)
        vm, vp = sv.group_traces(g, vfield.data)    # (nf, nfq)
        jump = vm - vp
        out += np.einsum('rfq,fq,fq->r', 0.5 * (um + up), jump, g.wf)
    return out


def continuity_residual(state_n, state_n1, ef: ElectricField, tau: float,
                        which: str):
    """Max residual of the discrete continuity equations over all test functions.

    which='rho' assembles the mass relation, which='j' the momentum relation
    (one value per axis, including the wrap-face momentum flux of the
    truncated velocity box).  Both are exact for consecutive BUG states with
    the central flux and m large enough.
    """
    mom_n = compute_moments(state_n)
    mom_n1 = compute_moments(state_n1)
    sx = state_n.space_x
    if which == "rho":
        resid = (mom_n1.rho.data - mom_n.rho.data) / tau
        for s in range(sx.dim):
            resid = resid + sx.apply_derivative(mom_n.j.data[s], s)
        return float(np.max(np.abs(resid)))
    if which == "j":
        rho_q = sx.eval_at_quad(mom_n.rho.data)
        kd = state_n.k_bundle().data
        out = []
        for s in range(sx.dim):
            resid = (mom_n1.j.data[s] - mom_n.j.data[s]) / tau
            for t in range(sx.dim):
                resid = resid + sx.apply_derivative(mom_n.sigma[s, t].data, t)
            cb = _wrap_flux_coefficients(state_n, s)
            wrap = np.einsum('j,jek->ek', cb, kd)
            wrap_q = sx.eval_at_quad(wrap)
            resid = resid + sx.project_values(
                ef.values_at_quad(s) * (rho_q - wrap_q))
            out.append(float(np.max(np.abs(resid))))
        return np.array(out)
    raise ValueError("which must be 'rho' or 'j'")


def fit_decay_rate(times, energies, window=None) -> float:
    """Least-squares slope of the upper envelope of log(energy).

    The envelope is formed by the local maxima of the oscillating electric
    energy; gamma > 0 means decay like exp(-2 gamma t).
    """
    t = np.asarray(times, dtype=float)
    e = np.asarray(energies, dtype=float)
    if window is not None:
        sel = (t >= window[0]) & (t <= window[1])
        t, e = t[sel], e[sel]
    if len(e) < 3:
        raise ValueError("series too short for an envelope fit")
    inner = (e[1:-1] > e[:-2]) & (e[1:-1] >= e[2:])
    idx = np.where(inner)[0] + 1
    if len(idx) < 3:
        if np.ptp(e) <= 1e-14 * max(np.max(np.abs(e)), 1e-300):
            return 0.0
        raise ValueError("fewer than 3 envelope points in the fit window")
    te, le = t[idx], np.log(e[idx])
    slope = np.polyfit(te, le, 1)[0]
    return -0.5 * float(slope)
