"""Coupling matrices and the discrete K-, L- and S-steps.

All Galerkin matrices are built with the shared quadrature rule and the
discrete derivative forms; the same matrices feed the K-step, the L-step and
both S-step variants, which is what makes the moment bookkeeping of the
integrators exact.  Products of the weight with non-polynomial factors enter
through the in-space representative P_omega(V).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dg import (FieldBundle, friedrichs_euler_step, gram, inverse_Pw,
                 weighted_project_Pw)
from .lowrank import LowRankState, to_block_qr
from .poisson import ElectricField

log = logging.getLogger(__name__)


@dataclass
class CouplingMatrices:
    """Per-axis Galerkin matrices of the Friedrichs' systems.

    ax[s][i,j] = (v_s V_j, V_i)_{v,w}          (symmetric)
    bx[s][i,j] = (d^_{v_s} P_w(V_j), V_i)_v
    av[s][i,j] = (-E_s X_j, X_i)_x             (symmetric)
    bv[s][i,j] = (d^_{x_s} X_j, X_i)_x         (antisymmetric)
    """

    ax: list
    bx: list
    av: list
    bv: list
    m: int

    def hat(self, name, s):
        mat = getattr(self, name)[s]
        return mat[self.m:, self.m:]

    def bar_v(self, name, s):
        """Rows p > m, all columns (the L-step convention)."""
        return getattr(self, name)[s][self.m:, :]

    def bar_x(self, name, s):
        """Rows p > m, columns b <= m (the partial S-step convention)."""
        return getattr(self, name)[s][self.m:, :self.m]


def _flat_dots(a, b):
    """Matrix of plain-L2 pairings (coefficient dots) between two bundles."""
    return a.reshape(a.shape[0], -1) @ b.reshape(b.shape[0], -1).T


def assemble_coupling(state: LowRankState, ef: ElectricField) -> CouplingMatrices:
    sx, sv = state.space_x, state.space_v
    if ef.E.space.generation != sx.generation:
        raise ValueError("electric field and state disagree on the mesh generation")
    w = state.weight
    xd, vd = state.X.data, state.V.data
    pwv = weighted_project_Pw(state.V, w)

    ax, bx, av, bv = [], [], [], []
    for s in range(sv.dim):
        vs = sv.xq[..., s]
        ax.append(gram(sv, vd, vd, w, factor=vs))
        bx.append(_flat_dots(vd, sv.apply_derivative(pwv.data, s)))
    for s in range(sx.dim):
        ev = ef.values_at_quad(s)
        av.append(gram(sx, xd, xd, factor=-ev))
        bv.append(_flat_dots(xd, sx.apply_derivative(xd, s)))
    return CouplingMatrices(ax, bx, av, bv, state.m)


def spectral_radius(mats):
    return max(float(np.max(np.abs(np.linalg.eigvalsh(m)))) if m.size else 0.0
               for m in mats)


def cfl_number(space, a_mats, tau):
    """tau * lambda_max * (p+1)^2 / h_min for the worst face matrix."""
    lam = spectral_radius([np.atleast_2d(m) for m in a_mats])
    h_min = float(space.mesh.sizes.min())
    return tau * lam * (space.p + 1) ** 2 / h_min


def _cfl_warn(space, a_mats, tau, label):
    nu = cfl_number(space, a_mats, tau)
    if nu > 1.0:
        log.warning("%s: CFL guard exceeded (nu = %.3f)", label, nu)
    return nu > 1.0


# -- K-step ------------------------------------------------------------------

def k_step(state: LowRankState, ef: ElectricField, tau: float, alpha: float,
           cm: CouplingMatrices | None = None) -> FieldBundle:
    """Explicit-Euler DG update of K = X.S on the fixed velocity basis."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    sx = state.space_x
    if cm is None:
        cm = assemble_coupling(state, ef)
    _cfl_warn(sx, cm.ax, tau, "k_step")
    kb = state.k_bundle()
    coeff = [-ef.values_at_quad(s) for s in range(sx.dim)]
    new = friedrichs_euler_step(sx, kb.data, cm.ax, cm.bx, coeff,
                                None, tau, alpha)
    return FieldBundle(sx, new)


# -- L-step ------------------------------------------------------------------

def l_step(state: LowRankState, ef: ElectricField, tau: float, alpha: float,
           cm: CouplingMatrices | None = None) -> FieldBundle:
    """Explicit-Euler update of the non-fixed velocity components.

    Evolves Lhat = P_w(sum_q S_pq W_q), with the fixed-part source evaluated
    analytically at the quadrature nodes, then keeps (Lhat, U_a)_v = 0 by
    projecting the increment onto the constrained test space and maps back
    through the inverse of P_w.
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    m, r = state.m, state.rank
    if m >= r:
        return FieldBundle(state.space_v,
                           np.zeros((0,) + state.V.data.shape[1:]))
    if m and np.max(np.abs(state.S[:m, m:])) > 1e-12 * max(
            1.0, np.max(np.abs(state.S))):
        state = to_block_qr(state)
    sv = state.space_v
    if cm is None:
        cm = assemble_coupling(state, ef)
    w = state.weight

    s_hat = state.S[m:, m:]
    s_bar = state.S[:, :m]
    wq_fields = state.V.data[m:]
    lp = FieldBundle(sv, np.einsum('pq,qek->pek', s_hat, wq_fields))
    lhat = weighted_project_Pw(lp, w)

    a_hats = [cm.hat('av', s) for s in range(sv.dim)]
    b_hats = [cm.hat('bv', s) for s in range(sv.dim)]
    _cfl_warn(sv, a_hats, tau, "l_step")
    coeff = [sv.xq[..., s] for s in range(sv.dim)]

    source = None
    if m:
        uvals = sv.eval_at_quad(state.fixed.bundle.data)          # (m, e, q)
        om = w.values(sv.xq)
        lg = w.log_gradient(sv.xq)                                # (e, q, d)
        wu = om[None] * uvals
        source = np.zeros((r - m, sv.n_elements, sv.n_quad))
        for s in range(sv.dim):
            duvals = sv.eval_deriv_at_quad(state.fixed.bundle.data, s)
            dwu = om[None] * (lg[None, :, :, s] * uvals + duvals)
            ma = cm.bar_v('av', s)[:, :] @ s_bar                  # (r-m, m)
            mb = cm.bar_v('bv', s)[:, :] @ s_bar
            source -= np.einsum('pa,aeq->peq', ma, dwu)
            source -= coeff[s][None] * np.einsum('pa,aeq->peq', mb, wu)

    new = friedrichs_euler_step(sv, lhat.data, a_hats, b_hats, coeff,
                                source, tau, alpha)

    if m:
        # remove the U_a components of the increment: the constrained test
        # space annihilates them, and (Lhat, U_a)_v must stay zero
        delta = new - lhat.data
        mom = _flat_dots(delta, state.fixed.bundle.data)          # (r-m, m)
        pwu = weighted_project_Pw(state.fixed.bundle, w)
        delta -= np.einsum('pa,aek->pek', mom, pwu.data)
        new = lhat.data + delta

    return inverse_Pw(FieldBundle(sv, new), w)


# -- S-steps -----------------------------------------------------------------

def s_step_full(state: LowRankState, s_tilde: np.ndarray,
                xt: FieldBundle, vt: FieldBundle,
                ef: ElectricField, tau: float) -> np.ndarray:
    """Forward Galerkin S-step on the augmented bases.

    S~ <- S~ - tau * sum_s [ (d^_x X, X~) S (V~, v_s V)^T
                             + (X~, -E_s X) S (d^_v(wV), V~)^T ].
    """
    sx, sv = state.space_x, state.space_v
    xd, vd = state.X.data, state.V.data
    w = state.weight
    pwv = weighted_project_Pw(state.V, w)
    out = s_tilde.copy()
    for s in range(sx.dim):
        g1 = _flat_dots(xt.data, sx.apply_derivative(xd, s))       # (K, r)
        h1 = gram(sv, vt.data, vd, w, factor=sv.xq[..., s])        # (L, r)
        g2 = gram(sx, xt.data, xd, factor=-ef.values_at_quad(s))
        h2 = _flat_dots(vt.data, sv.apply_derivative(pwv.data, s))
        out -= tau * (g1 @ state.S @ h1.T + g2 @ state.S @ h2.T)
    return out


def s_step_partial(s_hat: np.ndarray, s_bar: np.ndarray,
                   cm: CouplingMatrices, tau: float, forward: bool) -> np.ndarray:
    """Explicit Euler on the inhomogeneous ODE for the S_pq block.

    The backward direction (forward=False) integrates the time-reversed
    vector field, so a forward step followed by a backward step with the same
    matrices is the identity.
    """
    d = len(cm.ax)
    rhs = np.zeros_like(s_hat)
    for s in range(d):
        rhs -= cm.hat('bv', s) @ s_hat @ cm.hat('ax', s).T
        rhs -= cm.hat('av', s) @ s_hat @ cm.hat('bx', s).T
        rhs -= cm.bar_v('bv', s) @ s_bar @ cm.bar_x('ax', s).T
        rhs -= cm.bar_v('av', s) @ s_bar @ cm.bar_x('bx', s).T
    sign = 1.0 if forward else -1.0
    return s_hat + sign * tau * rhs


def s_step_backward(s_hat, s_bar, cm: CouplingMatrices, tau: float) -> np.ndarray:
    return s_step_partial(s_hat, s_bar, cm, tau, forward=False)
