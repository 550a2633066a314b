"""Weighted low-rank phase-space states f = omega(v) * sum_ij X_i S_ij V_j.

The first ``m`` velocity fields are pinned to a fixed orthonormal basis
spanning {1, v_s, |v|^2} (truncated to m functions) so that mass, momentum
and energy moments stay exactly representable.  States are kept in block-QR
form: X orthonormal in L2, V orthonormal in the weighted inner product with
V_a = U_a for a <= m, and S block lower-triangular so that the columns
against the non-fixed velocity fields carry no fixed-basis component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dg import (DgSpace, FieldBundle, WeightDescriptor, UNIT_WEIGHT, gram,
                 inverse_Pw, orthonormalize, project)


@dataclass(frozen=True)
class FixedBasis:
    """Weighted-orthonormalized span of {1, v_1..v_d, |v|^2}, first m kept."""

    bundle: FieldBundle
    weight: WeightDescriptor
    m: int


def fixed_basis(space_v: DgSpace, weight: WeightDescriptor, m: int) -> FixedBasis:
    d = space_v.dim
    if m > 2 + d:
        raise ValueError(f"m must be <= {2 + d} in {d}D")
    funcs = [lambda x: np.ones(x.shape[:-1])]
    for s in range(d):
        funcs.append(lambda x, s=s: x[..., s])
    funcs.append(lambda x: np.sum(x ** 2, axis=-1))
    data = np.stack([project(f, space_v).data for f in funcs[:max(m, 1)]])
    q, _ = orthonormalize(FieldBundle(space_v, data), weight)
    return FixedBasis(FieldBundle(space_v, q.data[:m]), weight, m)


@dataclass
class LowRankState:
    X: FieldBundle
    S: np.ndarray
    V: FieldBundle
    m: int
    weight: WeightDescriptor
    fixed: FixedBasis

    @property
    def rank(self):
        return self.S.shape[0]

    @property
    def space_x(self) -> DgSpace:
        return self.X.space

    @property
    def space_v(self) -> DgSpace:
        return self.V.space

    def copy(self):
        return LowRankState(self.X.copy(), self.S.copy(), self.V.copy(),
                            self.m, self.weight, self.fixed)

    def k_bundle(self) -> FieldBundle:
        """K_j = sum_i X_i S_ij."""
        return FieldBundle(self.space_x, np.einsum('ij,iek->jek', self.S, self.X.data))

    def quad_factors(self):
        """(Xq, Vq, wq_x, wq_v) quadrature factors; Vq already carries omega."""
        sx, sv = self.space_x, self.space_v
        xq = sx.eval_at_quad(self.X.data).reshape(self.X.r, -1)
        vq = sv.eval_at_quad(self.V.data).reshape(self.V.r, -1)
        om = self.weight.values(sv.xq).reshape(-1)
        return xq, vq * om, sx.wq.reshape(-1), sv.wq.reshape(-1)


def validate(state: LowRankState, tol=1e-10):
    """Check the orthonormality and fixed-basis invariants."""
    gx = gram(state.space_x, state.X.data, state.X.data)
    gv = gram(state.space_v, state.V.data, state.V.data, state.weight)
    errs = [np.max(np.abs(gx - np.eye(state.X.r))),
            np.max(np.abs(gv - np.eye(state.V.r)))]
    if state.m:
        if not np.array_equal(state.V.data[:state.m], state.fixed.bundle.data):
            raise AssertionError("fixed velocity fields were modified")
    if max(errs) > tol:
        raise AssertionError(f"state orthonormality violated: {errs}")
    return True


# -- construction -------------------------------------------------------------

def init_state(terms, space_x: DgSpace, space_v: DgSpace, m: int,
               weight: WeightDescriptor, fixed: FixedBasis | None = None,
               rank: int | None = None) -> LowRankState:
    """Build a state from a sum of separable terms f0 = sum_k g_k(x) h_k(v).

    Spatial factors are L2-projected; velocity factors are projected and the
    weight divided out through the inverse of P_omega.  The state rank is
    max(m, number of terms, rank); directions beyond the content of f0 are
    filled by the deterministic padding of `orthonormalize` and carry zero
    coefficients.  Fixed-rank runs need `rank` at the target value: the
    augmentation step enriches the velocity basis only through the r - m
    L-step components, so a state starting at r = m could never leave the
    fixed-basis span.
    """
    terms = list(terms)
    if not terms:
        raise ValueError("f0 must provide at least one separable term")
    if fixed is None:
        fixed = fixed_basis(space_v, weight, m)
    n_terms = len(terms)
    r = max(m, n_terms, 1, rank or 1)

    x_raw = np.stack([project(g, space_x).data for g, _ in terms])
    v_raw = np.stack([inverse_Pw(project(h, space_v), weight).data for _, h in terms])

    def padded(raw, extra):
        if extra <= 0:
            return raw
        return np.concatenate([raw, np.zeros((extra,) + raw.shape[1:])])

    xb, _ = orthonormalize(
        FieldBundle(space_x, padded(x_raw, r - n_terms)), UNIT_WEIGHT)
    vb_in = np.concatenate([fixed.bundle.data, v_raw]) if m else v_raw
    vb_in = padded(vb_in, r - len(vb_in))
    vb, _ = orthonormalize(FieldBundle(space_v, vb_in), weight, fixed_prefix=m)

    xk = FieldBundle(space_x, xb.data[:r])
    vk = FieldBundle(space_v, vb.data[:r])

    cx = gram(space_x, xk.data, x_raw)                      # (r, n_terms)
    cv = gram(space_v, vk.data, v_raw, weight)              # (r, n_terms)
    for k in range(n_terms):
        rx = x_raw[k] - np.einsum('i,iek->ek', cx[:, k], xk.data)
        if np.linalg.norm(rx) > 1e-8 * max(np.linalg.norm(x_raw[k]), 1e-30):
            raise ValueError("f0 terms are not separable within the state rank")
    s = cx @ cv.T

    state = LowRankState(xk, s, vk, m, weight, fixed)
    return to_block_qr(state)


# -- block QR -----------------------------------------------------------------

def _xside_block_qr(k_bundle: FieldBundle, m: int):
    """Orthonormal X and block lower-triangular S with K_j = sum_i X_i S_ij."""
    space = k_bundle.space
    r = k_bundle.r
    kd = k_bundle.data
    if m >= r:
        q, rmat = orthonormalize(k_bundle, UNIT_WEIGHT)
        return q, rmat
    tail, r2 = orthonormalize(FieldBundle(space, kd[m:]), UNIT_WEIGHT)
    cross = gram(space, tail.data, kd[:m])                  # (r-m, m)
    resid = kd[:m] - np.einsum('pb,pek->bek', cross, tail.data)
    both, rfull = orthonormalize(
        FieldBundle(space, np.concatenate([tail.data, resid])),
        UNIT_WEIGHT, fixed_prefix=r - m)
    head = both.data[r - m:]

    x_new = FieldBundle(space, np.concatenate([head, tail.data]))
    s_new = np.zeros((r, r))
    s_new[:m, :m] = rfull[r - m:, r - m:]
    s_new[m:, :m] = cross + rfull[:r - m, r - m:]
    s_new[m:, m:] = r2
    return x_new, s_new


def to_block_qr(state: LowRankState) -> LowRankState:
    """Re-factor so S has the block triangular form [[S_ab, 0], [S_pb, S_pq]]."""
    x_new, s_new = _xside_block_qr(state.k_bundle(), state.m)
    return LowRankState(x_new, s_new, state.V, state.m, state.weight, state.fixed)


# -- truncation ----------------------------------------------------------------

# Relative singular-value floor of the fixed-rank policy: directions below
# it are numerically zero and keeping them would only hand roundoff seeds to
# the weakly amplifying central-flux Euler step.
RANK_FLOOR = 1e-12


def _fix_svd_signs(p, qt):
    for i in range(p.shape[1]):
        k = np.argmax(np.abs(p[:, i]))
        if p[k, i] < 0:
            p[:, i] = -p[:, i]
            qt[i, :] = -qt[i, :]
    return p, qt


def truncate(state: LowRankState, tol: float | None = None,
             fixed_rank: int | None = None) -> LowRankState:
    """Conservative SVD truncation of the non-fixed part.

    Exactly one of `tol` (threshold on the Frobenius norm of the discarded
    singular values, relative to the norm of the non-fixed block) or
    `fixed_rank` (total output rank, including the m fixed functions) must
    be given.  The fixed part of the representation is untouched, so all
    moments against the fixed basis are preserved.
    """
    if (tol is None) == (fixed_rank is None):
        raise ValueError("specify exactly one of tol or fixed_rank")
    m = state.m
    if tol is not None and tol < 0:
        raise ValueError("tolerance must be >= 0")
    if fixed_rank is not None and fixed_rank < max(m, 1):
        raise ValueError(f"fixed rank must be >= max(m, 1) = {max(m, 1)}")

    st = to_block_qr(state)
    r = st.rank
    if m >= r:
        return st

    p, sig, qt = np.linalg.svd(st.S[:, m:], full_matrices=False)
    p, qt = _fix_svd_signs(p.copy(), qt.copy())
    k_max = len(sig)
    if fixed_rank is not None:
        # the rank cap never keeps numerically-zero directions alive: they
        # are roundoff seeds whose fast advection modes the explicit Euler
        # step would amplify over long runs
        floor = RANK_FLOOR * (sig[0] if k_max else 0.0)
        k = min(fixed_rank - m, int(np.sum(sig > floor)))
    else:
        tail = np.cumsum(sig[::-1] ** 2)
        cut = tol * math.sqrt(float(np.sum(sig ** 2)))
        n_drop = int(np.searchsorted(tail, cut ** 2, side='right'))
        k = k_max - n_drop
    k = max(k, 0 if m else 1)

    v_new = FieldBundle(st.space_v, np.concatenate(
        [st.V.data[:m], np.einsum('iq,qek->iek', qt[:k], st.V.data[m:])]))
    s_mid = np.concatenate([st.S[:, :m], p[:, :k] * sig[:k]], axis=1)

    k_cols = FieldBundle(st.space_x, np.einsum('ij,iek->jek', s_mid, st.X.data))
    x_new, s_new = _xside_block_qr(k_cols, m)
    return LowRankState(x_new, s_new, v_new, m, st.weight, st.fixed)


# -- basis augmentation -----------------------------------------------------------

def augment_bases(x_old: FieldBundle, k_new: FieldBundle,
                  v_old: FieldBundle, l_new: FieldBundle,
                  m: int, weight: WeightDescriptor):
    """Orthonormal bases for [X, K] and [V, L] plus the overlap matrices.

    Returns (Xt, Vt, M, N) with M_ki = (Xt_k, X_i)_x and
    N_lj = (Vt_l, V_j)_{v,w}; the first m fields of Vt are the fixed basis.
    """
    r = x_old.r
    if v_old.r != r:
        raise ValueError("X and V bundles disagree on the rank")
    if l_new.r < r - m:
        raise ValueError(f"expected at least {r - m} L fields, got {l_new.r}")
    xt, _ = orthonormalize(
        FieldBundle(x_old.space, np.concatenate([x_old.data, k_new.data])),
        UNIT_WEIGHT, fixed_prefix=r)
    vt, _ = orthonormalize(
        FieldBundle(v_old.space, np.concatenate([v_old.data, l_new.data])),
        weight, fixed_prefix=r)
    m_mat = gram(x_old.space, xt.data, x_old.data)
    n_mat = gram(v_old.space, vt.data, v_old.data, weight)
    return xt, vt, m_mat, n_mat
