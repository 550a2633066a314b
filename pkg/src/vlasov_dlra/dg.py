"""Discontinuous Galerkin spaces on periodic Cartesian meshes.

The local basis is the orthonormal tensor-product Legendre basis, so element
mass matrices are exactly the identity and plain L2 inner products of fields
reduce to coefficient dot products.  Every integral in the package is defined
by one fixed Gauss-Legendre rule with ``q`` points per axis (default ``p+3``);
weighted inner products evaluate the weight at the same nodes.  This single
shared rule is what makes the discrete conservation identities exact.

Coefficient layout: a field stores ``(n_leaves, n_loc)`` with ``n_loc =
(p+1)**dim`` modes per element; bundles prepend a component axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import FULL, LOW_HALF, HIGH_HALF, PeriodicMesh

GAUSSIAN = "gaussian"
UNWEIGHTED = "unweighted"


@dataclass(frozen=True)
class WeightDescriptor:
    """Velocity-space weight; the gaussian kind is exp(-|v|^2/2)."""

    kind: str = UNWEIGHTED

    def values(self, points):
        if self.kind == UNWEIGHTED:
            return np.ones(points.shape[:-1])
        return np.exp(-0.5 * np.sum(points ** 2, axis=-1))

    def log_gradient(self, points):
        """grad(omega)/omega at the given points."""
        if self.kind == UNWEIGHTED:
            return np.zeros_like(points)
        return -points


UNIT_WEIGHT = WeightDescriptor(UNWEIGHTED)
GAUSS_WEIGHT = WeightDescriptor(GAUSSIAN)


def _legendre_table(p, nodes):
    """Rows k=0..p of orthonormal Legendre values sqrt((2k+1)/2) P_k."""
    out = np.zeros((p + 1, len(nodes)))
    for k in range(p + 1):
        c = np.zeros(k + 1)
        c[k] = 1.0
        out[k] = np.polynomial.legendre.legval(nodes, c) * math.sqrt((2 * k + 1) / 2)
    return out


def _legendre_deriv_table(p, nodes):
    out = np.zeros((p + 1, len(nodes)))
    for k in range(p + 1):
        c = np.zeros(k + 1)
        c[k] = 1.0
        dc = np.polynomial.legendre.legder(c)
        out[k] = np.polynomial.legendre.legval(nodes, dc) * math.sqrt((2 * k + 1) / 2)
    return out


_KIND_MAP = {
    FULL: lambda eta: eta,
    LOW_HALF: lambda eta: (eta - 1.0) / 2.0,
    HIGH_HALF: lambda eta: (eta + 1.0) / 2.0,
}


@dataclass
class FaceGroup:
    """Faces sharing (axis, minus_kind, plus_kind); trace ops vectorize per group."""

    axis: int
    elm: np.ndarray       # (nf,) minus-side leaf positions
    elp: np.ndarray       # (nf,)
    trm: np.ndarray       # (n_loc, n_fq) minus-side trace matrix
    trp: np.ndarray       # (n_loc, n_fq)
    wf: np.ndarray        # (nf, n_fq) face quadrature weights
    vsm: np.ndarray       # (nf,) value scales of the minus elements
    vsp: np.ndarray


class DgSpace:
    """Piecewise-polynomial space of tensor degree p over a periodic mesh."""

    def __init__(self, mesh: PeriodicMesh, degree: int, quad_points: int | None = None):
        if degree < 0:
            raise ValueError("degree must be >= 0")
        q = quad_points if quad_points is not None else degree + 3
        if q < degree + 2:
            raise ValueError("need q >= p+2 quadrature points per axis")
        self.mesh = mesh
        self.generation = mesh.generation
        self.p = degree
        self.q = q
        self.dim = mesh.dim

        xg, wg = np.polynomial.legendre.leggauss(q)
        self.xg, self.wg = xg, wg
        self.b1 = _legendre_table(degree, xg)          # (p+1, q)
        self.bd1 = _legendre_deriv_table(degree, xg)
        self.bend = _legendre_table(degree, np.array([-1.0, 1.0]))

        # local modes, ordered kx-major
        if self.dim == 1:
            self.modes = np.array([(k,) for k in range(degree + 1)])
        else:
            self.modes = np.array([(kx, ky) for kx in range(degree + 1)
                                   for ky in range(degree + 1)])
        self.n_loc = len(self.modes)

        # tensor-product quadrature tables on the reference element
        if self.dim == 1:
            self.w_ref = wg.copy()
            self.basis = self.b1.copy()                             # (n_loc, nQ)
            self.dbasis = [self.bd1.copy()]
            ref = xg[:, None]
        else:
            self.w_ref = np.kron(wg, wg)
            bx = self.b1[self.modes[:, 0]]                          # (n_loc, q)
            by = self.b1[self.modes[:, 1]]
            dbx = self.bd1[self.modes[:, 0]]
            dby = self.bd1[self.modes[:, 1]]
            self.basis = np.einsum('ka,kb->kab', bx, by).reshape(self.n_loc, -1)
            self.dbasis = [
                np.einsum('ka,kb->kab', dbx, by).reshape(self.n_loc, -1),
                np.einsum('ka,kb->kab', bx, dby).reshape(self.n_loc, -1),
            ]
            ref = np.stack(np.meshgrid(xg, xg, indexing='ij'), axis=-1).reshape(-1, 2)
        self.n_quad = len(self.w_ref)

        sizes = mesh.sizes                                           # (n, d)
        self.vscale = np.prod(np.sqrt(2.0 / sizes), axis=1)          # (n,)
        self.mscale = np.prod(sizes / 2.0, axis=1)
        self.pscale = np.prod(np.sqrt(sizes / 2.0), axis=1)
        self.dscale = 2.0 / sizes                                    # (n, d)
        self.wq = self.mscale[:, None] * self.w_ref[None, :]         # (n, nQ)
        self.xq = (mesh.lower[:, None, :]
                   + (ref[None, :, :] + 1.0) / 2.0 * sizes[:, None, :])

        self.face_groups = self._build_face_groups()
        self._dmat = {}
        self._weight_cache = {}

    # -- scalar helpers ------------------------------------------------------

    @property
    def n_elements(self):
        return self.mesh.n_leaves

    @property
    def n_dof(self):
        return self.n_elements * self.n_loc

    def zeros(self, r=None):
        shape = (self.n_elements, self.n_loc) if r is None else (r, self.n_elements, self.n_loc)
        return np.zeros(shape)

    def same_as(self, other):
        return self.mesh is other.mesh and self.p == other.p and self.q == other.q

    # -- trace machinery -----------------------------------------------------

    def _trace_matrix(self, axis, side, kind):
        """(n_loc, n_fq) matrix: reference values on the face nodes.

        side=0 is the minus element (trace on its high face, xi_s = +1),
        side=1 the plus element (xi_s = -1).
        """
        end = self.bend[:, 1] if side == 0 else self.bend[:, 0]
        if self.dim == 1:
            return end[:, None].copy()
        eta = _KIND_MAP[kind](self.xg)
        tang = _legendre_table(self.p, eta)
        t = 1 - axis
        ks, kt = self.modes[:, axis], self.modes[:, t]
        return end[ks][:, None] * tang[kt]

    def _build_face_groups(self):
        faces = self.mesh.faces
        groups = []
        keys = sorted({(int(a), int(mk), int(pk))
                       for a, mk, pk in zip(faces.axis, faces.minus_kind, faces.plus_kind)})
        wg_face = np.array([1.0]) if self.dim == 1 else self.wg
        for axis, mk, pk in keys:
            sel = np.where((faces.axis == axis)
                           & (faces.minus_kind == mk)
                           & (faces.plus_kind == pk))[0]
            elm = faces.minus[sel]
            elp = faces.plus[sel]
            ffscale = np.ones(len(sel)) if self.dim == 1 else faces.measure[sel] / 2.0
            groups.append(FaceGroup(
                axis=axis, elm=elm, elp=elp,
                trm=self._trace_matrix(axis, 0, mk),
                trp=self._trace_matrix(axis, 1, pk),
                wf=ffscale[:, None] * wg_face[None, :],
                vsm=self.vscale[elm], vsp=self.vscale[elp],
            ))
        return groups

    # -- evaluation and projection --------------------------------------------

    def eval_at_quad(self, data):
        """Values at the quadrature nodes; data (..., n_el, n_loc) -> (..., n_el, nQ)."""
        return (data @ self.basis) * self.vscale[:, None]

    def eval_deriv_at_quad(self, data, axis):
        return (data @ self.dbasis[axis]) * (self.vscale * self.dscale[:, axis])[:, None]

    def project_values(self, vals):
        """Coefficients of the L2 projection given values at the quad nodes."""
        return (vals * self.w_ref) @ self.basis.T * self.pscale[:, None]

    def eval_function(self, f):
        """Evaluate a callable f(points (...,d)) at the quadrature nodes."""
        return np.asarray(f(self.xq), dtype=float)

    # -- weight-dependent tables ----------------------------------------------

    def weight_tables(self, weight: WeightDescriptor):
        key = weight.kind
        if key not in self._weight_cache:
            wq = weight.values(self.xq)                                 # (n, nQ)
            gram = np.einsum('eq,kq,lq->ekl', self.w_ref[None, :] * wq,
                             self.basis, self.basis)
            chol = np.linalg.cholesky(gram)
            self._weight_cache[key] = {
                "wq": wq,
                "gram": gram,
                "gram_inv": np.linalg.inv(gram),
                "chol": chol,
                "chol_inv": np.linalg.inv(chol),
            }
        return self._weight_cache[key]

    # -- discrete derivative --------------------------------------------------

    def derivative_matrix(self, axis):
        """Sparse D with (D u)[e,k] = (d^_axis u, phi_{e,k}); antisymmetric."""
        if axis not in self._dmat:
            self._dmat[axis] = self._assemble_dmat(axis)
        return self._dmat[axis]

    def _assemble_dmat(self, axis):
        n_loc, n = self.n_loc, self.n_elements
        rows, cols, vals = [], [], []

        # volume: int_T dphi_k phi_k' = dscale * Dref
        dref = np.einsum('q,kq,lq->lk', self.w_ref, self.dbasis[axis], self.basis)
        loc = np.arange(n_loc)
        e_ids = np.arange(n)
        blk = self.dscale[:, axis][:, None, None] * dref[None, :, :]   # (n, l, k)
        rr = (e_ids[:, None, None] * n_loc + loc[None, :, None])
        cc = (e_ids[:, None, None] * n_loc + loc[None, None, :])
        rows.append(np.broadcast_to(rr, blk.shape).ravel())
        cols.append(np.broadcast_to(cc, blk.shape).ravel())
        vals.append(blk.ravel())

        # faces: -int_e n_s [u]{w}
        for g in self.face_groups:
            if g.axis != axis:
                continue
            for u_side, w_side, sign in (("m", "m", -0.5), ("m", "p", -0.5),
                                         ("p", "m", +0.5), ("p", "p", +0.5)):
                tru, elu, vsu = (g.trm, g.elm, g.vsm) if u_side == "m" else (g.trp, g.elp, g.vsp)
                trw, elw, vsw = (g.trm, g.elm, g.vsm) if w_side == "m" else (g.trp, g.elp, g.vsp)
                blk = sign * np.einsum('fq,lq,kq->flk', g.wf, trw, tru) \
                    * (vsu * vsw)[:, None, None]
                rr = (elw[:, None, None] * n_loc + loc[None, :, None])
                cc = (elu[:, None, None] * n_loc + loc[None, None, :])
                rows.append(np.broadcast_to(rr, blk.shape).ravel())
                cols.append(np.broadcast_to(cc, blk.shape).ravel())
                vals.append(blk.ravel())

        mat = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_dof, self.n_dof))
        return mat.tocsr()

    def apply_derivative(self, data, axis):
        """d^_axis applied to (..., n_el, n_loc) coefficient arrays."""
        d = self.derivative_matrix(axis)
        flat = data.reshape(-1, self.n_dof)
        out = (d @ flat.T).T
        return out.reshape(data.shape)

    # -- face traces -----------------------------------------------------------

    def group_traces(self, g: FaceGroup, data):
        """Minus/plus traces on a face group; data (..., n_el, n_loc)."""
        um = (data[..., g.elm, :] @ g.trm) * g.vsm[:, None]
        up = (data[..., g.elp, :] @ g.trp) * g.vsp[:, None]
        return um, up

    def scatter_face(self, out, g: FaceGroup, fm, fp):
        """Accumulate int_e f *[psi] contributions; fm/fp (..., nf, n_fq).

        fm is added against the minus traces of psi, fp subtracted against the
        plus traces (the jump convention [psi] = psi^- - psi^+).
        """
        pm = (fm * g.wf) @ g.trm.T * g.vsm[:, None]
        pp = (fp * g.wf) @ g.trp.T * g.vsp[:, None]
        if out.ndim == 2:
            np.add.at(out, g.elm, pm)
            np.subtract.at(out, g.elp, pp)
        else:
            view = out.transpose(1, 0, 2)
            np.add.at(view, g.elm, pm.transpose(-2, 0, -1))
            np.subtract.at(view, g.elp, pp.transpose(-2, 0, -1))


# -- fields -------------------------------------------------------------------


@dataclass
class DgField:
    space: DgSpace
    data: np.ndarray

    def copy(self):
        return DgField(self.space, self.data.copy())


@dataclass
class FieldBundle:
    space: DgSpace
    data: np.ndarray   # (r, n_el, n_loc)

    @property
    def r(self):
        return self.data.shape[0]

    def __getitem__(self, i) -> DgField:
        return DgField(self.space, self.data[i])

    def copy(self):
        return FieldBundle(self.space, self.data.copy())


def _check_shared(u, w):
    if not (u.space is w.space or u.space.same_as(w.space)):
        raise ValueError("fields live on different spaces")
    if u.space.generation != w.space.generation:
        raise ValueError("field spaces have mismatched mesh generations")


# -- projection and inner products ---------------------------------------------

def project(f, space: DgSpace, weight: WeightDescriptor | None = None) -> DgField:
    """(Weighted) L2 projection of a callable or DgField into the space."""
    if isinstance(f, DgField):
        if f.space is space:
            return f.copy()
        vals = f.space.eval_at_quad(f.data)
    else:
        vals = space.eval_function(f)
    if weight is None or weight.kind == UNWEIGHTED:
        return DgField(space, space.project_values(vals))
    tabs = space.weight_tables(weight)
    rhs = space.project_values(vals * tabs["wq"])
    coeff = np.linalg.solve(tabs["gram"], rhs[..., None])[..., 0]
    return DgField(space, coeff)


def inner(u, w, weight: WeightDescriptor = UNIT_WEIGHT) -> float:
    """Quadrature inner product; all integrals in the package use this rule."""
    _check_shared(u, w)
    space = u.space
    uv = space.eval_at_quad(u.data)
    wv = space.eval_at_quad(w.data)
    wgt = space.wq
    if weight.kind != UNWEIGHTED:
        wgt = wgt * space.weight_tables(weight)["wq"]
    return float(np.sum(uv * wv * wgt))


def norm(u, weight: WeightDescriptor = UNIT_WEIGHT) -> float:
    return math.sqrt(max(inner(u, u, weight), 0.0))


def gram(space: DgSpace, a: np.ndarray, b: np.ndarray,
         weight: WeightDescriptor = UNIT_WEIGHT, factor=None) -> np.ndarray:
    """Matrix of (b_j, a_i)_weight, optionally with an extra scalar factor(y).

    a, b are bundle coefficient arrays (ra|rb, n_el, n_loc); factor is either
    None, an (n_el, nQ) array, or a callable on points.
    """
    av = space.eval_at_quad(a)
    bv = space.eval_at_quad(b)
    wgt = space.wq
    if weight.kind != UNWEIGHTED:
        wgt = wgt * space.weight_tables(weight)["wq"]
    if factor is not None:
        if callable(factor):
            factor = space.eval_function(factor)
        wgt = wgt * factor
    return np.einsum('aeq,eq,beq->ab', av, wgt, bv)


def moment_vector(space: DgSpace, bundle: np.ndarray, g,
                  weight: WeightDescriptor) -> np.ndarray:
    """Vector of (bundle_j, g)_weight for a callable g(points)."""
    vals = space.eval_at_quad(bundle)
    wgt = space.wq * space.weight_tables(weight)["wq"] if weight.kind != UNWEIGHTED \
        else space.wq
    gv = space.eval_function(g)
    return np.einsum('jeq,eq->j', vals, wgt * gv)


# -- discrete derivative form ----------------------------------------------------

def discrete_derivative_form(u: DgField, w: DgField, axis: int) -> float:
    """sum_T int dU/dy_s W - sum_e int n_s [U]{W}."""
    _check_shared(u, w)
    du = u.space.apply_derivative(u.data, axis)
    return float(np.sum(du * w.data))


def discrete_derivative_matrix(space: DgSpace, axis: int):
    return space.derivative_matrix(axis)


# -- numerical flux ---------------------------------------------------------------

def _abs_matrix(a):
    lam, qmat = np.linalg.eigh(a)
    return (qmat * np.abs(lam)) @ qmat.T


def numerical_flux(a_e: np.ndarray, u_minus: np.ndarray, u_plus: np.ndarray,
                   alpha: float) -> np.ndarray:
    """F* = A_e {U} + (1-alpha)/2 |A_e| [U]; alpha=1 skips the eigensolve."""
    a_e = np.atleast_2d(np.asarray(a_e, dtype=float))
    um = np.atleast_1d(np.asarray(u_minus, dtype=float))
    up = np.atleast_1d(np.asarray(u_plus, dtype=float))
    central = a_e @ ((um + up) / 2.0)
    if alpha == 1.0:
        return central
    return central + 0.5 * (1.0 - alpha) * (_abs_matrix(a_e) @ (um - up))


# -- weighted projector P_omega ----------------------------------------------------

def weighted_project_Pw(l_field, weight: WeightDescriptor = GAUSS_WEIGHT):
    """P_omega(L): the in-space representative of omega*L."""
    space, data = _space_data(l_field)
    tabs = space.weight_tables(weight)
    out = np.einsum('ekl,...el->...ek', tabs["gram"], data)
    return _wrap_like(l_field, space, out)


def inverse_Pw(lhat, weight: WeightDescriptor = GAUSS_WEIGHT):
    """Inverse of P_omega; substitutes the multiplication by 1/omega."""
    space, data = _space_data(lhat)
    tabs = space.weight_tables(weight)
    out = np.einsum('ekl,...el->...ek', tabs["gram_inv"], data)
    return _wrap_like(lhat, space, out)


def _space_data(f):
    if isinstance(f, (DgField, FieldBundle)):
        return f.space, f.data
    raise TypeError("expected DgField or FieldBundle")


def _wrap_like(proto, space, data):
    return DgField(space, data) if isinstance(proto, DgField) else FieldBundle(space, data)


# -- orthonormalization --------------------------------------------------------------

DROP_TOL = 1e-12


def _global_modes(dim, count):
    """Tensor degrees of the first `count` global modes, by total degree."""
    out = []
    total = 0
    while len(out) < count:
        if dim == 1:
            out.append((total,))
        else:
            out.extend((kx, total - kx) for kx in range(total + 1))
        total += 1
    return out[:count]


def _global_legendre_values(space: DgSpace, index: int):
    """Values of the index-th global Legendre mode at the quadrature nodes."""
    mode = _global_modes(space.dim, index + 1)[index]
    vals = np.ones(space.xq.shape[:-1])
    for s, k in enumerate(mode):
        lo, hi = space.mesh.extents[s]
        xi = 2.0 * (space.xq[..., s] - lo) / (hi - lo) - 1.0
        c = np.zeros(k + 1)
        c[k] = 1.0
        vals = vals * np.polynomial.legendre.legval(xi, c)
    return vals


def orthonormalize(bundle: FieldBundle, weight: WeightDescriptor = UNIT_WEIGHT,
                   fixed_prefix: int = 0, drop_tol: float = DROP_TOL):
    """Modified Gram-Schmidt with one reorthogonalization pass.

    Returns (Q, R) with input_j = sum_i Q_i R_ij in the requested weighted
    inner product.  The first `fixed_prefix` inputs must already be
    orthonormal and pass through unchanged.  Numerically exhausted directions
    are replaced by the next unused unit Legendre-mode field (mode-major
    enumeration), leaving the corresponding column of R rank-deficient.
    """
    space = bundle.space
    r = bundle.r
    if fixed_prefix > r:
        raise ValueError("fixed_prefix exceeds bundle size")
    tabs = space.weight_tables(weight)
    chol, chol_inv = tabs["chol"], tabs["chol_inv"]

    # z-coordinates in which the weighted inner product is the plain dot
    z = np.einsum('ekl,rek->rel', chol, bundle.data).reshape(r, -1)
    ref = np.linalg.norm(z, axis=1)
    scale = ref.max() if ref.size else 1.0
    q = np.zeros_like(z)
    rmat = np.zeros((r, r))
    pad_cursor = [0]

    def next_pad(j):
        # candidates: projections of the global Legendre modes of the domain,
        # enumerated by total degree (deterministic and, under a decaying
        # weight, concentrated where the weight lives)
        while pad_cursor[0] < space.n_dof:
            c = pad_cursor[0]
            pad_cursor[0] += 1
            cand = space.project_values(_global_legendre_values(space, c))
            zc = np.einsum('ekl,ek->el', chol, cand).ravel()
            ref_c = np.linalg.norm(zc)
            if j:
                for _ in range(2):
                    zc -= q[:j].T @ (q[:j] @ zc)
            nrm = np.linalg.norm(zc)
            if nrm > 1e-6 * ref_c:
                return zc / nrm
        raise RuntimeError("basis exhausted while padding")

    for j in range(r):
        v = z[j].copy()
        if j < fixed_prefix:
            q[j] = v
            rmat[j, j] = 1.0
            continue
        for _ in range(2):  # MGS + one reorthogonalization
            if j:
                coef = q[:j] @ v
                v -= q[:j].T @ coef
                rmat[:j, j] += coef
        nrm = np.linalg.norm(v)
        if nrm <= drop_tol * max(ref[j], drop_tol * scale, 1e-300):
            q[j] = next_pad(j)
        else:
            q[j] = v / nrm
            rmat[j, j] = nrm

    qc = np.einsum('elk,rel->rek', chol_inv,
                   q.reshape(r, space.n_elements, space.n_loc))
    if fixed_prefix:
        qc[:fixed_prefix] = bundle.data[:fixed_prefix]  # bitwise pass-through
    return FieldBundle(space, qc), rmat


# -- generic Friedrichs' DG explicit Euler step ----------------------------------------

def friedrichs_euler_step(space: DgSpace, u: np.ndarray, a_mats, b_mats=None,
                          coeff_q=None, source_q=None, tau: float = 0.0,
                          alpha: float = 1.0):
    """One explicit Euler step of the DG-discretized Friedrichs' system.

    du/dt + sum_s [A_s d_s u + c_s(y) B_s u] = source, discretized with the
    numerical flux of parameter alpha.  u is (r, n_el, n_loc); a_mats/b_mats
    are per-axis (r, r) matrices; coeff_q per-axis (n_el, nQ) values of c_s;
    source_q (r, n_el, nQ) values of the right-hand side.
    """
    res = np.zeros_like(u)

    for s in range(space.dim):
        a_s = np.atleast_2d(a_mats[s])
        # volume advection + central face flux, via the discrete derivative
        du = space.apply_derivative(u, s)
        res += np.einsum('ij,jek->iek', a_s, du)
        if alpha != 1.0:
            a_abs = 0.5 * (1.0 - alpha) * _abs_matrix(a_s)
            for g in space.face_groups:
                if g.axis != s:
                    continue
                um, up = space.group_traces(g, u)
                fj = np.einsum('ij,jfq->ifq', a_abs, um - up)
                space.scatter_face(res, g, fj, fj)
        if b_mats is not None and b_mats[s] is not None:
            bu = np.einsum('ij,jek->iek', np.atleast_2d(b_mats[s]), u)
            vals = space.eval_at_quad(bu) * coeff_q[s][None, :, :]
            res += space.project_values(vals)

    if source_q is not None:
        res -= space.project_values(source_q)

    return u - tau * res
