"""Self-consistent electric field: moments and the periodic Poisson solve.

The potential is a continuous Lagrange field of degree p+2 on the spatial
mesh (equispaced nodes per element, shared across faces through an exact
integer lattice).  Hanging nodes on locally refined meshes are eliminated by
constrained interpolation.  The singular periodic system is solved with
Jacobi-preconditioned CG, deflating the constant null space, and the zero
mean is imposed afterwards.  E = -grad(Phi) is represented as DG fields of
degree p+1 using the shared quadrature rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dg import DgField, DgSpace, FieldBundle, moment_vector
from .mesh import PeriodicMesh


@dataclass
class Moments:
    rho: DgField
    j: FieldBundle          # d current components
    sigma: np.ndarray       # (d, d) object array of DgField (stress)


@dataclass
class ElectricField:
    E: FieldBundle          # d components, DG degree p+1
    phi_nodes: np.ndarray   # CG node values, zero mean
    cg: "CgSpace | None"
    residual: float

    def values_at_quad(self, axis):
        return self.E.space.eval_at_quad(self.E.data[axis])

    def energy(self):
        sp_ = self.E.space
        vals = sp_.eval_at_quad(self.E.data)
        return 0.5 * float(np.sum(vals ** 2 * sp_.wq))

    def component_integrals(self):
        sp_ = self.E.space
        vals = sp_.eval_at_quad(self.E.data)
        return np.einsum('seq,eq->s', vals, sp_.wq)


def compute_moments(state) -> Moments:
    """Density, current and stress of the state via the shared quadrature."""
    sv, sx = state.space_v, state.space_x
    w = state.weight
    one = lambda x: np.ones(x.shape[:-1])
    c = moment_vector(sv, state.V.data, one, w)                 # (V_j, 1)_w
    rho = DgField(sx, np.einsum('iek,ij,j->ek', state.X.data, state.S, c))
    d = sx.dim
    jdata = []
    sigma = np.empty((d, d), dtype=object)
    for s in range(d):
        ds = moment_vector(sv, state.V.data, lambda x: x[..., s], w)
        jdata.append(np.einsum('iek,ij,j->ek', state.X.data, state.S, ds))
        for t in range(d):
            dst = moment_vector(sv, state.V.data,
                                lambda x: x[..., s] * x[..., t], w)
            sigma[s, t] = DgField(sx, np.einsum('iek,ij,j->ek',
                                                state.X.data, state.S, dst))
    return Moments(rho, FieldBundle(sx, np.stack(jdata)), sigma)


# -- continuous Lagrange space ---------------------------------------------------


def _lagrange_tables(degree, nodes_out):
    """Values and derivatives of the equispaced Lagrange basis at nodes_out."""
    xi = np.linspace(-1.0, 1.0, degree + 1)
    vals = np.zeros((degree + 1, len(nodes_out)))
    ders = np.zeros((degree + 1, len(nodes_out)))
    for i in range(degree + 1):
        y = np.zeros(degree + 1)
        y[i] = 1.0
        coef = np.polynomial.legendre.legfit(xi, y, degree)
        vals[i] = np.polynomial.legendre.legval(nodes_out, coef)
        ders[i] = np.polynomial.legendre.legval(
            nodes_out, np.polynomial.legendre.legder(coef))
    return vals, ders


class CgSpace:
    """Periodic continuous tensor-Lagrange space with hanging-node constraints."""

    def __init__(self, mesh: PeriodicMesh, degree: int, quad_points: int):
        self.mesh = mesh
        self.degree = degree
        self.dim = mesh.dim
        self.q = quad_points

        xg, wg = np.polynomial.legendre.leggauss(quad_points)
        self.nv1, self.nd1 = _lagrange_tables(degree, xg)
        if self.dim == 1:
            self.w_ref = wg
            self.locs = np.array([(i,) for i in range(degree + 1)])
            self.nvals = self.nv1.copy()
            self.nders = [self.nd1.copy()]
        else:
            self.w_ref = np.kron(wg, wg)
            self.locs = np.array([(i, j) for i in range(degree + 1)
                                  for j in range(degree + 1)])
            ax = self.nv1[self.locs[:, 0]]
            ay = self.nv1[self.locs[:, 1]]
            dax = self.nd1[self.locs[:, 0]]
            day = self.nd1[self.locs[:, 1]]
            self.nvals = np.einsum('ka,kb->kab', ax, ay).reshape(len(self.locs), -1)
            self.nders = [
                np.einsum('ka,kb->kab', dax, ay).reshape(len(self.locs), -1),
                np.einsum('ka,kb->kab', ax, day).reshape(len(self.locs), -1),
            ]
        self.n_loc = len(self.locs)

        self._build_numbering()

    # node keys are integer lattice positions: exact periodic identification
    def _node_key(self, leaf_key, loc):
        level, idx = leaf_key
        lmax = self.mesh.max_level
        deg = self.degree
        key = []
        for s in range(self.dim):
            ticks = self.mesh.root_cells[s] * deg * 2 ** lmax
            t = (idx[s] * deg + loc[s]) * 2 ** (lmax - level)
            key.append(t % ticks)
        return tuple(key)

    def _build_numbering(self):
        mesh = self.mesh
        keys = {}
        elem_keys = []
        for leaf in mesh.leaves:
            row = []
            for loc in self.locs:
                k = self._node_key(leaf, loc)
                row.append(k)
                keys.setdefault(k, len(keys))
            elem_keys.append(row)
        self.n_nodes = len(keys)
        self.key_id = keys
        self.elem_nodes = np.array([[keys[k] for k in row] for row in elem_keys])

        constraints = self._hanging_constraints(elem_keys)
        self._build_constraint_matrix(constraints)

    def _hanging_constraints(self, elem_keys):
        """slave key -> [(master key, coeff)] from coarse/fine interfaces."""
        mesh = self.mesh
        deg = self.degree
        if self.dim == 1 or mesh.max_level == mesh.levels.min():
            return {}
        faces = mesh.faces
        out = {}
        xi = np.linspace(-1.0, 1.0, deg + 1)
        for i in range(len(faces)):
            lm = mesh.leaves[faces.minus[i]]
            lp = mesh.leaves[faces.plus[i]]
            if lm[0] == lp[0]:
                continue
            fine, coarse = (lm, lp) if lm[0] > lp[0] else (lp, lm)
            s = int(faces.axis[i])
            t = 1 - s
            # local face on each side: fine high side if fine is minus
            fine_side = deg if fine is lm else 0
            coarse_side = 0 if fine is lm else deg
            coarse_face_keys = [self._node_key(coarse, self._mk_loc(s, coarse_side, t, j))
                                for j in range(deg + 1)]
            coarse_set = set(coarse_face_keys)
            # position of fine face nodes inside the coarse face, in [-1, 1]
            half = fine[1][t] % 2
            for j in range(deg + 1):
                k_fine = self._node_key(fine, self._mk_loc(s, fine_side, t, j))
                if k_fine in coarse_set or k_fine in out:
                    continue
                eta = (xi[j] - 1.0) / 2.0 if half == 0 else (xi[j] + 1.0) / 2.0
                vals, _ = _lagrange_tables(deg, np.array([eta]))
                out[k_fine] = [(coarse_face_keys[a], float(vals[a, 0]))
                               for a in range(deg + 1) if abs(vals[a, 0]) > 1e-14]
        return out

    def _mk_loc(self, s, s_val, t, t_val):
        loc = [0, 0]
        loc[s] = s_val
        loc[t] = t_val
        return tuple(loc)

    def _build_constraint_matrix(self, constraints):
        # resolve chains (a master may itself be a slave on a coarser face)
        resolved = {}

        def resolve(key, depth=0):
            if key not in constraints:
                return [(key, 1.0)]
            if key in resolved:
                return resolved[key]
            if depth > 8:
                raise RuntimeError("hanging-node constraint chain too deep")
            acc = {}
            for mk, c in constraints[key]:
                for fk, fc in resolve(mk, depth + 1):
                    acc[fk] = acc.get(fk, 0.0) + c * fc
            resolved[key] = [(k, v) for k, v in acc.items() if abs(v) > 1e-14]
            return resolved[key]

        slave_ids = {self.key_id[k] for k in constraints}
        dof_of = {}
        for k, nid in self.key_id.items():
            if nid not in slave_ids:
                dof_of[nid] = len(dof_of)
        self.n_dofs = len(dof_of)

        rows, cols, vals = [], [], []
        for k, nid in self.key_id.items():
            if nid in slave_ids:
                for mk, c in resolve(k):
                    rows.append(nid)
                    cols.append(dof_of[self.key_id[mk]])
                    vals.append(c)
            else:
                rows.append(nid)
                cols.append(dof_of[nid])
                vals.append(1.0)
        self.C = sp.coo_matrix((vals, (rows, cols)),
                               shape=(self.n_nodes, self.n_dofs)).tocsr()

    # -- assembly -------------------------------------------------------------

    def stiffness(self):
        mesh = self.mesh
        sizes = mesh.sizes
        mscale = np.prod(sizes / 2.0, axis=1)
        n_el = mesh.n_leaves
        kloc = np.zeros((n_el, self.n_loc, self.n_loc))
        for s in range(self.dim):
            dsc = (2.0 / sizes[:, s]) ** 2 * mscale
            kref = np.einsum('q,iq,jq->ij', self.w_ref, self.nders[s], self.nders[s])
            kloc += dsc[:, None, None] * kref[None, :, :]
        ii = np.repeat(self.elem_nodes[:, :, None], self.n_loc, axis=2)
        jj = np.repeat(self.elem_nodes[:, None, :], self.n_loc, axis=1)
        k_nodes = sp.coo_matrix((kloc.ravel(), (ii.ravel(), jj.ravel())),
                                shape=(self.n_nodes, self.n_nodes)).tocsr()
        return (self.C.T @ k_nodes @ self.C).tocsr()

    def load_from_quad_values(self, vals, dg_space: DgSpace):
        """(f, N_i) for f given by values at the shared quadrature nodes."""
        contrib = np.einsum('eq,iq->ei', vals * dg_space.wq, self.nvals)
        b = np.zeros(self.n_nodes)
        np.add.at(b, self.elem_nodes, contrib)
        return self.C.T @ b

    def values_at_quad(self, node_vals):
        return node_vals[self.elem_nodes] @ self.nvals

    def gradient_at_quad(self, node_vals, axis):
        dsc = 2.0 / self.mesh.sizes[:, axis]
        return (node_vals[self.elem_nodes] @ self.nders[axis]) * dsc[:, None]


def _deflated_pcg(a, b, diag, rtol=1e-12, atol=0.0, maxiter=5000):
    """Jacobi-preconditioned CG on the singular periodic system.

    The constant null space is projected out of the right-hand side, the
    preconditioned residual and the iterates, which realizes the zero-mean
    constraint of the continuous formulation.
    """
    n = len(b)
    ones = np.ones(n) / math.sqrt(n)

    def deflate(v):
        return v - ones * (ones @ v)

    b = deflate(b)
    x = np.zeros(n)
    r = b.copy()
    z = deflate(r / diag)
    p = r @ z
    d = z.copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, 0.0, 0
    tol = max(rtol * bnorm, atol)
    for it in range(maxiter):
        q = a @ d
        alpha = p / (d @ q)
        x += alpha * d
        r -= alpha * q
        if np.linalg.norm(r) <= tol:
            break
        z = deflate(r / diag)
        p_new = r @ z
        d = z + (p_new / p) * d
        p = p_new
    x = deflate(x)
    return x, float(np.linalg.norm(b - a @ x)), it + 1


class PoissonSolver:
    """Periodic Poisson solve -Lap(Phi) = 1 - rho with E = -grad(Phi).

    Caches the CG space, the assembled stiffness and the E-field DG space per
    mesh generation; one instance serves a whole run.
    """

    def __init__(self, dg_space: DgSpace, compat_tol=1e-8, solver_tol=1e-12):
        self.dg_space = dg_space
        self.cg = CgSpace(dg_space.mesh, dg_space.p + 2, dg_space.q)
        self.e_space = DgSpace(dg_space.mesh, dg_space.p + 1, dg_space.q)
        self.A = self.cg.stiffness()
        self.diag = self.A.diagonal()
        self.diag[self.diag == 0.0] = 1.0
        self.compat_tol = compat_tol
        self.solver_tol = solver_tol

    def solve(self, rho: DgField) -> ElectricField:
        space = self.dg_space
        if rho.space.generation != space.generation:
            raise ValueError("density lives on a stale mesh generation")
        rho_q = rho.space.eval_at_quad(rho.data)
        rhs_q = 1.0 - rho_q
        defect = float(np.sum(rhs_q * space.wq))
        volume = space.mesh.measure()
        if abs(defect) > self.compat_tol * volume:
            raise ValueError(
                f"Poisson compatibility violated: integral of (1 - rho) is "
                f"{defect:.3e} over a domain of measure {volume:.3e}")

        b = self.cg.load_from_quad_values(rhs_q, space)
        u, resid, _ = _deflated_pcg(self.A, b, self.diag, rtol=self.solver_tol)
        if resid > 1e-8 * max(1.0, np.linalg.norm(b)):
            raise RuntimeError(f"Poisson solver did not converge: residual {resid:.3e}")

        nodes = self.cg.C @ u
        phi_q = self.cg.values_at_quad(nodes)
        mean = float(np.sum(phi_q * space.wq)) / volume
        nodes -= mean

        e_data = []
        for s in range(space.dim):
            grad = self.cg.gradient_at_quad(nodes, s)
            e_data.append(self.e_space.project_values(-grad))
        e_bundle = FieldBundle(self.e_space, np.stack(e_data))
        return ElectricField(e_bundle, nodes, self.cg, resid)


def solve_poisson(rho: DgField, compat_tol=1e-8, solver_tol=1e-12) -> ElectricField:
    """One-shot convenience wrapper around PoissonSolver."""
    return PoissonSolver(rho.space, compat_tol, solver_tol).solve(rho)


def zero_field(dg_space: DgSpace) -> ElectricField:
    """Identically-zero field for runs that switch self-consistency off."""
    e_space = DgSpace(dg_space.mesh, dg_space.p + 1, dg_space.q)
    e = FieldBundle(e_space, np.zeros((dg_space.dim, e_space.n_elements, e_space.n_loc)))
    return ElectricField(e, np.zeros(0), None, 0.0)
