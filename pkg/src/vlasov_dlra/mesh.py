"""Periodic Cartesian meshes in 1D/2D with 2:1-balanced local refinement.

Elements are identified by keys ``(level, (i,))`` or ``(level, (i, j))``: at
level ``l`` the domain is covered by a virtual grid of ``root_cells * 2**l``
cells per axis, and the index tuple locates the cell in that grid.  A mesh is
an immutable value; ``refine`` and ``coarsen`` return new meshes.

Every face carries a fixed unit normal pointing in the positive coordinate
direction, with the ``minus`` neighbor on the low side.  Faces on coarse/fine
interfaces are split so that each face is the full side of the finer element;
the coarse side then sees the face as its low or high half.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

# kinds: which part of an element's side a face covers
FULL, LOW_HALF, HIGH_HALF = 0, 1, 2


@dataclass(frozen=True)
class Element:
    key: tuple
    level: int
    lower: tuple
    sides: tuple

    @property
    def id(self):
        return self.key


@dataclass(frozen=True)
class FaceSet:
    """Vectorized face storage: one entry per face."""

    axis: np.ndarray        # (nf,) int
    minus: np.ndarray       # (nf,) leaf position of the low-side neighbor
    plus: np.ndarray        # (nf,) leaf position of the high-side neighbor
    minus_kind: np.ndarray  # (nf,) FULL / LOW_HALF / HIGH_HALF
    plus_kind: np.ndarray   # (nf,)
    measure: np.ndarray     # (nf,) face measure (1.0 in 1D)

    def __len__(self):
        return len(self.axis)


@dataclass(frozen=True)
class PeriodicMesh:
    dim: int
    extents: tuple            # ((lo, hi), ...) per axis
    root_cells: tuple         # cells per axis at level 0
    leaves: tuple             # sorted element keys
    generation: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    # -- derived geometry ---------------------------------------------------

    @property
    def n_leaves(self):
        return len(self.leaves)

    @property
    def leaf_index(self):
        if "leaf_index" not in self._cache:
            self._cache["leaf_index"] = {k: i for i, k in enumerate(self.leaves)}
        return self._cache["leaf_index"]

    @property
    def root_sizes(self):
        return np.array([(hi - lo) / n for (lo, hi), n in
                         zip(self.extents, self.root_cells)])

    @property
    def levels(self):
        if "levels" not in self._cache:
            self._cache["levels"] = np.array([k[0] for k in self.leaves], dtype=int)
        return self._cache["levels"]

    @property
    def lower(self):
        """(n_leaves, dim) lower corners."""
        if "lower" not in self._cache:
            lo = np.array([e[0] for e in self.extents])
            h0 = self.root_sizes
            idx = np.array([k[1] for k in self.leaves], dtype=float)
            scale = h0[None, :] / (2.0 ** self.levels)[:, None]
            self._cache["lower"] = lo[None, :] + idx * scale
        return self._cache["lower"]

    @property
    def sizes(self):
        """(n_leaves, dim) element side lengths."""
        if "sizes" not in self._cache:
            h0 = self.root_sizes
            self._cache["sizes"] = np.broadcast_to(
                h0[None, :], (self.n_leaves, self.dim)).copy() \
                / (2.0 ** self.levels)[:, None]
        return self._cache["sizes"]

    def element(self, key):
        i = self.leaf_index[key]
        return Element(key, key[0], tuple(self.lower[i]), tuple(self.sizes[i]))

    def grid_shape(self, level):
        return tuple(n * 2 ** level for n in self.root_cells)

    @property
    def max_level(self):
        return int(self.levels.max()) if self.n_leaves else 0

    @property
    def faces(self) -> FaceSet:
        if "faces" not in self._cache:
            self._cache["faces"] = _build_faces(self)
        return self._cache["faces"]

    def measure(self):
        return float(np.prod([hi - lo for lo, hi in self.extents]))


# -- key arithmetic ----------------------------------------------------------

def _parent(key):
    level, idx = key
    return (level - 1, tuple(i // 2 for i in idx))


def _children(key, dim):
    level, idx = key
    out = []
    for b in range(2 ** dim):
        off = tuple((b >> s) & 1 for s in range(dim))
        out.append((level + 1, tuple(2 * i + o for i, o in zip(idx, off))))
    return out


def _shift(key, axis, step, root_cells):
    """Neighbor cell key at the same level, with periodic wrap."""
    level, idx = key
    n = root_cells[axis] * 2 ** level
    jdx = list(idx)
    jdx[axis] = (jdx[axis] + step) % n
    return (level, tuple(jdx))


def _covering_leaf(leafset, key):
    """Leaf containing cell `key`, at the same or a coarser level (or None)."""
    level, idx = key
    while level >= 0:
        k = (level, idx)
        if k in leafset:
            return k
        level -= 1
        idx = tuple(i // 2 for i in idx)
    return None


def _side_children(key, axis, side, dim):
    """Children of cell `key` adjacent to its low (side=0) or high side."""
    level, idx = key
    out = []
    for b in range(2 ** (dim - 1)):
        off = [0] * dim
        off[axis] = side
        t = 0
        for s in range(dim):
            if s == axis:
                continue
            off[s] = (b >> t) & 1
            t += 1
        out.append((level + 1, tuple(2 * i + o for i, o in zip(idx, off))))
    return out


def _side_neighbors(leafset, key, axis, direction, root_cells, dim, max_level):
    """All leaves sharing the given side of leaf `key`.

    direction=+1 looks across the high side, -1 across the low side.
    Returns a list of leaf keys (possibly containing `key` itself on a
    single-cell periodic axis).
    """
    cell = _shift(key, axis, direction, root_cells)
    cover = _covering_leaf(leafset, cell)
    if cover is not None:
        return [cover]
    # neighbor region is refined finer: descend toward our shared side
    side = 0 if direction > 0 else 1  # children facing back toward us
    out = []
    stack = [cell]
    while stack:
        c = stack.pop()
        if c in leafset:
            out.append(c)
            continue
        if c[0] > max_level:
            raise RuntimeError(f"no leaf covers cell {cell}")
        stack.extend(_side_children(c, axis, side, dim))
    return sorted(out)


# -- construction ------------------------------------------------------------

def build_uniform(dim, extents, cells_per_axis):
    """Uniform level-0 periodic mesh.

    Parameters
    ----------
    dim : 1 or 2
    extents : sequence of (lo, hi) per axis
    cells_per_axis : sequence of positive ints
    """
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    extents = tuple((float(lo), float(hi)) for lo, hi in np.reshape(extents, (-1, 2)))
    if len(extents) != dim:
        raise ValueError("extents must provide one (lo, hi) pair per axis")
    for lo, hi in extents:
        if not hi > lo:
            raise ValueError(f"degenerate extent [{lo}, {hi})")
    cells = tuple(int(n) for n in np.atleast_1d(cells_per_axis))
    if len(cells) != dim or any(n < 1 for n in cells):
        raise ValueError("cells_per_axis must be positive, one entry per axis")

    if dim == 1:
        leaves = tuple((0, (i,)) for i in range(cells[0]))
    else:
        leaves = tuple(sorted((0, (i, j))
                              for i in range(cells[0]) for j in range(cells[1])))
    return PeriodicMesh(dim, extents, cells, leaves, generation=0)


def _build_faces(mesh: PeriodicMesh) -> FaceSet:
    leafset = set(mesh.leaves)
    index = mesh.leaf_index
    root_cells = mesh.root_cells
    dim = mesh.dim
    h0 = mesh.root_sizes

    axis_l, minus_l, plus_l, mk_l, pk_l, meas_l = [], [], [], [], [], []

    def face_measure(level, axis):
        if dim == 1:
            return 1.0
        t = 1 - axis
        return h0[t] / 2 ** level

    for key in mesh.leaves:
        level, idx = key
        for s in range(dim):
            cell = _shift(key, s, +1, root_cells)
            cover = _covering_leaf(leafset, cell)
            if cover is not None:
                # neighbor at same or coarser level: one face, full side of us
                axis_l.append(s)
                minus_l.append(index[key])
                plus_l.append(index[cover])
                mk_l.append(FULL)
                if cover[0] == level:
                    pk_l.append(FULL)
                else:
                    # our side is half of the coarse neighbor's side
                    if dim == 1:
                        pk_l.append(FULL)
                    else:
                        t = 1 - s
                        pk_l.append(LOW_HALF if idx[t] % 2 == 0 else HIGH_HALF)
                meas_l.append(face_measure(level, s))
            else:
                # neighbor refined finer: one face per adjacent child
                kids = sorted(_side_children(cell, s, 0, dim))
                for kn, kid in enumerate(kids):
                    if kid not in leafset:
                        raise RuntimeError("mesh violates 2:1 balance")
                    axis_l.append(s)
                    minus_l.append(index[key])
                    plus_l.append(index[kid])
                    if dim == 1:
                        mk_l.append(FULL)
                    else:
                        t = 1 - s
                        mk_l.append(LOW_HALF if kid[1][t] % 2 == 0 else HIGH_HALF)
                    pk_l.append(FULL)
                    meas_l.append(face_measure(kid[0], s))

    return FaceSet(
        axis=np.array(axis_l, dtype=int),
        minus=np.array(minus_l, dtype=int),
        plus=np.array(plus_l, dtype=int),
        minus_kind=np.array(mk_l, dtype=int),
        plus_kind=np.array(pk_l, dtype=int),
        measure=np.array(meas_l, dtype=float),
    )


# -- refinement / coarsening -------------------------------------------------

def refine(mesh: PeriodicMesh, element_ids):
    """Replace each marked leaf by its 2^d children, restoring 2:1 balance.

    Extra leaves are refined as needed so that no face separates elements
    more than one level apart.  Returns a new mesh; an empty marking returns
    the input mesh unchanged.
    """
    marks = list(element_ids)
    if not marks:
        return mesh
    leafset = set(mesh.leaves)
    for k in marks:
        if k not in leafset:
            if k in {_parent(l) for l in leafset if l[0] > 0}:
                raise ValueError(f"element {k} is not a leaf")
            raise ValueError(f"unknown element id {k}")

    pending = set(marks)
    while pending:
        for k in sorted(pending):
            leafset.remove(k)
            leafset.update(_children(k, mesh.dim))
        pending = _balance_marks(leafset, mesh)

    new = PeriodicMesh(mesh.dim, mesh.extents, mesh.root_cells,
                       tuple(sorted(leafset)), generation=mesh.generation + 1)
    return new


def _balance_marks(leafset, mesh):
    """Leaves whose neighbors are more than one level finer."""
    max_level = max(k[0] for k in leafset)
    marks = set()
    for key in leafset:
        level = key[0]
        if level + 1 >= max_level:
            continue
        for s in range(mesh.dim):
            for d in (+1, -1):
                for nb in _side_neighbors(leafset, key, s, d,
                                          mesh.root_cells, mesh.dim, max_level):
                    if nb[0] > level + 1:
                        marks.add(key)
    return marks


def coarsen(mesh: PeriodicMesh, parent_ids):
    """Merge the children of each listed parent back into a single leaf.

    Parents whose coarsening would break the 2:1 balance are skipped with a
    log message.  Returns a new mesh; empty input returns the mesh unchanged.
    """
    new, _ = coarsen_with_report(mesh, parent_ids)
    return new


def coarsen_with_report(mesh: PeriodicMesh, parent_ids):
    parents = list(parent_ids)
    if not parents:
        return mesh, []
    leafset = set(mesh.leaves)
    skipped = []
    changed = False
    for parent in sorted(parents):
        kids = _children(parent, mesh.dim)
        if not all(k in leafset for k in kids):
            raise ValueError(f"children of {parent} are not all leaves")
        trial = leafset - set(kids)
        trial.add(parent)
        if _violates_balance(trial, parent, mesh):
            skipped.append(parent)
            log.warning("coarsening of %s skipped: would break 2:1 balance", parent)
            continue
        leafset = trial
        changed = True
    if not changed:
        return mesh, skipped
    new = PeriodicMesh(mesh.dim, mesh.extents, mesh.root_cells,
                       tuple(sorted(leafset)), generation=mesh.generation + 1)
    return new, skipped


def _violates_balance(leafset, key, mesh):
    level = key[0]
    max_level = max(k[0] for k in leafset)
    for s in range(mesh.dim):
        for d in (+1, -1):
            for nb in _side_neighbors(leafset, key, s, d,
                                      mesh.root_cells, mesh.dim, max_level):
                if nb[0] > level + 1:
                    return True
    return False
