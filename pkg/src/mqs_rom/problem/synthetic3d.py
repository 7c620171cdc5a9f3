"""Synthetic 3D-type problem on a staggered Cartesian grid (lowest-order FIT).

Unknowns are line integrals of the vector potential on interior edges of the
unit cube; ``Cd`` is the signed face-edge incidence.  A box of cells strictly
inside the cube is conducting.  Since the discrete gradients of node
potentials that are constant on the box lie in ``ker(C2)``, the curl-curl
matrix and the conductivity matrix share a nontrivial kernel, which is the
singular situation the regularization removes.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..errors import GeometryError, ParameterError
from .fem import FemProblem
from .reluctivity import ReluctivityCurve


class StaggeredGrid:
    """Index bookkeeping for nodes, edges and faces of an nx x ny x nz grid."""

    def __init__(self, nx: int, ny: int, nz: int):
        self.shape = (nx, ny, nz)
        self.h = (1.0 / nx, 1.0 / ny, 1.0 / nz)
        # edge blocks: direction d has extent n_d along d and n+1 elsewhere
        self.edge_dims = [tuple(n if a == d else n + 1 for a, n in enumerate(self.shape))
                          for d in range(3)]
        self.face_dims = [tuple(n + 1 if a == d else n for a, n in enumerate(self.shape))
                          for d in range(3)]
        self.edge_off = np.cumsum([0] + [int(np.prod(s)) for s in self.edge_dims])
        self.face_off = np.cumsum([0] + [int(np.prod(s)) for s in self.face_dims])

    @property
    def n_edges(self):
        return int(self.edge_off[-1])

    @property
    def n_faces(self):
        return int(self.face_off[-1])

    def edge(self, d, i, j, k):
        return self.edge_off[d] + np.ravel_multi_index((i, j, k), self.edge_dims[d])

    def face(self, d, i, j, k):
        return self.face_off[d] + np.ravel_multi_index((i, j, k), self.face_dims[d])

    def edge_coords(self, d):
        return np.meshgrid(*[np.arange(s) for s in self.edge_dims[d]], indexing="ij")

    def face_coords(self, d):
        return np.meshgrid(*[np.arange(s) for s in self.face_dims[d]], indexing="ij")

    def interior_edges(self):
        """Boolean mask over all edges: not lying in the boundary surface."""
        mask = np.zeros(self.n_edges, bool)
        for d in range(3):
            idx = self.edge_coords(d)
            ok = np.ones(idx[0].shape, bool)
            for a in range(3):
                if a != d:
                    ok &= (idx[a] > 0) & (idx[a] < self.shape[a])
            mask[self.edge_off[d]:self.edge_off[d + 1]] = ok.ravel()
        return mask

    def interior_faces(self):
        mask = np.zeros(self.n_faces, bool)
        for d in range(3):
            idx = self.face_coords(d)
            ok = (idx[d] > 0) & (idx[d] < self.shape[d])
            mask[self.face_off[d]:self.face_off[d + 1]] = ok.ravel()
        return mask

    def curl(self):
        """Face-edge incidence on all faces and edges (right-hand orientation)."""
        rows, cols, vals = [], [], []

        def add(f, e, v):
            rows.append(f.ravel())
            cols.append(e.ravel())
            vals.append(np.full(f.size, v, dtype=float))

        i, j, k = self.face_coords(0)
        f = self.face(0, i, j, k)
        add(f, self.edge(1, i, j, k), 1.0)
        add(f, self.edge(2, i, j + 1, k), 1.0)
        add(f, self.edge(1, i, j, k + 1), -1.0)
        add(f, self.edge(2, i, j, k), -1.0)
        i, j, k = self.face_coords(1)
        f = self.face(1, i, j, k)
        add(f, self.edge(2, i, j, k), 1.0)
        add(f, self.edge(0, i, j, k + 1), 1.0)
        add(f, self.edge(2, i + 1, j, k), -1.0)
        add(f, self.edge(0, i, j, k), -1.0)
        i, j, k = self.face_coords(2)
        f = self.face(2, i, j, k)
        add(f, self.edge(0, i, j, k), 1.0)
        add(f, self.edge(1, i + 1, j, k), 1.0)
        add(f, self.edge(0, i, j + 1, k), -1.0)
        add(f, self.edge(1, i, j, k), -1.0)
        return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.n_faces, self.n_edges)).tocsr()

    def gradient(self):
        """Edge-node incidence: (G phi)_e = phi(head) - phi(tail)."""
        nn = tuple(n + 1 for n in self.shape)
        rows, cols, vals = [], [], []
        for d in range(3):
            idx = self.edge_coords(d)
            e = self.edge(d, *idx).ravel()
            head = list(idx)
            head[d] = head[d] + 1
            rows += [e, e]
            cols += [np.ravel_multi_index(tuple(head), nn).ravel(),
                     np.ravel_multi_index(tuple(idx), nn).ravel()]
            vals += [np.ones(e.size), -np.ones(e.size)]
        return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.n_edges, int(np.prod(nn)))).tocsr()


def default_box(n: int):
    lo = max(1, (n - 1) // 2)
    return lo, lo + 1


def build_synthetic_3d(nx: int = 3, ny: int = 3, nz: int = 3, *, box=None,
                       curve: ReluctivityCurve | None = None, sigma: float = 1.0e4,
                       turns=(1.0, 1.0), resistance=(1.0, 1.5)) -> FemProblem:
    """Assemble the synthetic 3D-type problem on the unit cube.

    Parameters
    ----------
    nx, ny, nz : int
        Cells per axis (at least 3).
    box : ((x0, x1), (y0, y1), (z0, z1)), optional
        Conducting cells ``[x0, x1) x [y0, y1) x [z0, z1)``; must not touch the
        boundary.  Defaults to one central cell per axis.
    sigma : float
        Conductivity inside the box.
    turns, resistance : pair of float
        Scale of the two port loops and their resistances.

    Notes
    -----
    Port ``j`` is a strip of z-faces reaching from the outer boundary to the
    box (bottom face of the box for port 1, top face for port 2).  Its winding
    vector is ``X_j = Cd^T Upsilon_j``, a discrete loop, so the winding data
    is a discrete curl by construction.
    """
    shape = (nx, ny, nz)
    if min(shape) < 3:
        raise ParameterError(f"need at least 3 cells per axis, got {shape}")
    if box is None:
        box = tuple(default_box(n) for n in shape)
    box = tuple((int(a), int(b)) for a, b in box)
    for (lo, hi), n in zip(box, shape):
        if not (lo < hi):
            raise GeometryError(f"empty conducting box {box}")
        if lo < 1 or hi > n - 1:
            raise GeometryError(f"conducting box {box} touches the boundary of the {shape} grid")
    curve = curve if curve is not None else ReluctivityCurve()
    turns = np.broadcast_to(np.asarray(turns, dtype=float), (2,))
    resistance = np.broadcast_to(np.asarray(resistance, dtype=float), (2,))
    if np.any(turns <= 0) or np.any(resistance <= 0) or sigma <= 0:
        raise ParameterError("turns, resistances and sigma must be positive")

    g = StaggeredGrid(*shape)
    h = g.h
    (x0, x1), (y0, y1), (z0, z1) = box

    def cell_cond(i, j, k):
        return (i >= x0) & (i < x1) & (j >= y0) & (j < y1) & (k >= z0) & (k < z1)

    # edges adjacent to a conducting cell, and the conductivity weights
    msig = np.zeros(g.n_edges)
    for d in range(3):
        a, b = [ax for ax in range(3) if ax != d]
        idx = g.edge_coords(d)
        e = g.edge(d, *idx)
        for da in (-1, 0):
            for db in (-1, 0):
                c = list(idx)
                c[a] = c[a] + da
                c[b] = c[b] + db
                ok = (c[a] >= 0) & (c[a] < shape[a]) & (c[b] >= 0) & (c[b] < shape[b])
                cond = ok & cell_cond(*c)
                np.add.at(msig, e[cond], sigma * h[a] * h[b] / 4.0 / h[d])
    interior_e = g.interior_edges()
    cond_e = msig > 0
    if np.any(cond_e & ~interior_e):
        raise GeometryError("conducting edges on the boundary")
    order = np.concatenate([np.flatnonzero(cond_e & interior_e), np.flatnonzero(~cond_e & interior_e)])
    n1 = int(np.count_nonzero(cond_e))
    n2 = order.size - n1
    if n2 == 0:
        raise GeometryError("degenerate configuration: every edge is conducting")

    faces = np.flatnonzero(g.interior_faces())
    fpos = -np.ones(g.n_faces, dtype=np.int64)
    fpos[faces] = np.arange(faces.size)
    Cd = g.curl()[faces][:, order].tocsr()
    M11 = sp.diags(msig[order[:n1]]).tocsr()

    # half-face flux elements: one per (interior face, adjacent cell)
    er, es, ev, ec = [], [], [], []
    for d in range(3):
        a, b = [ax for ax in range(3) if ax != d]
        area = h[a] * h[b]
        idx = g.face_coords(d)
        f = g.face(d, *idx)
        inner = (idx[d] > 0) & (idx[d] < shape[d])
        for side in (-1, 0):
            c = list(idx)
            c[d] = c[d] + side
            er.append(fpos[f[inner]])
            es.append(np.full(np.count_nonzero(inner), 1.0 / area))
            ev.append(np.full(np.count_nonzero(inner), 0.5 * area * h[d]))
            ec.append(cell_cond(*[cc[inner] for cc in c]))
    elem_rows = np.concatenate(er)
    elem_scale = np.concatenate(es)
    elem_vol = np.concatenate(ev)
    elem_cond = np.concatenate(ec)

    # port strips of z-faces
    Ups = np.zeros((faces.size, 2))
    for p, (kz, jr) in enumerate(((z0, range(0, y0)), (z1, range(y1, ny)))):
        for i in range(x0, x1):
            for j in jr:
                Ups[fpos[g.face(2, i, j, kz)], p] = turns[p]

    nodes_inside = (nx - 1) * (ny - 1) * (nz - 1)
    box_nodes = (x1 - x0 + 1) * (y1 - y0 + 1) * (z1 - z0 + 1)
    meta = {"generator": "synthetic_3d", "nx": nx, "ny": ny, "nz": nz, "sigma": sigma,
            "box": ";".join(f"{lo},{hi}" for lo, hi in box),
            "k2_expected": nodes_inside - box_nodes + 1}
    return FemProblem(n1=n1, n2=n2, m=2, M11=M11, Cd=Cd, Upsilon=Ups, R=np.diag(resistance),
                      curve=curve, elem_rows=elem_rows, elem_scale=elem_scale,
                      elem_vol=elem_vol, elem_cond=elem_cond, dimension="3d", meta=meta)
