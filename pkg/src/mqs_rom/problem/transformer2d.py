"""2D single-phase transformer: P1 Lagrange elements on a uniform triangulation.

The domain is the square ``[0, size]^2`` with homogeneous Dirichlet data.  An
iron ring (the conducting, nonlinear region) surrounds a window; each of the
two coils has a *go* and a *return* bundle placed in air, carrying the
uniform turn density ``+-turns / area``.  Geometry is given in fractions of
the side length and regions are assigned per triangle by centroid.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import GeometryError, ParameterError
from .fem import FemProblem
from .reluctivity import ReluctivityCurve

DEFAULT_CORE = (0.25, 0.75, 0.25, 0.75)
DEFAULT_WINDOW = (0.375, 0.625, 0.375, 0.625)
DEFAULT_COILS = (
    ((0.375, 0.5, 0.375, 0.625), (0.125, 0.25, 0.375, 0.625)),
    ((0.5, 0.625, 0.375, 0.625), (0.75, 0.875, 0.375, 0.625)),
)
DEFAULT_SIGMA = 2.0e4
DEFAULT_TURNS = (300.0, 500.0)
DEFAULT_RESISTANCE = (2.0, 3.0)


def _inside(rect, x, y):
    x0, x1, y0, y1 = rect
    return (x > x0) & (x < x1) & (y > y0) & (y < y1)


def _check_rect(rect, name):
    rect = tuple(float(v) for v in rect)
    if len(rect) != 4:
        raise GeometryError(f"{name} must be (x0, x1, y0, y1)")
    x0, x1, y0, y1 = rect
    if not (0.0 <= x0 < x1 <= 1.0 and 0.0 <= y0 < y1 <= 1.0):
        raise GeometryError(f"{name} = {rect} is not a rectangle inside the unit square")
    return rect


def _rects_overlap(a, b):
    return a[0] < b[1] and b[0] < a[1] and a[2] < b[3] and b[2] < a[3]


def triangulate(nx: int, ny: int, size: float = 1.0):
    """Uniform right-triangle mesh: nodes (N, 2) and triangles (T, 3)."""
    xs = np.linspace(0.0, size, nx + 1)
    ys = np.linspace(0.0, size, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return i * (ny + 1) + j

    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    I, J = I.ravel(), J.ravel()
    lower = np.column_stack([nid(I, J), nid(I + 1, J), nid(I + 1, J + 1)])
    upper = np.column_stack([nid(I, J), nid(I + 1, J + 1), nid(I, J + 1)])
    tris = np.empty((2 * I.size, 3), dtype=np.int64)
    tris[0::2] = lower
    tris[1::2] = upper
    return nodes, tris


def p1_gradients(nodes, tris):
    """Areas (T,) and barycentric gradients (T, 3, 2) of P1 triangles."""
    p = nodes[tris]
    x, y = p[..., 0], p[..., 1]
    area2 = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    grads = np.empty(tris.shape + (2,))
    for k in range(3):
        k1, k2 = (k + 1) % 3, (k + 2) % 3
        grads[:, k, 0] = (y[:, k1] - y[:, k2]) / area2
        grads[:, k, 1] = (x[:, k2] - x[:, k1]) / area2
    return 0.5 * np.abs(area2), grads


def build_transformer_2d(nx: int = 8, ny: int = 8, *, size: float = 1.0,
                         core=DEFAULT_CORE, window=DEFAULT_WINDOW, coils=DEFAULT_COILS,
                         curve: ReluctivityCurve | None = None,
                         sigma: float = DEFAULT_SIGMA, turns=DEFAULT_TURNS,
                         resistance=DEFAULT_RESISTANCE) -> FemProblem:
    """Assemble the 2D transformer problem.

    Parameters
    ----------
    nx, ny : int
        Cells per direction (at least 4).
    size : float
        Side length of the square domain in metres.
    core, window : tuple
        Outer boundary of the iron ring and of its window, as fractions
        ``(x0, x1, y0, y1)`` of the side length.
    coils : sequence of (go, return) rectangles
        One entry per port.
    curve : ReluctivityCurve, optional
        Defaults to the Brauer curve with the default coefficients.
    sigma : float
        Conductivity of the iron.
    turns, resistance : sequence of float
        Number of turns and DC resistance per coil.

    Returns
    -------
    FemProblem
    """
    if nx < 4 or ny < 4:
        raise ParameterError(f"need at least 4 cells per direction, got {nx}x{ny}")
    if not (size > 0 and sigma > 0):
        raise ParameterError("size and sigma must be positive")
    core = _check_rect(core, "core")
    window = _check_rect(window, "window")
    if not (core[0] < window[0] and window[1] < core[1] and core[2] < window[2] and window[3] < core[3]):
        raise GeometryError("window must lie strictly inside the core outline")
    coils = [(_check_rect(g, f"coil {j} go"), _check_rect(r, f"coil {j} return"))
             for j, (g, r) in enumerate(coils)]
    m = len(coils)
    turns = np.broadcast_to(np.asarray(turns, dtype=float), (m,))
    resistance = np.broadcast_to(np.asarray(resistance, dtype=float), (m,))
    if np.any(turns <= 0) or np.any(resistance <= 0):
        raise ParameterError("turns and resistances must be positive")
    rects = [r for pair in coils for r in pair]
    for p in range(len(rects)):
        for q in range(p + 1, len(rects)):
            if _rects_overlap(rects[p], rects[q]):
                raise GeometryError(f"coil supports overlap: {rects[p]} and {rects[q]}")
    curve = curve if curve is not None else ReluctivityCurve()

    nodes, tris = triangulate(nx, ny, size)
    area, grads = p1_gradients(nodes, tris)
    cen = nodes[tris].mean(axis=1) / size
    cx, cy = cen[:, 0], cen[:, 1]
    in_core = _inside(core, cx, cy) & ~_inside(window, cx, cy)

    # node numbering: interior nodes, conducting ones first
    ii, jj = np.divmod(np.arange(nodes.shape[0]), ny + 1)
    interior = (ii > 0) & (ii < nx) & (jj > 0) & (jj < ny)
    cond_node = np.zeros(nodes.shape[0], bool)
    cond_node[np.unique(tris[in_core])] = True
    if np.any(cond_node & ~interior):
        raise GeometryError("the core must not touch the domain boundary")
    order = np.concatenate([np.flatnonzero(cond_node & interior),
                            np.flatnonzero(~cond_node & interior)])
    dof = -np.ones(nodes.shape[0], dtype=np.int64)
    dof[order] = np.arange(order.size)
    n1 = int(np.count_nonzero(cond_node & interior))
    n = order.size
    n2 = n - n1

    # discrete gradient: two rows per triangle
    T = tris.shape[0]
    rows = np.broadcast_to(2 * np.arange(T)[:, None, None] + np.arange(2)[None, None, :], (T, 3, 2))
    cols = np.broadcast_to(dof[tris][:, :, None], (T, 3, 2))
    vals = grads
    keep = cols >= 0
    Cd = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(2 * T, n)).tocsr()
    elem_rows = np.arange(2 * T).reshape(T, 2)

    # conductivity matrix on the core
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    ct = np.flatnonzero(in_core)
    Ic = np.repeat(dof[tris[ct]], 3, axis=1).ravel()
    Jc = np.tile(dof[tris[ct]], (1, 3)).ravel()
    Vc = (sigma * area[ct][:, None, None] * local[None]).ravel()
    M11 = sp.coo_matrix((Vc, (Ic, Jc)), shape=(n1, n1)).tocsr()

    # winding matrix X = int chi_j phi_k
    X = np.zeros((n, m))
    supports = []
    for j, (go, ret) in enumerate(coils):
        for rect, sign in ((go, 1.0), (ret, -1.0)):
            sel = np.flatnonzero(_inside(rect, cx, cy))
            if sel.size == 0:
                raise GeometryError(f"coil {j} region {rect} contains no triangle at this resolution")
            if np.any(in_core[sel]):
                raise GeometryError(f"coil {j} region {rect} overlaps the core")
            supports.append(set(sel.tolist()))
            dens = sign * turns[j] / area[sel].sum()
            for t in sel:
                for k in tris[t]:
                    if dof[k] >= 0:
                        X[dof[k], j] += dens * area[t] / 3.0
    for p in range(len(supports)):
        for q in range(p + 1, len(supports)):
            if supports[p] & supports[q]:
                raise GeometryError("coil supports overlap at this resolution")

    # Upsilon with Cd^T Upsilon = X (K_L is SPD for Dirichlet data)
    G = (Cd.T @ Cd).tocsc()
    Upsilon = Cd @ spla.splu(G).solve(X)

    meta = {"generator": "transformer_2d", "nx": nx, "ny": ny, "size": size, "sigma": sigma,
            "turns": ",".join(f"{v:.17g}" for v in turns),
            "core": ",".join(f"{v:.17g}" for v in core),
            "window": ",".join(f"{v:.17g}" for v in window)}
    return FemProblem(n1=n1, n2=n2, m=m, M11=M11, Cd=Cd, Upsilon=Upsilon,
                      R=np.diag(resistance), curve=curve, elem_rows=elem_rows,
                      elem_scale=np.ones(T), elem_vol=area, elem_cond=in_core,
                      dimension="2d", meta=meta)
