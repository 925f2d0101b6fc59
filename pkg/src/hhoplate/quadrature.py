"""Quadrature on segments, triangles and star-shaped polygons.

Triangle rules come from a Duffy (collapsed tensor Gauss) construction and
are exact for bivariate polynomials up to the requested degree.  Polygons are
integrated by centroid-fan sub-triangulation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import _polygon_centroid, _signed_area


@dataclass(frozen=True)
class Quadrature:
    points: np.ndarray    # (npts, 2) or (npts,) for 1D rules
    weights: np.ndarray   # (npts,), positive, summing to area / length
    exactness: int


def gauss_1d(npts):
    """Gauss-Legendre nodes/weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def segment_quadrature(a, b, exactness=None, npts=None) -> Quadrature:
    """Gauss rule on the segment [a, b] (2D endpoints); weights sum to the
    segment length."""
    if npts is None:
        npts = exactness // 2 + 1
    x, w = gauss_1d(npts)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    pts = a[None, :] + x[:, None] * (b - a)[None, :]
    length = float(np.hypot(*(b - a)))
    return Quadrature(pts, w * length, 2 * npts - 1)


def triangle_quadrature(v0, v1, v2, exactness) -> Quadrature:
    """Duffy-type rule on the triangle (v0, v1, v2), exact to `exactness`."""
    d = max(int(exactness), 0)
    nu = (d + 3) // 2
    nv = d // 2 + 1
    xu, wu = gauss_1d(nu)
    xv, wv = gauss_1d(nv)
    U, V = np.meshgrid(xu, xv, indexing="ij")
    W = np.outer(wu, wv) * (1.0 - U)
    # reference coordinates on the unit triangle
    xr = U.ravel()
    yr = (V * (1.0 - U)).ravel()
    v0 = np.asarray(v0, dtype=float)
    e1 = np.asarray(v1, dtype=float) - v0
    e2 = np.asarray(v2, dtype=float) - v0
    pts = v0[None, :] + np.outer(xr, e1) + np.outer(yr, e2)
    jac = abs(e1[0] * e2[1] - e1[1] * e2[0])
    return Quadrature(pts, W.ravel() * jac, d)


def polygon_quadrature(vertices, exactness) -> Quadrature:
    """Rule on a simple (star-shaped wrt centroid) polygon via centroid fan."""
    pts = np.asarray(vertices, dtype=float)
    n = len(pts)
    if n == 3:
        return triangle_quadrature(pts[0], pts[1], pts[2], exactness)
    c = _polygon_centroid(pts)
    qs = []
    ws = []
    for j in range(n):
        q = triangle_quadrature(c, pts[j], pts[(j + 1) % n], exactness)
        qs.append(q.points)
        ws.append(q.weights)
    return Quadrature(np.vstack(qs), np.concatenate(ws), exactness)


def element_quadrature(mesh, ei, exactness) -> Quadrature:
    return polygon_quadrature(mesh.element_points(ei), exactness)
