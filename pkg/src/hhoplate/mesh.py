"""Polygonal meshes: representation, generators, refinement, diagnostics, I/O.

Meshes are immutable after construction.  Connectivity (faces, incidences,
normals) is always derived from the element/vertex description, never stored
in files.  Each face keeps a single fixed unit normal, oriented outward from
the lower-indexed incident element; the other incident element sees the
opposite sign.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class MeshError(Exception):
    """Raised for invalid mesh geometry or connectivity."""


def _signed_area(pts):
    x = pts[:, 0]
    y = pts[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


def _polygon_centroid(pts):
    x = pts[:, 0]
    y = pts[:, 1]
    xn = np.roll(x, -1)
    yn = np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * np.sum(cross)
    cx = np.sum((x + xn) * cross) / (6.0 * a)
    cy = np.sum((y + yn) * cross) / (6.0 * a)
    return np.array([cx, cy])


def _diameter(pts):
    d = 0.0
    n = len(pts)
    for i in range(n):
        for j in range(i + 1, n):
            d = max(d, math.hypot(pts[i, 0] - pts[j, 0], pts[i, 1] - pts[j, 1]))
    return d


@dataclass(frozen=True)
class MeshStats:
    """Counts and geometric diagnostics of a mesh."""

    n_elements: int
    n_faces: int
    n_interior_faces: int
    n_boundary_faces: int
    h: float
    regularity: float


class PolygonalMesh:
    """Conforming polygonal mesh of a 2D domain.

    Parameters
    ----------
    vertices : (nv, 2) array of vertex coordinates.
    elements : sequence of vertex-index lists, each a simple counterclockwise
        polygon.  Clockwise elements are normalized to counterclockwise unless
        ``strict=True``, in which case they are rejected.
    subdomains : optional per-element subdomain id (default 0), used for
        piecewise-constant material data.
    """

    def __init__(self, vertices, elements, subdomains=None, strict=False):
        self.vertices = np.asarray(vertices, dtype=float)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must be an (nv, 2) array")
        elems = []
        for ei, el in enumerate(elements):
            idx = np.asarray(el, dtype=int)
            if len(idx) < 3:
                raise MeshError(f"element {ei} has fewer than 3 vertices")
            if len(set(idx.tolist())) != len(idx):
                raise MeshError(f"element {ei} repeats a vertex")
            pts = self.vertices[idx]
            a = _signed_area(pts)
            if abs(a) < 1e-14:
                raise MeshError(f"element {ei} has zero area")
            if a < 0.0:
                if strict:
                    raise MeshError(f"element {ei} is clockwise (strict mode)")
                idx = idx[::-1]
            elems.append(idx)
        self.elements = elems
        if subdomains is None:
            self.subdomains = np.zeros(len(elems), dtype=int)
        else:
            self.subdomains = np.asarray(subdomains, dtype=int)
            if len(self.subdomains) != len(elems):
                raise MeshError("subdomain list length mismatch")
        self._build_geometry()
        self._build_faces()

    # -- construction helpers -------------------------------------------------

    def _build_geometry(self):
        n = len(self.elements)
        self.element_area = np.empty(n)
        self.element_diameter = np.empty(n)
        self.element_centroid = np.empty((n, 2))
        for i, idx in enumerate(self.elements):
            pts = self.vertices[idx]
            self.element_area[i] = _signed_area(pts)
            self.element_diameter[i] = _diameter(pts)
            self.element_centroid[i] = _polygon_centroid(pts)

    def _build_faces(self):
        face_index = {}
        faces = []            # oriented vertex pairs (a, b)
        face_elems = []       # incident element ids, first = lower-indexed
        elem_faces = []       # per element: list of (face id, sign)
        for ei, idx in enumerate(self.elements):
            loc = []
            n = len(idx)
            for j in range(n):
                a, b = int(idx[j]), int(idx[(j + 1) % n])
                if np.allclose(self.vertices[a], self.vertices[b]):
                    raise MeshError(f"element {ei} has a zero-length face")
                key = (min(a, b), max(a, b))
                if key not in face_index:
                    face_index[key] = len(faces)
                    faces.append((a, b))
                    face_elems.append([ei])
                    loc.append((face_index[key], 1))
                else:
                    fi = face_index[key]
                    if len(face_elems[fi]) >= 2:
                        raise MeshError(
                            f"face {key} shared by more than 2 elements")
                    if faces[fi] != (b, a):
                        raise MeshError(
                            f"face {key} traversed twice in the same direction")
                    face_elems[fi].append(ei)
                    loc.append((fi, -1))
            elem_faces.append(loc)
        self.faces = faces
        self.face_elements = face_elems
        self.element_faces = elem_faces
        nf = len(faces)
        self.face_boundary = np.array([len(te) == 1 for te in face_elems])
        self.face_length = np.empty(nf)
        self.face_midpoint = np.empty((nf, 2))
        self.face_normal = np.empty((nf, 2))
        for fi, (a, b) in enumerate(faces):
            pa, pb = self.vertices[a], self.vertices[b]
            t = pb - pa
            ln = math.hypot(t[0], t[1])
            self.face_length[fi] = ln
            self.face_midpoint[fi] = 0.5 * (pa + pb)
            # ccw traversal of the first incident element: outward normal
            self.face_normal[fi] = np.array([t[1], -t[0]]) / ln
        # regularity sanity: face no longer than element diameter
        for ei, loc in enumerate(self.element_faces):
            for fi, _ in loc:
                if self.face_length[fi] > self.element_diameter[ei] * (1 + 1e-12):
                    raise MeshError(
                        f"face {fi} longer than diameter of element {ei}")

    # -- queries --------------------------------------------------------------

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def n_interior_faces(self):
        return int(np.sum(~self.face_boundary))

    @property
    def n_boundary_faces(self):
        return int(np.sum(self.face_boundary))

    @property
    def h(self):
        return float(np.max(self.element_diameter))

    def element_points(self, ei):
        return self.vertices[self.elements[ei]]

    def outward_normal(self, ei, fi, sign):
        return sign * self.face_normal[fi]

    def face_vertices(self, fi):
        a, b = self.faces[fi]
        return self.vertices[a], self.vertices[b]

    def fan_triangles(self, ei):
        """Centroid-fan sub-triangulation of element ``ei``.

        Valid for the convex / star-shaped elements produced by the built-in
        generators; serves quadrature and regularity diagnostics.
        """
        idx = self.elements[ei]
        c = self.element_centroid[ei]
        pts = self.vertices[idx]
        tris = []
        n = len(idx)
        for j in range(n):
            tris.append(np.array([c, pts[j], pts[(j + 1) % n]]))
        return tris


def _inscribed_radius(pts):
    """Radius of the largest inscribed circle of a convex polygon
    (Chebyshev center via a small linear program)."""
    from scipy.optimize import linprog
    n = len(pts)
    A = np.zeros((n, 3))
    b = np.zeros(n)
    for j in range(n):
        p, q = pts[j], pts[(j + 1) % n]
        t = q - p
        ln = math.hypot(t[0], t[1])
        nrm = np.array([t[1], -t[0]]) / ln   # outward for ccw traversal
        A[j, :2] = nrm
        A[j, 2] = 1.0
        b[j] = nrm @ p
    res = linprog(c=[0.0, 0.0, -1.0], A_ub=A, b_ub=b,
                  bounds=[(None, None), (None, None), (0.0, None)])
    return float(res.x[2])


def mesh_stats(mesh: PolygonalMesh) -> MeshStats:
    """Counts, meshsize and the regularity estimate (min over elements of the
    inscribed-to-diameter ratio)."""
    rho = 1.0
    for ei in range(mesh.n_elements):
        hT = mesh.element_diameter[ei]
        r = _inscribed_radius(mesh.element_points(ei))
        rho = min(rho, r / hT)
    return MeshStats(
        n_elements=mesh.n_elements,
        n_faces=mesh.n_faces,
        n_interior_faces=mesh.n_interior_faces,
        n_boundary_faces=mesh.n_boundary_faces,
        h=mesh.h,
        regularity=rho,
    )


# -- generators ---------------------------------------------------------------

def _grid_vertices(n, x0=0.0, y0=0.0, w=1.0):
    xs = x0 + w * np.arange(n + 1) / n
    ys = y0 + w * np.arange(n + 1) / n
    return np.array([[x, y] for y in ys for x in xs])


def generate_unit_square(family: str, n: int) -> PolygonalMesh:
    """Built-in meshes of (0,1)^2: ``triangular``, ``cartesian``, ``hexagonal``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if family == "triangular":
        verts = _grid_vertices(n)
        elems = []
        for j in range(n):
            for i in range(n):
                v00 = j * (n + 1) + i
                v10 = v00 + 1
                v01 = v00 + (n + 1)
                v11 = v01 + 1
                elems.append([v00, v10, v11])
                elems.append([v00, v11, v01])
        return PolygonalMesh(verts, elems)
    if family == "cartesian":
        verts = _grid_vertices(n)
        elems = []
        for j in range(n):
            for i in range(n):
                v00 = j * (n + 1) + i
                elems.append([v00, v00 + 1, v00 + n + 2, v00 + n + 1])
        return PolygonalMesh(verts, elems)
    if family == "hexagonal":
        return _generate_hexagonal(n)
    raise ValueError(f"unknown mesh family: {family!r}")


def _clip_halfplane(poly, a, b, c, eps=1e-12):
    """Sutherland-Hodgman clip of polygon against a*x + b*y <= c."""
    out = []
    m = len(poly)
    for i in range(m):
        p = poly[i]
        q = poly[(i + 1) % m]
        dp = a * p[0] + b * p[1] - c
        dq = a * q[0] + b * q[1] - c
        if dp <= eps:
            out.append(p)
            if dq > eps and dp < -eps:
                t = dp / (dp - dq)
                out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
        elif dq < -eps:
            t = dp / (dp - dq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def _generate_hexagonal(n: int) -> PolygonalMesh:
    """Flat-top honeycomb with cell width 1/n, clipped by the unit square."""
    R = 0.5 / n                     # circumradius; horizontal cell extent 2R
    dy = math.sqrt(3.0) * R         # vertical distance between row centers
    hexa = [(math.cos(k * math.pi / 3.0), math.sin(k * math.pi / 3.0))
            for k in range(6)]
    cells = []
    jmax = int(math.ceil(1.0 / dy)) + 2
    imax = int(math.ceil(1.0 / (1.5 * R))) + 2
    for i in range(-1, imax + 1):
        cx = 1.5 * R * i
        for j in range(-1, jmax + 1):
            cy = dy * j + (0.5 * dy if i % 2 else 0.0)
            poly = [(cx + R * px, cy + R * py) for px, py in hexa]
            for (a, b, c) in ((-1.0, 0.0, 0.0), (1.0, 0.0, 1.0),
                              (0.0, -1.0, 0.0), (0.0, 1.0, 1.0)):
                poly = _clip_halfplane(poly, a, b, c)
                if not poly:
                    break
            if not poly or len(poly) < 3:
                continue
            pts = np.array(poly)
            if abs(_signed_area(pts)) < 1e-13:
                continue
            cells.append(poly)
    # merge vertices on a rounded grid so clipped neighbours share them exactly
    vert_index = {}
    verts = []
    elems = []
    for poly in cells:
        idx = []
        for (x, y) in poly:
            key = (round(x, 9), round(y, 9))
            if key not in vert_index:
                vert_index[key] = len(verts)
                verts.append((key[0], key[1]))
            vi = vert_index[key]
            if not idx or (vi != idx[-1] and vi != idx[0]):
                idx.append(vi)
        if len(idx) >= 3:
            elems.append(idx)
    return PolygonalMesh(np.array(verts), elems)


def generate_lshape_triangular(n: int) -> PolygonalMesh:
    """Structured triangulation of (0,1)^2 minus its upper-right quarter.

    Three half-unit sub-squares, each split into 2*n^2 triangles.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    vert_index = {}
    verts = []

    def vid(x, y):
        key = (round(x, 12), round(y, 12))
        if key not in vert_index:
            vert_index[key] = len(verts)
            verts.append((x, y))
        return vert_index[key]

    elems = []
    for (x0, y0) in ((0.0, 0.0), (0.5, 0.0), (0.0, 0.5)):
        w = 0.5 / n
        for j in range(n):
            for i in range(n):
                xa, ya = x0 + i * w, y0 + j * w
                v00 = vid(xa, ya)
                v10 = vid(xa + w, ya)
                v01 = vid(xa, ya + w)
                v11 = vid(xa + w, ya + w)
                elems.append([v00, v10, v11])
                elems.append([v00, v11, v01])
    return PolygonalMesh(np.array(verts), elems)


def uniform_refine(mesh: PolygonalMesh) -> PolygonalMesh:
    """Split every triangle into 4 congruent children (edge midpoints), or
    every axis-aligned quad into 4.  Mixed or other shapes are rejected."""
    sizes = {len(e) for e in mesh.elements}
    if sizes == {3}:
        return _refine_triangles(mesh)
    if sizes == {4}:
        return _refine_quads(mesh)
    raise MeshError("uniform refinement requires all triangles or all quads")


def _refine_triangles(mesh):
    verts = [tuple(p) for p in mesh.vertices]
    mid_index = {}

    def midpoint(a, b):
        key = (min(a, b), max(a, b))
        if key not in mid_index:
            mid_index[key] = len(verts)
            p = 0.5 * (mesh.vertices[a] + mesh.vertices[b])
            verts.append((p[0], p[1]))
        return mid_index[key]

    elems = []
    subs = []
    for ei, idx in enumerate(mesh.elements):
        a, b, c = (int(v) for v in idx)
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        elems.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]])
        subs.extend([mesh.subdomains[ei]] * 4)
    return PolygonalMesh(np.array(verts), elems, subdomains=subs)


def _refine_quads(mesh):
    verts = [tuple(p) for p in mesh.vertices]
    idx_of = {}

    def vid(p):
        key = (round(p[0], 12), round(p[1], 12))
        if key not in idx_of:
            idx_of[key] = len(verts)
            verts.append((p[0], p[1]))
        return idx_of[key]

    for i, p in enumerate(mesh.vertices):
        idx_of[(round(p[0], 12), round(p[1], 12))] = i

    elems = []
    subs = []
    for ei, idx in enumerate(mesh.elements):
        pts = mesh.vertices[idx]
        xs = np.unique(np.round(pts[:, 0], 12))
        ys = np.unique(np.round(pts[:, 1], 12))
        if len(xs) != 2 or len(ys) != 2:
            raise MeshError(f"element {ei} is not an axis-aligned quad")
        xm, ym = 0.5 * (xs[0] + xs[1]), 0.5 * (ys[0] + ys[1])
        x0, x1 = xs
        y0, y1 = ys
        for (ax, ay, bx, by) in ((x0, y0, xm, ym), (xm, y0, x1, ym),
                                 (x0, ym, xm, y1), (xm, ym, x1, y1)):
            elems.append([vid((ax, ay)), vid((bx, ay)),
                          vid((bx, by)), vid((ax, by))])
            subs.append(mesh.subdomains[ei])
    return PolygonalMesh(np.array(verts), elems, subdomains=subs)


# -- I/O ----------------------------------------------------------------------

def write_mesh(mesh: PolygonalMesh, path):
    """Write the text format: header `nv ne`, vertex lines, element lines."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(mesh.vertices)} {mesh.n_elements}\n")
        for p in mesh.vertices:
            fh.write(f"{p[0]:.17g} {p[1]:.17g}\n")
        for ei, idx in enumerate(mesh.elements):
            sid = int(mesh.subdomains[ei])
            tail = f" {sid}" if sid != 0 else ""
            fh.write(f"{len(idx)} " + " ".join(str(int(v)) for v in idx)
                     + tail + "\n")


def read_mesh(path, strict=False) -> PolygonalMesh:
    """Read the text mesh format; see `write_mesh`.  Raises MeshError with a
    line diagnostic on malformed input."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines()]
    body = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip()]
    if not body:
        raise MeshError(f"{path}: empty mesh file")
    lineno, header = body[0]
    parts = header.split()
    if len(parts) != 2:
        raise MeshError(f"{path}:{lineno}: header must be 'nv ne'")
    try:
        nv, ne = int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise MeshError(f"{path}:{lineno}: bad header: {exc}") from None
    if len(body) != 1 + nv + ne:
        raise MeshError(
            f"{path}: expected {1 + nv + ne} data lines, found {len(body)}")
    verts = np.empty((nv, 2))
    for i in range(nv):
        lineno, ln = body[1 + i]
        parts = ln.split()
        if len(parts) != 2:
            raise MeshError(f"{path}:{lineno}: vertex line must be 'x y'")
        try:
            verts[i] = [float(parts[0]), float(parts[1])]
        except ValueError as exc:
            raise MeshError(f"{path}:{lineno}: bad coordinate: {exc}") from None
    elems = []
    subs = []
    for i in range(ne):
        lineno, ln = body[1 + nv + i]
        parts = ln.split()
        try:
            m = int(parts[0])
        except (ValueError, IndexError):
            raise MeshError(f"{path}:{lineno}: bad element header") from None
        if len(parts) not in (m + 1, m + 2):
            raise MeshError(
                f"{path}:{lineno}: element line needs {m} indices "
                f"(optional subdomain id)")
        try:
            idx = [int(v) for v in parts[1:m + 1]]
        except ValueError as exc:
            raise MeshError(f"{path}:{lineno}: bad vertex index: {exc}") from None
        if any(v < 0 or v >= nv for v in idx):
            raise MeshError(f"{path}:{lineno}: vertex index out of range")
        elems.append(idx)
        subs.append(int(parts[m + 1]) if len(parts) == m + 2 else 0)
    try:
        return PolygonalMesh(verts, elems, subdomains=subs, strict=strict)
    except MeshError as exc:
        raise MeshError(f"{path}: {exc}") from None
