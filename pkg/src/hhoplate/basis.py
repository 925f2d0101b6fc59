"""Orthonormal polynomial bases on elements and faces, the material tensor,
and the local projectors (L2 and energy).

Element bases are L2(T)-orthonormal and expressed in the scaled monomial
frame ((x - x_T)/h_T, (y - y_T)/h_T).  Orthonormalization is a Cholesky
factorization of the quadrature mass matrix in graded monomial order, so the
leading dim P^l functions of a degree-L basis form an orthonormal basis of
P^l for every l <= L.  Face bases are orthonormal in the scaled arc-length
coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .mesh import _polygon_centroid, _diameter
from .quadrature import polygon_quadrature, segment_quadrature

SQRT2 = math.sqrt(2.0)


def poly_dim(l):
    return (l + 1) * (l + 2) // 2


def mono_exponents(l):
    """Graded list of bivariate monomial exponents up to total degree l."""
    return [(d - j, j) for d in range(l + 1) for j in range(d + 1)]


def mono_vander(points, exps, center, h):
    pts = np.asarray(points, dtype=float)
    xs = (pts[:, 0] - center[0]) / h
    ys = (pts[:, 1] - center[1]) / h
    cols = [xs ** a * ys ** b for (a, b) in exps]
    return np.column_stack(cols)


def mono_derivative_matrices(exps, h):
    """Matrices Dx, Dy acting on monomial coefficient vectors (same graded
    monomial list for input and output; degree drops by one)."""
    n = len(exps)
    pos = {e: i for i, e in enumerate(exps)}
    Dx = np.zeros((n, n))
    Dy = np.zeros((n, n))
    for i, (a, b) in enumerate(exps):
        if a > 0:
            Dx[pos[(a - 1, b)], i] = a / h
        if b > 0:
            Dy[pos[(a, b - 1)], i] = b / h
    return Dx, Dy


class MaterialTensor:
    """Constant fourth-order symmetric elliptic tensor on symmetric 2x2
    tensors, stored as a 3x3 SPD matrix V in the orthonormal Voigt basis
    (e11, e22, sqrt(2) e12).  With this scaling the eigenvalues of V are the
    extreme eigenvalues of the tensor itself."""

    def __init__(self, V):
        V = np.asarray(V, dtype=float)
        if V.shape != (3, 3):
            raise ValueError("material matrix must be 3x3")
        if not np.allclose(V, V.T, atol=1e-14):
            raise ValueError("material matrix must be symmetric")
        ev = np.linalg.eigvalsh(0.5 * (V + V.T))
        if ev[0] <= 0.0:
            raise ValueError("material matrix must be positive definite")
        self.V = 0.5 * (V + V.T)
        self.eig_min = float(ev[0])
        self.eig_max = float(ev[-1])

    @classmethod
    def identity(cls):
        return cls(np.eye(3))

    @classmethod
    def from_upper_triangle(cls, vals):
        v11, v12, v13, v22, v23, v33 = (float(v) for v in vals)
        return cls(np.array([[v11, v12, v13],
                             [v12, v22, v23],
                             [v13, v23, v33]]))

    def key(self):
        return tuple(np.round(self.V, 14).ravel())


class ElementBasis:
    """L2-orthonormal basis of P^degree(T) on a polygonal element."""

    def __init__(self, vertices, degree, exactness=None):
        self.vertices = np.asarray(vertices, dtype=float)
        self.degree = int(degree)
        self.center = _polygon_centroid(self.vertices)
        self.h = _diameter(self.vertices)
        self.exps = mono_exponents(self.degree)
        self.dim = len(self.exps)
        if exactness is None:
            exactness = 2 * self.degree
        self.quad = polygon_quadrature(self.vertices, exactness)
        Vq = mono_vander(self.quad.points, self.exps, self.center, self.h)
        M = Vq.T @ (self.quad.weights[:, None] * Vq)
        L = np.linalg.cholesky(M)
        # columns of Cm: monomial coefficients of each orthonormal function
        self.Cm = solve_triangular(L, np.eye(self.dim), lower=True).T
        self.Dx, self.Dy = mono_derivative_matrices(self.exps, self.h)
        self._vq = Vq

    # -- evaluation -----------------------------------------------------------

    def vander(self, points):
        return mono_vander(points, self.exps, self.center, self.h)

    def eval(self, points):
        return self.vander(points) @ self.Cm

    def eval_mono_coeffs(self, points, coeffs):
        return self.vander(points) @ coeffs

    def grad(self, points):
        V = self.vander(points)
        return np.stack([V @ (self.Dx @ self.Cm), V @ (self.Dy @ self.Cm)],
                        axis=-1)

    def hess(self, points):
        """Hessian entries (xx, yy, xy) of all basis functions: (npts, dim, 3)."""
        V = self.vander(points)
        Cxx = self.Dx @ self.Dx @ self.Cm
        Cyy = self.Dy @ self.Dy @ self.Cm
        Cxy = self.Dx @ self.Dy @ self.Cm
        return np.stack([V @ Cxx, V @ Cyy, V @ Cxy], axis=-1)

    def sub_dim(self, l):
        return poly_dim(l)

    # -- bilinear forms -------------------------------------------------------

    def mass_matrix(self):
        B = self._vq @ self.Cm
        return B.T @ (self.quad.weights[:, None] * B)

    def stiffness_matrix(self, material: MaterialTensor):
        """(A grad^2 phi_i, grad^2 phi_j)_T on the full basis."""
        w = self.quad.weights
        H = [self._vq @ (self.Dx @ self.Dx @ self.Cm),
             self._vq @ (self.Dy @ self.Dy @ self.Cm),
             SQRT2 * (self._vq @ (self.Dx @ self.Dy @ self.Cm))]
        V = material.V
        K = np.zeros((self.dim, self.dim))
        for a in range(3):
            for b in range(3):
                if V[a, b] != 0.0:
                    K += V[a, b] * (H[a].T @ (w[:, None] * H[b]))
        return 0.5 * (K + K.T)


class FaceBasis:
    """Orthonormal 1D basis of P^degree(F) in the scaled arc-length
    coordinate on the face from point a to point b."""

    def __init__(self, a, b, degree, npts=None):
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.degree = int(degree)
        self.dim = self.degree + 1
        self.length = float(np.hypot(*(self.b - self.a)))
        if npts is None:
            npts = self.degree + 3
        self.quad = segment_quadrature(self.a, self.b, npts=npts)
        t = self._param(self.quad.points)
        V = np.column_stack([t ** j for j in range(self.dim)])
        M = V.T @ (self.quad.weights[:, None] * V)
        L = np.linalg.cholesky(M)
        self.Cm = solve_triangular(L, np.eye(self.dim), lower=True).T
        self._vq = V

    def _param(self, points):
        d = (self.b - self.a) / self.length
        s = (np.asarray(points) - self.a) @ d
        return s / self.length - 0.5

    def eval(self, points):
        t = self._param(points)
        V = np.column_stack([t ** j for j in range(self.dim)])
        return V @ self.Cm

    def eval_quad(self):
        return self._vq @ self.Cm


# -- projectors ---------------------------------------------------------------

def l2_project(basis, f):
    """Coefficients of the L2-orthogonal projection of ``f`` onto the span of
    an orthonormal ``basis`` (element or face); ``f`` is a callable on points
    or an array of values at the basis quadrature points."""
    if callable(f):
        vals = f(basis.quad.points)
    else:
        vals = np.asarray(f, dtype=float)
    if isinstance(basis, FaceBasis):
        B = basis.eval_quad()
    else:
        B = basis.eval(basis.quad.points)
    return B.T @ (basis.quad.weights * vals)


def energy_project(basis: ElementBasis, material: MaterialTensor, f, f_hess):
    """Coefficients in P^l(T) of the local energy projection of ``f``.

    ``f_hess`` returns the Hessian entries (xx, yy, xy) at points, shape
    (npts, 3).  The projection is computed from a symmetric saddle-point
    system: Hessian stiffness block plus 3 Lagrange multipliers enforcing the
    degree-1 moment closure.
    """
    if basis.degree < 2:
        raise ValueError("energy projector requires degree >= 2")
    K = basis.stiffness_matrix(material)
    n = basis.dim
    pts = basis.quad.points
    w = basis.quad.weights
    Hf = np.asarray(f_hess(pts), dtype=float)
    Hvec = np.column_stack([Hf[:, 0], Hf[:, 1], SQRT2 * Hf[:, 2]])
    MHf = Hvec @ material.V
    Hb = basis.hess(pts)
    Hbvec = np.stack([Hb[:, :, 0], Hb[:, :, 1], SQRT2 * Hb[:, :, 2]], axis=-1)
    rhs = np.einsum("q,qc,qnc->n", w, MHf, Hbvec)
    fv = f(pts) if callable(f) else np.asarray(f, dtype=float)
    Bq = basis.eval(pts)
    mom = Bq[:, :3].T @ (w * fv)
    kkt = np.zeros((n + 3, n + 3))
    kkt[:n, :n] = K
    kkt[:n, n:] = np.eye(n, 3)       # orthonormal: P^1 moments = 3 leading coeffs
    kkt[n:, :n] = np.eye(3, n)
    b = np.concatenate([rhs, mom])
    sol = np.linalg.solve(kkt, b)
    return sol[:n]


def seminorm_hm(basis: ElementBasis, coeffs, derivs, m):
    """|f - p|_{H^m(T)} with the sum-of-L2-norms convention; ``coeffs`` are
    basis coefficients of p and ``derivs[(a,b)]`` evaluates the exact partial
    derivative of f at points."""
    pts = basis.quad.points
    w = basis.quad.weights
    total = 0.0
    mono = basis.Cm @ np.asarray(coeffs)
    for a in range(m + 1):
        b = m - a
        D = np.eye(basis.dim)
        for _ in range(a):
            D = basis.Dx @ D
        for _ in range(b):
            D = basis.Dy @ D
        pvals = basis.vander(pts) @ (D @ mono)
        fvals = derivs[(a, b)](pts)
        total += math.sqrt(float(np.sum(w * (fvals - pvals) ** 2)))
    return total


def approximation_rate_probe(l, s, m, levels=5, h0=0.5, material=None):
    """Observed convergence slope of the normalized projection error
    |v - energy_project(v)|_{H^m(T)} / |v|_{H^s(T)} on a family of shrinking
    triangles, for a fixed smooth reference function.

    Returns the least-squares slope of log-error vs log-h; the expected value
    for a fully regular v is s - m (with s <= l + 1).  The normalization by
    the element seminorm |v|_{H^s(T)} removes the measure factor that the
    shrinking domain otherwise contributes to the raw error.
    """
    if material is None:
        material = MaterialTensor.identity()
    cx, cy = 0.31, 0.47

    def deriv(a, b):
        # v(x, y) = sin(pi x + 0.4) * sin(pi y + 0.7), derivative (a, b)
        def fn(pts):
            px = np.sin(np.pi * pts[:, 0] + 0.4 + a * np.pi / 2) * np.pi ** a
            py = np.sin(np.pi * pts[:, 1] + 0.7 + b * np.pi / 2) * np.pi ** b
            return px * py
        return fn

    v = deriv(0, 0)

    def vhess(pts):
        return np.column_stack([deriv(2, 0)(pts), deriv(0, 2)(pts),
                                deriv(1, 1)(pts)])

    hs = []
    errs = []
    base = np.array([[0.0, 0.0], [1.0, 0.1], [0.35, 0.9]])
    base = base - _polygon_centroid(base)
    for lev in range(levels):
        h = h0 * 0.5 ** lev
        tri = np.array([cx, cy]) + h * base
        basis = ElementBasis(tri, l, exactness=2 * l + 6)
        coeffs = energy_project(basis, material, v, vhess)
        derivs = {(a, ma - a): deriv(a, ma - a)
                  for ma in range(m + 1) for a in range(ma + 1)}
        err = seminorm_hm(basis, coeffs, {(a, b): derivs[(a, b)]
                                          for (a, b) in derivs if a + b == m}, m)
        w = basis.quad.weights
        pts = basis.quad.points
        vnorm = sum(math.sqrt(float(np.sum(
            w * deriv(a, s - a)(pts) ** 2))) for a in range(s + 1))
        hs.append(basis.h)
        errs.append(err / vnorm)
    logs_h = np.log(hs)
    logs_e = np.log(errs)
    A = np.column_stack([logs_h, np.ones_like(logs_h)])
    slope, _ = np.linalg.lstsq(A, logs_e, rcond=None)[0]
    return float(slope)
