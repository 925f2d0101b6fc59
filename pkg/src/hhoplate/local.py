"""Element-local machinery: discrete unknowns, interpolation, deflection
reconstruction, stabilization, local bilinear form, boundary differences and
the residual operator used for flux recovery.

All quantities are assembled in per-element orthonormal bases, so L2 inner
products of coefficient vectors are plain dot products and projections onto
lower degrees are coefficient truncations.  Everything here is translation
invariant: a `LocalKit` is built from vertex coordinates relative to the
element centroid and can be shared between translated copies of the same
element shape (the assembly cache exploits this on structured meshes).

Local dof ordering: element coefficients (dim P^k) first, then per face the
two gradient components and the trace, (k+1) coefficients each.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor

from .basis import ElementBasis, FaceBasis, MaterialTensor, poly_dim, SQRT2
from .quadrature import polygon_quadrature


class LocalKit:
    """Per-shape local operator factory for a fixed degree and material."""

    def __init__(self, rel_vertices, face_signs, k, material: MaterialTensor):
        if k < 1:
            raise ValueError("polynomial degree k must be >= 1 "
                             "(the method is not stable for k = 0)")
        self.k = int(k)
        self.material = material
        self.rel_vertices = np.asarray(rel_vertices, dtype=float)
        self.face_signs = list(face_signs)
        self.n_faces = len(self.face_signs)
        self.fdim = k + 1
        self.basis = ElementBasis(self.rel_vertices, k + 2,
                                  exactness=2 * (k + 2))
        self.N2 = self.basis.dim
        self.Nk = poly_dim(k)
        self.n_loc = self.Nk + 3 * self.fdim * self.n_faces
        self.h = self.basis.h
        # oversampled rule for non-polynomial data (loads, interpolation)
        self.quad_data = polygon_quadrature(self.rel_vertices,
                                            2 * (k + 2) + 2)
        self._data_basis_vals = self.basis.eval(self.quad_data.points)
        self._build_faces()
        self._build_operators()
        self._att_factors = {}

    # -- dof layout -----------------------------------------------------------

    def slice_elem(self):
        return slice(0, self.Nk)

    def face_slices(self, i):
        o = self.Nk + 3 * self.fdim * i
        return (slice(o, o + self.fdim),
                slice(o + self.fdim, o + 2 * self.fdim),
                slice(o + 2 * self.fdim, o + 3 * self.fdim))

    # -- construction ---------------------------------------------------------

    def _build_faces(self):
        k = self.k
        verts = self.rel_vertices
        n = len(verts)
        npts = (2 * k + 5 + 1) // 2 + 1
        self.face_bases = []
        self.face_normals = []
        self.face_lengths = []
        for j in range(n):
            p, q = verts[j], verts[(j + 1) % n]
            sign = self.face_signs[j]
            a, b = (p, q) if sign == 1 else (q, p)
            fb = FaceBasis(a, b, k, npts=npts)
            t = b - a
            ncan = np.array([t[1], -t[0]]) / fb.length
            self.face_bases.append(fb)
            self.face_normals.append(sign * ncan)   # outward for this element
            self.face_lengths.append(fb.length)

    def _build_operators(self):
        bs = self.basis
        V = self.material.V
        Cm = bs.Cm
        Dx, Dy = bs.Dx, bs.Dy
        Hxx = Dx @ Dx @ Cm
        Hyy = Dy @ Dy @ Cm
        Hxy = Dx @ Dy @ Cm
        # virtual moment tensor of each basis function, M = -A grad^2 phi
        Mv = [-(V[a, 0] * Hxx + V[a, 1] * Hyy + V[a, 2] * SQRT2 * Hxy)
              for a in range(3)]
        M11, M22 = Mv[0], Mv[1]
        M12 = Mv[2] / SQRT2
        divMx = Dx @ M11 + Dy @ M12
        divMy = Dx @ M12 + Dy @ M22
        ddM = Dx @ divMx + Dy @ divMy

        self.K = bs.stiffness_matrix(self.material)
        w = bs.quad.weights
        Vq = bs.vander(bs.quad.points)
        Bq = Vq @ Cm
        self._elem_basis_vals = Bq

        N2, Nk, fdim = self.N2, self.Nk, self.fdim
        B = np.zeros((N2, self.n_loc))
        B[:, :Nk] = -(Vq @ ddM).T @ (w[:, None] * Bq[:, :Nk])

        self._face_data = []
        self.Q0 = []
        self.Qx = []
        self.Qy = []
        for i, fb in enumerate(self.face_bases):
            nrm = self.face_normals[i]
            pf = fb.quad.points
            wf = fb.quad.weights
            Phi = fb.eval_quad()
            Vf = bs.vander(pf)
            M11f, M22f, M12f = Vf @ M11, Vf @ M22, Vf @ M12
            Mnx = M11f * nrm[0] + M12f * nrm[1]
            Mny = M12f * nrm[0] + M22f * nrm[1]
            divMn = (Vf @ divMx) * nrm[0] + (Vf @ divMy) * nrm[1]
            wPhi = wf[:, None] * Phi
            gx, gy, tr = self.face_slices(i)
            B[:, gx] -= Mnx.T @ wPhi
            B[:, gy] -= Mny.T @ wPhi
            B[:, tr] += divMn.T @ wPhi
            # trace projections of the full P^{k+2} basis onto P^k(F)
            Bf = Vf @ Cm
            Gxf = Vf @ (Dx @ Cm)
            Gyf = Vf @ (Dy @ Cm)
            self.Q0.append(wPhi.T @ Bf)
            self.Qx.append(wPhi.T @ Gxf)
            self.Qy.append(wPhi.T @ Gyf)
            self._face_data.append({
                "pf": pf, "wf": wf, "Phi": Phi, "wPhi": wPhi,
                # (A grad^2 phi) n and div(A grad^2 phi) . n  (no sign flip)
                "Tnx": -Mnx, "Tny": -Mny, "divTn": -divMn,
                "Bfk": Bf[:, :Nk], "Gxfk": Gxf[:, :Nk], "Gyfk": Gyf[:, :Nk],
            })

        # reconstruction: symmetric saddle solve, closure on P^1 moments
        C = np.zeros((3, self.n_loc))
        C[:, :3] = np.eye(3)
        kkt = np.zeros((N2 + 3, N2 + 3))
        kkt[:N2, :N2] = self.K
        kkt[:N2, N2:] = np.eye(N2, 3)
        kkt[N2:, :N2] = np.eye(3, N2)
        sol = np.linalg.solve(kkt, np.vstack([B, C]))
        self.P = sol[:N2]
        self.recon_rhs = B

        self.G = self.P.T @ self.K @ self.P
        self.G = 0.5 * (self.G + self.G.T)

        # stabilization and boundary-difference operators
        Ap = self.material.eig_max
        h = self.h
        S = np.zeros((self.n_loc, self.n_loc))
        DT = self.P[:Nk].copy()
        DT[:, :Nk] -= np.eye(Nk)
        S += (Ap / h ** 4) * (DT.T @ DT)
        Delta = np.zeros((3 * fdim * self.n_faces, self.n_loc))
        for i in range(self.n_faces):
            gx, gy, tr = self.face_slices(i)
            Jx = self.Qx[i] @ self.P
            Jx[:, gx] -= np.eye(fdim)
            Jy = self.Qy[i] @ self.P
            Jy[:, gy] -= np.eye(fdim)
            J0 = self.Q0[i] @ self.P
            J0[:, tr] -= np.eye(fdim)
            S += (Ap / h) * (Jx.T @ Jx + Jy.T @ Jy)
            S += (Ap / h ** 3) * (J0.T @ J0)
            o = 3 * fdim * i
            Delta[o:o + fdim, gx] = np.eye(fdim)
            Delta[o:o + fdim, :Nk] = -self.Qx[i][:, :Nk]
            Delta[o + fdim:o + 2 * fdim, gy] = np.eye(fdim)
            Delta[o + fdim:o + 2 * fdim, :Nk] = -self.Qy[i][:, :Nk]
            Delta[o + 2 * fdim:o + 3 * fdim, tr] = np.eye(fdim)
            Delta[o + 2 * fdim:o + 3 * fdim, :Nk] = -self.Q0[i][:, :Nk]
        self.S = 0.5 * (S + S.T)
        self.Delta = Delta
        # cancellation-free factors: K = Kf^T Kf, S = Sf^T Sf, used for
        # evaluating energies as sums of squares
        evals, evecs = np.linalg.eigh(V)
        Vsqrt = evecs @ (np.sqrt(evals)[:, None] * evecs.T)
        Hc = [Vq @ Hxx, Vq @ Hyy, SQRT2 * (Vq @ Hxy)]
        sw = np.sqrt(w)[:, None]
        self.K_factor = np.vstack(
            [sw * sum(Vsqrt[c, cc] * Hc[cc] for cc in range(3))
             for c in range(3)])
        sblocks = [np.sqrt(Ap) / h ** 2 * DT]
        for i in range(self.n_faces):
            gx, gy, tr = self.face_slices(i)
            Jx = self.Qx[i] @ self.P
            Jx[:, gx] -= np.eye(fdim)
            Jy = self.Qy[i] @ self.P
            Jy[:, gy] -= np.eye(fdim)
            J0 = self.Q0[i] @ self.P
            J0[:, tr] -= np.eye(fdim)
            sblocks.append(np.sqrt(Ap / h) * Jx)
            sblocks.append(np.sqrt(Ap / h) * Jy)
            sblocks.append(np.sqrt(Ap / h ** 3) * J0)
        self.S_factor = np.vstack(sblocks)
        self.K_factor_P = self.K_factor @ self.P
        # Frobenius norms of the factors: ||a_T|| <= kf2 + eta * sf2, used
        # for floating-point error bounds on energy identities
        self.kf_norm2 = float(np.sum(self.K_factor_P ** 2))
        self.sf_norm2 = float(np.sum(self.S_factor ** 2))
        # residual operator: face L2 products are coefficient dot products
        self.R_op = self.S[Nk:, Nk:] @ Delta

        # local seminorm matrix (coercivity diagnostics)
        N = np.zeros((self.n_loc, self.n_loc))
        N[:Nk, :Nk] = self.K[:Nk, :Nk]
        for i in range(self.n_faces):
            o = 3 * fdim * i
            Dg = Delta[o:o + 2 * fdim]
            Dt = Delta[o + 2 * fdim:o + 3 * fdim]
            N += (Ap / h) * (Dg.T @ Dg)
            N += (Ap / h ** 3) * (Dt.T @ Dt)
        self.seminorm_matrix = 0.5 * (N + N.T)

    # -- per-eta operators ----------------------------------------------------

    def local_form(self, eta):
        if eta <= 0.0:
            raise ValueError("stabilization weight eta must be > 0")
        return self.G + eta * self.S

    def quadratic_form(self, dofs, eta):
        """a_T(d, d) evaluated through the factored operators (sum of
        squares, no cancellation)."""
        d = np.asarray(dofs)
        rk = self.K_factor_P @ d
        rs = self.S_factor @ d
        return float(rk @ rk) + eta * float(rs @ rs)

    def att_cho(self, eta):
        key = float(eta)
        if key not in self._att_factors:
            A = self.local_form(eta)
            self._att_factors[key] = cho_factor(A[:self.Nk, :self.Nk])
        return self._att_factors[key]

    # -- pointwise operations (need the element centroid) ---------------------

    def load_vector(self, centroid, f):
        pts = self.quad_data.points + centroid
        return self._data_basis_vals[:, :self.Nk].T @ (
            self.quad_data.weights * f(pts))

    def interpolate(self, centroid, v, grad_v):
        """Local interpolation: element L2 projection of v, face projections
        of the gradient components and of the trace."""
        dofs = np.zeros(self.n_loc)
        pts = self.quad_data.points + centroid
        dofs[:self.Nk] = self._data_basis_vals[:, :self.Nk].T @ (
            self.quad_data.weights * v(pts))
        for i, fb in enumerate(self.face_bases):
            pf = self._face_data[i]["pf"] + centroid
            wPhi = self._face_data[i]["wPhi"]
            gvals = np.asarray(grad_v(pf), dtype=float)
            gx, gy, tr = self.face_slices(i)
            dofs[gx] = wPhi.T @ gvals[:, 0]
            dofs[gy] = wPhi.T @ gvals[:, 1]
            dofs[tr] = wPhi.T @ v(pf)
        return dofs

    def reconstruct(self, dofs):
        """Coefficients in the P^{k+2} element basis of the deflection
        reconstruction."""
        return self.P @ np.asarray(dofs)

    def boundary_difference(self, dofs):
        """Per-face coefficient pairs of the projected differences between
        face unknowns and the element polynomial (gradient and trace)."""
        d = self.Delta @ np.asarray(dofs)
        out = []
        fdim = self.fdim
        for i in range(self.n_faces):
            o = 3 * fdim * i
            out.append((d[o:o + 2 * fdim].reshape(2, fdim), d[o + 2 * fdim:o + 3 * fdim]))
        return out

    def residual(self, dofs):
        """Face residual coefficients (gradient pair and trace) representing
        the stabilization against boundary test differences."""
        r = self.R_op @ np.asarray(dofs)
        out = []
        fdim = self.fdim
        for i in range(self.n_faces):
            o = 3 * fdim * i
            out.append((r[o:o + 2 * fdim].reshape(2, fdim),
                        r[o + 2 * fdim:o + 3 * fdim]))
        return out

    def nonconforming_rhs(self):
        """Alternative (integrated-back) right-hand side of the reconstruction
        problem, used as a regression cross-check of `recon_rhs`."""
        bs = self.basis
        Nk, fdim = self.Nk, self.fdim
        B = np.zeros((self.N2, self.n_loc))
        B[:, :Nk] = self.K[:, :Nk]
        Cm, Dx, Dy = bs.Cm, bs.Dx, bs.Dy
        V = self.material.V
        Hxx, Hyy, Hxy = Dx @ Dx @ Cm, Dy @ Dy @ Cm, Dx @ Dy @ Cm
        Mv = [-(V[a, 0] * Hxx + V[a, 1] * Hyy + V[a, 2] * SQRT2 * Hxy)
              for a in range(3)]
        M11, M22 = Mv[0], Mv[1]
        M12 = Mv[2] / SQRT2
        divMx = Dx @ M11 + Dy @ M12
        divMy = Dx @ M12 + Dy @ M22
        for i, fb in enumerate(self.face_bases):
            nrm = self.face_normals[i]
            pf = fb.quad.points
            wf = fb.quad.weights
            Phi = fb.eval_quad()
            Vf = bs.vander(pf)
            Mnx = (Vf @ M11) * nrm[0] + (Vf @ M12) * nrm[1]
            Mny = (Vf @ M12) * nrm[0] + (Vf @ M22) * nrm[1]
            divMn = (Vf @ divMx) * nrm[0] + (Vf @ divMy) * nrm[1]
            wPhi = wf[:, None] * Phi
            gx, gy, tr = self.face_slices(i)
            B[:, gx] -= Mnx.T @ wPhi
            B[:, gy] -= Mny.T @ wPhi
            B[:, tr] += divMn.T @ wPhi
            # element-trace contributions of the difference terms
            Gxk = (Vf @ (Dx @ Cm))[:, :Nk]
            Gyk = (Vf @ (Dy @ Cm))[:, :Nk]
            Bfk = (Vf @ Cm)[:, :Nk]
            B[:, :Nk] += Mnx.T @ (wf[:, None] * Gxk)
            B[:, :Nk] += Mny.T @ (wf[:, None] * Gyk)
            B[:, :Nk] -= divMn.T @ (wf[:, None] * Bfk)
        return B


def kit_key(rel_vertices, face_signs, k, material):
    return (k, material.key(),
            np.round(np.asarray(rel_vertices), 12).tobytes(),
            tuple(face_signs))


def element_kit(mesh, ei, k, material, cache=None):
    """Kit for mesh element ``ei``, shared across translated copies when a
    cache dict is supplied."""
    centroid = mesh.element_centroid[ei]
    rel = mesh.element_points(ei) - centroid
    signs = [sign for (_, sign) in mesh.element_faces[ei]]
    if cache is None:
        return LocalKit(rel, signs, k, material)
    key = kit_key(rel, signs, k, material)
    kit = cache.get(key)
    if kit is None:
        kit = LocalKit(rel, signs, k, material)
        cache[key] = kit
    return kit
