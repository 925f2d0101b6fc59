"""Post-processing: error measures, discrete energy, convergence orders,
jump seminorm of the reconstructed deflection, and the equilibrium
diagnostics (face moments / shear forces, action-reaction balance, local
virtual-work residuals)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class ErrorReport:
    h: float
    n_elements: int
    n_faces: int
    n_dof_condensed: int
    nnz: int
    err_energy: float
    err_l2: float
    err_rec_l2: float
    jump_seminorm: float
    energy: float
    eoc_energy: float = float("nan")
    eoc_l2: float = float("nan")


@dataclass
class FluxReport:
    moment_mismatch: np.ndarray     # per interior face, absolute
    shear_mismatch: np.ndarray
    moment_mismatch_rel: np.ndarray
    shear_mismatch_rel: np.ndarray
    virtual_work: np.ndarray        # per element, absolute max over test fns
    virtual_work_rel: np.ndarray

    @property
    def max_moment_rel(self):
        return float(np.max(self.moment_mismatch_rel, initial=0.0))

    @property
    def max_shear_rel(self):
        return float(np.max(self.shear_mismatch_rel, initial=0.0))

    @property
    def max_virtual_work_rel(self):
        return float(np.max(self.virtual_work_rel, initial=0.0))


def discrete_energy(solution, cross_tol=1e-9):
    """Discrete energy E(u_h) = 1/2 a_h(u_h, u_h) - (f, u_h).

    At the solution this equals -1/2 (f, u_h); both forms are computed and
    cross-checked against each other."""
    system = solution.system
    a = 0.0
    lin = 0.0
    fp_bound = 0.0
    eps = np.finfo(float).eps
    for rec in system.records:
        dofs = solution.local_dofs(rec.ei)
        a += rec.kit.quadratic_form(dofs, system.eta)
        lin += float(rec.load @ solution.u_elem[rec.ei])
        # rounding bound on the residual inner product: the stored unknowns
        # carry a representation error of order eps * ||a_T|| * ||d_T||^2
        anorm = rec.kit.kf_norm2 + system.eta * rec.kit.sf_norm2
        fp_bound += eps * anorm * float(dofs @ dofs)
    E = 0.5 * a - lin
    E_alt = -0.5 * lin
    if abs(E - E_alt) > max(cross_tol * abs(E), fp_bound, 1e-14):
        raise RuntimeError(
            f"discrete-energy identity violated: {E:.6e} vs {E_alt:.6e}")
    return E


def interpolate_exact(solution, u, grad_u):
    """Local interpolant dof vectors of the exact solution, per element."""
    system = solution.system
    out = []
    for rec in system.records:
        out.append(rec.kit.interpolate(rec.centroid, u, grad_u))
    return out


def error_energy_norm(solution, u, grad_u):
    """Energy-norm distance between the interpolated exact solution and the
    discrete solution, measured through the assembled local forms."""
    system = solution.system
    total = 0.0
    for rec in system.records:
        d = rec.kit.interpolate(rec.centroid, u, grad_u) \
            - solution.local_dofs(rec.ei)
        total += rec.kit.quadratic_form(d, system.eta)
    return math.sqrt(max(total, 0.0))


def error_l2(solution, u):
    """L2 distance between the element projections of the exact solution and
    the element unknowns (supercloseness measure)."""
    system = solution.system
    total = 0.0
    for rec in system.records:
        kit = rec.kit
        pts = kit.quad_data.points + rec.centroid
        proj = kit._data_basis_vals[:, :kit.Nk].T @ (
            kit.quad_data.weights * u(pts))
        d = proj - solution.u_elem[rec.ei]
        total += float(d @ d)
    return math.sqrt(total)


def error_reconstruction_l2(solution, u):
    """L2 error of the reconstructed deflection field against the exact
    solution."""
    system = solution.system
    total = 0.0
    for rec in system.records:
        kit = rec.kit
        pc = kit.reconstruct(solution.local_dofs(rec.ei))
        pts = kit.quad_data.points + rec.centroid
        vals = kit._data_basis_vals @ pc
        total += float(np.sum(kit.quad_data.weights * (vals - u(pts)) ** 2))
    return math.sqrt(total)


def _face_traces(kit, li, pc):
    """Projected face coefficients (trace, grad-x, grad-y) of a reconstructed
    polynomial with coefficients ``pc`` on local face ``li``."""
    fd = kit._face_data[li]
    wPhi = fd["wPhi"]
    bs = kit.basis
    Vf = bs.vander(fd["pf"])
    vals = Vf @ (bs.Cm @ pc)
    gx = Vf @ (bs.Dx @ bs.Cm @ pc)
    gy = Vf @ (bs.Dy @ bs.Cm @ pc)
    return wPhi.T @ vals, wPhi.T @ gx, wPhi.T @ gy


def jump_seminorm(solution):
    """Weighted jump seminorm of the reconstructed deflection: projected
    jumps of the field (weight A_F / h_F^3) and of its gradient components
    (weight A_F / h_F) over all faces; boundary faces use one-sided traces."""
    system = solution.system
    mesh = system.mesh
    # collect per-face projected traces from each incident element
    traces = [[] for _ in range(mesh.n_faces)]
    amax = [[] for _ in range(mesh.n_faces)]
    for rec in system.records:
        kit = rec.kit
        pc = kit.reconstruct(solution.local_dofs(rec.ei))
        for li, (fi, _) in enumerate(mesh.element_faces[rec.ei]):
            traces[fi].append(_face_traces(kit, li, pc))
            amax[fi].append(kit.material.eig_max)
    total = 0.0
    for fi in range(mesh.n_faces):
        hF = mesh.face_length[fi]
        aF = min(amax[fi])
        if len(traces[fi]) == 2:
            (t1, gx1, gy1), (t2, gx2, gy2) = traces[fi]
            jt, jx, jy = t1 - t2, gx1 - gx2, gy1 - gy2
        else:
            jt, jx, jy = traces[fi][0]
        total += (aF / hF) * float(jx @ jx + jy @ jy)
        total += (aF / hF ** 3) * float(jt @ jt)
    return math.sqrt(max(total, 0.0))


def _element_fluxes(kit, dofs, eta):
    """Face moments and shear forces of one element.

    Returns per local face the pair (M, S): M is a (2, k+1) array of face
    coefficients of the moment flux, S a (k+1,) array of the shear flux, with
    M = -((A grad^2 p) n + eta R_grad) and
    S = -div(A grad^2 p) . n + eta R_trace."""
    pc = kit.reconstruct(dofs)
    res = kit.residual(dofs)
    out = []
    for li in range(kit.n_faces):
        fd = kit._face_data[li]
        wPhi = fd["wPhi"]
        # (A grad^2 p) n and div(A grad^2 p) . n at face quadrature points
        tx = fd["Tnx"] @ pc
        ty = fd["Tny"] @ pc
        dv = fd["divTn"] @ pc
        Rg, Rt = res[li]
        M = -np.vstack([wPhi.T @ tx, wPhi.T @ ty]) - eta * Rg
        S = -(wPhi.T @ dv) + eta * Rt
        out.append((M, S))
    return out


def flux_report(solution) -> FluxReport:
    """Interface action-reaction mismatches and element virtual-work
    residuals of the discrete moments and shear forces."""
    system = solution.system
    mesh = system.mesh
    face_flux = [[] for _ in range(mesh.n_faces)]
    face_scale = [[] for _ in range(mesh.n_faces)]
    vw = np.zeros(mesh.n_elements)
    vw_rel = np.zeros(mesh.n_elements)
    for rec in system.records:
        kit = rec.kit
        dofs = solution.local_dofs(rec.ei)
        pc = kit.reconstruct(dofs)
        fluxes = _element_fluxes(kit, dofs, system.eta)
        hess_energy = math.sqrt(max(float(pc @ (kit.K @ pc)), 0.0))
        elem_scale = kit.material.eig_max / kit.h * hess_energy \
            + float(np.linalg.norm(rec.load))
        for li, (fi, _) in enumerate(mesh.element_faces[rec.ei]):
            face_flux[fi].append(fluxes[li])
            face_scale[fi].append(elem_scale)
        # virtual work: for every element test function v in P^k(T),
        # (A grad^2 p, grad^2 v)_T + sum_F (M, grad v)_F - sum_F (S, v)_F
        # must balance the load (f, v)_T
        r = (kit.K @ pc)[:kit.Nk].copy()
        for li in range(kit.n_faces):
            fd = kit._face_data[li]
            M, S = fluxes[li]
            wf = fd["wf"]
            Phi = fd["Phi"]
            mx = Phi @ M[0]
            my = Phi @ M[1]
            sv = Phi @ S
            r += fd["Gxfk"].T @ (wf * mx) + fd["Gyfk"].T @ (wf * my)
            r -= fd["Bfk"].T @ (wf * sv)
        r -= rec.load
        vw[rec.ei] = float(np.max(np.abs(r)))
        vw_rel[rec.ei] = vw[rec.ei] / max(elem_scale, 1e-300)
    mom = []
    shear = []
    mom_rel = []
    shear_rel = []
    for fi in range(mesh.n_faces):
        if len(face_flux[fi]) != 2:
            continue
        (M1, S1), (M2, S2) = face_flux[fi]
        dm = float(np.linalg.norm(M1 + M2))
        ds = float(np.linalg.norm(S1 + S2))
        scale = max(max(face_scale[fi]), 1e-300)
        mom.append(dm)
        shear.append(ds)
        mom_rel.append(dm / scale)
        shear_rel.append(ds / scale)
    return FluxReport(moment_mismatch=np.array(mom),
                      shear_mismatch=np.array(shear),
                      moment_mismatch_rel=np.array(mom_rel),
                      shear_mismatch_rel=np.array(shear_rel),
                      virtual_work=vw, virtual_work_rel=vw_rel)


def eoc(pairs):
    """Observed convergence orders from a list of (h, error) pairs:
    slope_i = log(e_{i-1}/e_i) / log(h_{i-1}/h_i) for i >= 1."""
    out = []
    for (h0, e0), (h1, e1) in zip(pairs[:-1], pairs[1:]):
        if e0 <= 0.0 or e1 <= 0.0:
            out.append(float("nan"))
        else:
            out.append(math.log(e0 / e1) / math.log(h0 / h1))
    return out
