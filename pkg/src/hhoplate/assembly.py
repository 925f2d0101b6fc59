"""Global assembly: dof management with strong clamped boundary conditions,
element-by-element static condensation to the face Schur complement, sparse
solve, and element-unknown recovery.

Condensed dof layout: face ``f`` owns the 3(k+1) unknowns
[grad-x (k+1), grad-y (k+1), trace (k+1)] at offset 3(k+1)*f.  Constrained
(boundary) rows are retained with a unit diagonal, so the reported system
size is 3(k+1) times the total face count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import cho_solve

from .basis import MaterialTensor
from .local import element_kit


class SolverError(Exception):
    pass


@dataclass(frozen=True)
class GlobalDofMap:
    k: int
    n_faces: int
    boundary_mask: np.ndarray   # True for constrained condensed dofs

    @property
    def per_face(self):
        return 3 * (self.k + 1)

    @property
    def size(self):
        return self.per_face * self.n_faces

    def face_offset(self, fi):
        return self.per_face * fi

    @property
    def n_free(self):
        return int(np.sum(~self.boundary_mask))


@dataclass
class ElementRecord:
    ei: int
    kit: object
    centroid: np.ndarray
    face_ids: list
    gdofs: np.ndarray           # condensed dof indices of the local face part
    load: np.ndarray            # element load vector b_T


@dataclass
class CondensedSystem:
    mesh: object
    k: int
    eta: float
    dofmap: GlobalDofMap
    matrix: sp.csr_matrix       # after boundary constraint retention
    rhs: np.ndarray
    pattern_nnz: int            # nnz of the unconstrained assembly pattern
    records: list = field(repr=False, default_factory=list)

    @property
    def size(self):
        return self.dofmap.size


@dataclass
class Solution:
    system: CondensedSystem
    u_face: np.ndarray
    u_elem: list
    residual: float

    def local_dofs(self, ei):
        rec = self.system.records[ei]
        dofs = np.empty(rec.kit.n_loc)
        dofs[:rec.kit.Nk] = self.u_elem[ei]
        dofs[rec.kit.Nk:] = self.u_face[rec.gdofs]
        return dofs


def build_dof_map(mesh, k) -> GlobalDofMap:
    if k < 1:
        raise ValueError("polynomial degree k must be >= 1")
    per_face = 3 * (k + 1)
    mask = np.zeros(per_face * mesh.n_faces, dtype=bool)
    for fi in range(mesh.n_faces):
        if mesh.face_boundary[fi]:
            mask[per_face * fi:per_face * (fi + 1)] = True
    return GlobalDofMap(k=k, n_faces=mesh.n_faces, boundary_mask=mask)


def materials_for(mesh, materials):
    """Normalize the material argument to a per-subdomain-id dict."""
    if materials is None:
        materials = MaterialTensor.identity()
    if isinstance(materials, MaterialTensor):
        return {int(s): materials for s in np.unique(mesh.subdomains)}
    return {int(s): m for s, m in materials.items()}


def assemble(mesh, k, materials=None, eta=1.0, f=None, cache=None,
             n_workers=0) -> CondensedSystem:
    """Assemble the condensed (face) system for load ``f`` (callable on
    point arrays; None means zero load).

    ``n_workers > 1`` prebuilds the element operator kits in a thread pool;
    the merge itself is always serial and deterministic."""
    dofmap = build_dof_map(mesh, k)
    matmap = materials_for(mesh, materials)
    if cache is None:
        cache = {}
    if n_workers and n_workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        from .local import kit_key, LocalKit

        jobs = {}
        for ei in range(mesh.n_elements):
            material = matmap[int(mesh.subdomains[ei])]
            rel = mesh.element_points(ei) - mesh.element_centroid[ei]
            signs = [s for (_, s) in mesh.element_faces[ei]]
            key = kit_key(rel, signs, k, material)
            if key not in cache and key not in jobs:
                jobs[key] = (rel, signs, material)
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            futs = {key: pool.submit(LocalKit, rel, signs, k, material)
                    for key, (rel, signs, material) in jobs.items()}
            for key, fut in futs.items():
                cache[key] = fut.result()
    per_face = dofmap.per_face
    fdim = k + 1
    rows, cols, vals = [], [], []
    rhs = np.zeros(dofmap.size)
    records = []
    for ei in range(mesh.n_elements):
        material = matmap[int(mesh.subdomains[ei])]
        kit = element_kit(mesh, ei, k, material, cache=cache)
        centroid = mesh.element_centroid[ei]
        A = kit.local_form(eta)
        Nk = kit.Nk
        if f is not None:
            bT = kit.load_vector(centroid, f)
        else:
            bT = np.zeros(Nk)
        try:
            att = kit.att_cho(eta)
        except np.linalg.LinAlgError as exc:
            raise SolverError(
                f"element {ei}: element-block matrix not SPD ({exc}); "
                "check degree k >= 1 and element geometry") from None
        Atf = A[:Nk, Nk:]
        X = cho_solve(att, np.column_stack([Atf, bT]))
        Schur = A[Nk:, Nk:] - Atf.T @ X[:, :-1]
        bloc = -Atf.T @ X[:, -1]
        face_ids = [fi for (fi, _) in mesh.element_faces[ei]]
        gdofs = np.concatenate([
            np.arange(dofmap.face_offset(fi), dofmap.face_offset(fi) + per_face)
            for fi in face_ids])
        nloc = len(gdofs)
        rows.append(np.repeat(gdofs, nloc))
        cols.append(np.tile(gdofs, nloc))
        vals.append(Schur.ravel())
        np.add.at(rhs, gdofs, bloc)
        records.append(ElementRecord(ei=ei, kit=kit, centroid=centroid,
                                     face_ids=face_ids, gdofs=gdofs, load=bT))
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dofmap.size, dofmap.size)).tocsr()
    pattern_nnz = A.nnz
    # constraint retention: zero constrained rows/cols, unit diagonal
    free = (~dofmap.boundary_mask).astype(float)
    D = sp.diags(free)
    A = D @ A @ D + sp.diags(1.0 - free)
    rhs = rhs * free
    return CondensedSystem(mesh=mesh, k=k, eta=eta, dofmap=dofmap,
                           matrix=A.tocsr(), rhs=rhs,
                           pattern_nnz=pattern_nnz, records=records)


def solve(system: CondensedSystem, tol=1e-10, method="direct") -> Solution:
    """Solve the condensed system and recover element unknowns.

    ``method='direct'`` uses a sparse LU factorization (the matrix is SPD, so
    this never pivots out); ``'cg'`` runs conjugate gradients to the given
    relative tolerance.
    """
    A = system.matrix
    b = system.rhs
    bnorm = np.linalg.norm(b)
    anorm = spla.norm(A, np.inf)

    def backward_error(u):
        # normwise backward error: robust to the h^-4 conditioning of the
        # bending system, unlike a plain ||r|| / ||b||
        den = anorm * np.linalg.norm(u) + bnorm
        return np.linalg.norm(A @ u - b) / max(den, 1e-300)

    if method == "direct":
        lu = spla.splu(A.tocsc())
        u = lu.solve(b)
        res = backward_error(u)
        for _ in range(3):
            if res <= tol:
                break
            u = u + lu.solve(b - A @ u)
            res = backward_error(u)
        if res > tol:
            raise SolverError(f"condensed solve residual {res:.3e} > {tol:.1e}")
    elif method == "cg":
        u, info = spla.cg(A, b, rtol=tol, atol=0.0, maxiter=20 * A.shape[0])
        if info != 0:
            raise SolverError(f"cg did not converge (info={info})")
        res = backward_error(u)
        if res > tol:
            raise SolverError(f"cg backward error {res:.3e} > {tol:.1e}")
    else:
        raise ValueError(f"unknown solver method {method!r}")
    sol_elem = []
    for rec in system.records:
        kit = rec.kit
        Aloc = kit.local_form(system.eta)
        Atf = Aloc[:kit.Nk, kit.Nk:]
        uT = cho_solve(kit.att_cho(system.eta), rec.load - Atf @ u[rec.gdofs])
        sol_elem.append(uT)
    return Solution(system=system, u_face=u, u_elem=sol_elem, residual=res)


def full_residual(solution: Solution) -> float:
    """Relative residual of the uncondensed hybrid system (free rows only)."""
    system = solution.system
    num = 0.0
    den = 0.0
    rface = np.zeros(system.dofmap.size)
    for rec in system.records:
        kit = rec.kit
        dofs = solution.local_dofs(rec.ei)
        r = kit.local_form(system.eta) @ dofs
        rT = r[:kit.Nk] - rec.load
        num += float(rT @ rT)
        den += float(rec.load @ rec.load)
        np.add.at(rface, rec.gdofs, r[kit.Nk:])
    rface[system.dofmap.boundary_mask] = 0.0
    num += float(rface @ rface)
    return np.sqrt(num) / max(np.sqrt(den), 1e-300)


def export_matrix(system: CondensedSystem, path):
    """Symmetric coordinate text export (1-based 'i j value' triples)."""
    A = sp.tril(system.matrix.tocoo())
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("%%MatrixMarket matrix coordinate real symmetric\n")
        fh.write(f"{system.size} {system.size} {A.nnz}\n")
        for i, j, v in zip(A.row, A.col, A.data):
            fh.write(f"{i + 1} {j + 1} {v:.17e}\n")
