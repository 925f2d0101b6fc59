import numpy as np
import pytest

from hhoplate import (PolygonalMesh, generate_unit_square,
                      generate_lshape_triangular)
from hhoplate.assembly import (SolverError, assemble, build_dof_map,
                               export_matrix, full_residual, materials_for,
                               solve)
from hhoplate.basis import MaterialTensor
from conftest import delaunay_34_mesh

TWO_TRI = PolygonalMesh([[0, 0], [1, 0], [1, 1], [0, 1]],
                        [[0, 1, 2], [0, 2, 3]])


def unit_load(p):
    return np.ones(len(p))


# -- dof map and sparsity pattern ---------------------------------------------

@pytest.mark.parametrize("k", [1, 2, 3])
def test_dof_map_sizes(k):
    mesh = generate_unit_square("triangular", 3)
    dm = build_dof_map(mesh, k)
    assert dm.per_face == 3 * (k + 1)
    assert dm.size == 3 * (k + 1) * mesh.n_faces
    assert dm.n_free == 3 * (k + 1) * mesh.n_interior_faces
    assert dm.face_offset(2) == 2 * dm.per_face


def test_dof_map_rejects_k0():
    with pytest.raises(ValueError):
        build_dof_map(TWO_TRI, 0)
    with pytest.raises(ValueError):
        assemble(TWO_TRI, 0)


def pattern_nnz_oracle(mesh, k):
    """Brute-force enumeration of coupled face pairs."""
    pairs = set()
    for ei in range(mesh.n_elements):
        fids = [fi for fi, _ in mesh.element_faces[ei]]
        for a in fids:
            for b in fids:
                pairs.add((a, b))
    return (3 * (k + 1)) ** 2 * len(pairs)


@pytest.mark.parametrize("family,n", [("triangular", 3), ("cartesian", 3),
                                      ("hexagonal", 4)])
@pytest.mark.parametrize("k", [1, 2])
def test_pattern_nnz_vs_enumeration(family, n, k):
    mesh = generate_unit_square(family, n)
    system = assemble(mesh, k)
    assert system.pattern_nnz == pattern_nnz_oracle(mesh, k)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_pattern_nnz_closed_form_triangles(k):
    """On triangular meshes every element couples 9 face pairs, interior
    faces are counted twice on the diagonal block: nnz = 9(k+1)^2 (9 T - Fi)."""
    for mesh in (generate_unit_square("triangular", 3),
                 generate_lshape_triangular(2)):
        system = assemble(mesh, k)
        law = 9 * (k + 1) ** 2 * (9 * mesh.n_elements
                                  - mesh.n_interior_faces)
        assert system.pattern_nnz == law
        assert system.pattern_nnz == pattern_nnz_oracle(mesh, k)


def test_delaunay_instance_counts():
    mesh = delaunay_34_mesh()
    assert (mesh.n_elements, mesh.n_faces, mesh.n_interior_faces) == (34, 59, 43)
    s1 = assemble(mesh, 1)
    assert s1.size == 354
    assert s1.pattern_nnz == 9468
    s2 = assemble(mesh, 2)
    assert s2.pattern_nnz == 21303


# -- condensation correctness -------------------------------------------------

def dense_hybrid_solve(mesh, k, eta, f):
    """Oracle: assemble and solve the full (uncondensed) hybrid system
    densely, eliminating boundary face dofs strongly."""
    system = assemble(mesh, k, eta=eta, f=f)
    recs = system.records
    n_face = system.dofmap.size
    elem_off = []
    n = n_face
    for rec in recs:
        elem_off.append(n)
        n += rec.kit.Nk
    A = np.zeros((n, n))
    b = np.zeros(n)
    for rec, eo in zip(recs, elem_off):
        gl = np.concatenate([np.arange(eo, eo + rec.kit.Nk), rec.gdofs])
        Al = rec.kit.local_form(eta)
        A[np.ix_(gl, gl)] += Al
        b[eo:eo + rec.kit.Nk] += rec.load
    free = np.concatenate([~system.dofmap.boundary_mask,
                           np.ones(n - n_face, dtype=bool)])
    u = np.zeros(n)
    u[free] = np.linalg.solve(A[np.ix_(free, free)], b[free])
    u_face = u[:n_face]
    u_elem = [u[eo:eo + rec.kit.Nk] for rec, eo in zip(recs, elem_off)]
    return u_face, u_elem


@pytest.mark.parametrize("k", [1, 2])
def test_condensation_matches_full_hybrid(k):
    eta = 1.5
    u_face_ref, u_elem_ref = dense_hybrid_solve(TWO_TRI, k, eta, unit_load)
    system = assemble(TWO_TRI, k, eta=eta, f=unit_load)
    sol = solve(system)
    scale = max(np.max(np.abs(u_face_ref)), 1e-30)
    assert np.max(np.abs(sol.u_face - u_face_ref)) < 1e-10 * scale
    for ue, ur in zip(sol.u_elem, u_elem_ref):
        assert np.max(np.abs(ue - ur)) < 1e-10 * scale


def test_zero_load_zero_solution():
    system = assemble(TWO_TRI, 2)
    sol = solve(system)
    assert np.max(np.abs(sol.u_face)) == 0.0
    assert all(np.max(np.abs(u)) == 0.0 for u in sol.u_elem)


def test_boundary_rows_retained():
    mesh = generate_unit_square("triangular", 2)
    system = assemble(mesh, 1, f=unit_load)
    A = system.matrix.toarray()
    mask = system.dofmap.boundary_mask
    idx = np.where(mask)[0]
    assert np.all(A[idx][:, idx] == np.eye(len(idx)))
    assert np.all(A[idx][:, ~mask] == 0.0)
    assert np.all(system.rhs[idx] == 0.0)
    sol = solve(system)
    assert np.max(np.abs(sol.u_face[idx])) == 0.0


def test_assembly_deterministic():
    mesh = generate_unit_square("hexagonal", 3)
    s1 = assemble(mesh, 2, f=unit_load)
    s2 = assemble(mesh, 2, f=unit_load)
    assert np.array_equal(s1.matrix.data, s2.matrix.data)
    assert np.array_equal(s1.matrix.indices, s2.matrix.indices)
    assert np.array_equal(s1.rhs, s2.rhs)
    s3 = assemble(mesh, 2, f=unit_load, n_workers=4)
    assert np.array_equal(s1.matrix.data, s3.matrix.data)
    assert np.array_equal(s1.rhs, s3.rhs)


def test_matrix_symmetric():
    system = assemble(generate_unit_square("cartesian", 3), 1, f=unit_load)
    diff = (system.matrix - system.matrix.T)
    assert np.max(np.abs(diff.data)) if diff.nnz else 0.0 < \
        1e-12 * np.max(np.abs(system.matrix.data))


def test_materials_for_normalization():
    assert set(materials_for(TWO_TRI, None)) == {0}
    aniso = MaterialTensor.from_upper_triangle([2, 0.3, 0.1, 1.5, 0, 0.8])
    m = materials_for(TWO_TRI, aniso)
    assert m[0] is aniso
    mesh = PolygonalMesh([[0, 0], [1, 0], [1, 1], [0, 1]],
                         [[0, 1, 2], [0, 2, 3]], subdomains=[0, 7])
    m2 = materials_for(mesh, {0: aniso, 7: MaterialTensor.identity()})
    assert set(m2) == {0, 7}


def test_subdomain_materials_change_solution():
    mesh = PolygonalMesh([[0, 0], [1, 0], [1, 1], [0, 1]],
                         [[0, 1, 2], [0, 2, 3]], subdomains=[0, 1])
    stiff = MaterialTensor.from_upper_triangle([5, 0, 0, 5, 0, 5])
    s_hom = assemble(mesh, 1, f=unit_load)
    s_het = assemble(mesh, 1,
                     materials={0: MaterialTensor.identity(), 1: stiff},
                     f=unit_load)
    u1 = solve(s_hom).u_face
    u2 = solve(s_het).u_face
    assert np.max(np.abs(u1 - u2)) > 1e-12


# -- solvers ------------------------------------------------------------------

def test_direct_solver_residual():
    mesh = generate_unit_square("triangular", 4)
    system = assemble(mesh, 2, f=unit_load)
    sol = solve(system, tol=1e-10)
    assert sol.residual <= 1e-10
    assert full_residual(sol) <= 1e-8


def test_cg_solver_matches_direct():
    mesh = generate_unit_square("triangular", 2)
    system = assemble(mesh, 1, f=unit_load)
    ref = solve(system, method="direct")
    cg = solve(system, tol=1e-12, method="cg")
    scale = np.max(np.abs(ref.u_face))
    assert np.max(np.abs(cg.u_face - ref.u_face)) < 1e-6 * scale


def test_unknown_method_rejected():
    system = assemble(TWO_TRI, 1, f=unit_load)
    with pytest.raises(ValueError):
        solve(system, method="lu-magic")


def test_cg_failure_raises():
    mesh = generate_unit_square("triangular", 4)
    system = assemble(mesh, 2, f=unit_load)
    with pytest.raises(SolverError):
        solve(system, tol=1e-30, method="cg")


# -- matrix export ------------------------------------------------------------

def test_export_matrix_format(tmp_path):
    system = assemble(TWO_TRI, 1, f=unit_load)
    path = tmp_path / "mat.mtx"
    export_matrix(system, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("%%MatrixMarket matrix coordinate real symmetric")
    hdr = [ln for ln in lines if not ln.startswith("%")][0]
    n, m, nnz = map(int, hdr.split())
    assert n == m == system.size
    body = [ln for ln in lines if not ln.startswith("%")][1:]
    assert len(body) == nnz
    A = system.matrix.tocoo()
    lower = np.sum(A.row >= A.col)
    assert nnz == lower
    # round-trip a few entries
    dense = system.matrix.toarray()
    for ln in body[:20]:
        i, j, v = ln.split()
        i, j = int(i) - 1, int(j) - 1
        assert i >= j
        assert abs(float(v) - dense[i, j]) <= 1e-15 * max(abs(dense[i, j]), 1.0)
