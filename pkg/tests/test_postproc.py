import math

import numpy as np
import pytest

from hhoplate import generate_unit_square
from hhoplate.assembly import Solution, assemble, solve
from hhoplate.cli import builtin_square_case
from hhoplate.postproc import (discrete_energy, eoc, error_energy_norm,
                               error_l2, error_reconstruction_l2, flux_report,
                               interpolate_exact, jump_seminorm)
from conftest import random_polynomial


def solved_case(family="triangular", n=4, k=1, tol=1e-10, method="direct"):
    case = builtin_square_case()
    mesh = generate_unit_square(family, n)
    system = assemble(mesh, k, f=case.f)
    return case, solve(system, tol=tol, method=method)


def injected_solution(mesh, k, v, grad_v):
    """Build a Solution whose unknowns are the local interpolants of v (no
    solve involved)."""
    system = assemble(mesh, k)
    u_face = np.zeros(system.dofmap.size)
    u_elem = []
    for rec in system.records:
        dofs = rec.kit.interpolate(rec.centroid, v, grad_v)
        u_elem.append(dofs[:rec.kit.Nk])
        u_face[rec.gdofs] = dofs[rec.kit.Nk:]
    return Solution(system=system, u_face=u_face, u_elem=u_elem, residual=0.0)


# -- discrete energy ----------------------------------------------------------

def test_energy_zero_load():
    system = assemble(generate_unit_square("triangular", 2), 1)
    assert discrete_energy(solve(system)) == 0.0


def test_energy_equals_minus_half_load_product():
    _, sol = solved_case(n=4, k=2)
    E = discrete_energy(sol)
    ref = -0.5 * sum(float(rec.load @ sol.u_elem[rec.ei])
                     for rec in sol.system.records)
    assert abs(E - ref) <= 1e-9 * abs(ref)
    assert E < 0.0


def test_energy_identity_strict_on_moderate_meshes():
    # cross-check at its default 1e-9 tolerance must hold here
    for fam, n, k in (("triangular", 4, 1), ("cartesian", 4, 2),
                      ("hexagonal", 4, 1)):
        _, sol = solved_case(family=fam, n=n, k=k)
        discrete_energy(sol, cross_tol=1e-9)


def test_energy_cross_check_raises_on_corruption():
    _, sol = solved_case(n=2, k=1)
    sol.u_elem[0] = sol.u_elem[0] + 1e-3
    with pytest.raises(RuntimeError):
        discrete_energy(sol, cross_tol=1e-9)


# -- error measures on an injected exact interpolant --------------------------

def test_errors_vanish_for_injected_polynomial(rng):
    k = 2
    mesh = generate_unit_square("triangular", 3)
    f, grad, _, _, _ = random_polynomial(rng, k)
    sol = injected_solution(mesh, k, f, grad)
    assert error_energy_norm(sol, f, grad) < 1e-10
    assert error_l2(sol, f) < 1e-12
    assert error_reconstruction_l2(sol, f) < 1e-11


def test_interpolate_exact_consistency(rng):
    k = 1
    mesh = generate_unit_square("cartesian", 2)
    f, grad, _, _, _ = random_polynomial(rng, k)
    sol = injected_solution(mesh, k, f, grad)
    for rec, dofs in zip(sol.system.records,
                         interpolate_exact(sol, f, grad)):
        assert np.max(np.abs(dofs - sol.local_dofs(rec.ei))) < 1e-12


# -- jump seminorm ------------------------------------------------------------

def test_jump_seminorm_interior_zero_boundary_one_sided():
    mesh = generate_unit_square("triangular", 2)
    k = 1
    # global polynomial of degree <= k+2 that vanishes on the whole boundary
    # together with its gradient does not exist below degree 8, so interior
    # jumps vanish while boundary traces contribute one-sided terms
    v = lambda p: p[:, 0] * p[:, 1]
    gv = lambda p: np.column_stack([p[:, 1], p[:, 0]])
    sol = injected_solution(mesh, k, v, gv)
    total = jump_seminorm(sol)
    assert total > 1e-3            # boundary traces are seen
    # zero polynomial: seminorm is exactly zero
    z = lambda p: np.zeros(len(p))
    gz = lambda p: np.zeros((len(p), 2))
    assert jump_seminorm(injected_solution(mesh, k, z, gz)) == 0.0


def test_jump_seminorm_decreases_under_refinement():
    vals = []
    for n in (2, 4, 8):
        _, sol = solved_case(n=n, k=1)
        vals.append(jump_seminorm(sol))
    assert vals[2] < vals[1] < vals[0]
    slope = math.log(vals[1] / vals[2]) / math.log(2.0)
    assert slope > 0.8


# -- equilibrium diagnostics --------------------------------------------------

@pytest.mark.parametrize("family", ["triangular", "hexagonal"])
def test_flux_identities_at_solution(family):
    _, sol = solved_case(family=family, n=4, k=2)
    rep = flux_report(sol)
    assert rep.max_moment_rel <= 1e-10
    assert rep.max_shear_rel <= 1e-10
    assert rep.max_virtual_work_rel <= 1e-10
    assert len(rep.moment_mismatch) == sol.system.mesh.n_interior_faces
    assert len(rep.virtual_work) == sol.system.mesh.n_elements


def test_flux_residual_tracks_solver_tolerance():
    case = builtin_square_case()
    mesh = generate_unit_square("triangular", 4)
    system = assemble(mesh, 1, f=case.f)
    tight = flux_report(solve(system, method="direct"))
    loose = flux_report(solve(system, tol=1e-6, method="cg"))
    worst_tight = max(tight.max_moment_rel, tight.max_shear_rel,
                      tight.max_virtual_work_rel)
    worst_loose = max(loose.max_moment_rel, loose.max_shear_rel,
                      loose.max_virtual_work_rel)
    assert worst_loose < 1e-3
    assert worst_tight < 1e-10
    assert worst_loose > 10.0 * worst_tight


# -- convergence orders -------------------------------------------------------

def test_eoc_values():
    assert eoc([(1.0, 4.0), (0.5, 1.0)]) == [2.0]
    out = eoc([(1.0, 8.0), (0.5, 1.0), (0.25, 0.125)])
    assert np.allclose(out, [3.0, 3.0])
    assert math.isnan(eoc([(1.0, 0.0), (0.5, 1.0)])[0])


def test_energy_error_decreases_with_degree():
    case = builtin_square_case()
    mesh = generate_unit_square("triangular", 4)
    errs = []
    for k in (1, 2, 3):
        sol = solve(assemble(mesh, k, f=case.f))
        errs.append(error_energy_norm(sol, case.u, case.grad_u))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.5 * errs[0]
