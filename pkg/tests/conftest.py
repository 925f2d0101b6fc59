import numpy as np
import pytest

from hhoplate.basis import mono_exponents


def random_polynomial(rng, degree, scale=1.0):
    """Callable bivariate polynomial with random coefficients plus its
    gradient and Hessian callables."""
    exps = mono_exponents(degree)
    c = scale * rng.standard_normal(len(exps))

    def ev(pts, dx=0, dy=0):
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(len(pts))
        for ci, (a, b) in zip(c, exps):
            if a < dx or b < dy:
                continue
            fac = ci
            for i in range(dx):
                fac *= (a - i)
            for i in range(dy):
                fac *= (b - i)
            out += fac * pts[:, 0] ** (a - dx) * pts[:, 1] ** (b - dy)
        return out

    def grad(pts):
        return np.column_stack([ev(pts, 1, 0), ev(pts, 0, 1)])

    def hess(pts):
        return np.column_stack([ev(pts, 2, 0), ev(pts, 0, 2), ev(pts, 1, 1)])

    return ev, grad, hess, c, exps


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed after the run so that output
# capture cannot swallow them
acceptance_lines = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)


def delaunay_34_mesh():
    """Unit-square triangulation with 34 elements, 59 faces, 43 interior
    faces (16 boundary points, 10 seeded interior points)."""
    from scipy.spatial import Delaunay
    from hhoplate import PolygonalMesh
    rng = np.random.default_rng(0)
    side = np.linspace(0.0, 1.0, 5)
    bnd = []
    for t in side[:-1]:
        bnd.append((t, 0.0))
    for t in side[:-1]:
        bnd.append((1.0, t))
    for t in side[:-1]:
        bnd.append((1.0 - t, 1.0))
    for t in side[:-1]:
        bnd.append((0.0, 1.0 - t))
    inner = 0.12 + 0.76 * rng.random((10, 2))
    pts = np.vstack([bnd, inner])
    tri = Delaunay(pts)
    return PolygonalMesh(pts, [list(s) for s in tri.simplices])
