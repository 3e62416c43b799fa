import numpy as np
import pytest

from expfit.mesh import generate_unit_square
from expfit.problem import ProblemSpec

R = "sqrt(x^2+y^2)"
PHI_WEAK = f"exp(-2*{R})"
PHI_STRONG = f"4*exp(-2*{R})"
# rho = sin(pi x) sin(pi y), phi = exp(-2r), beta = D = 1:
# f = exp(-phi) (2 pi^2 rho + grad phi . grad rho)  with grad phi = -2 exp(-2r) (x, y)/r
F_MANUFACTURED = (
    f"exp(-exp(-2*{R})) * (2*pi^2*sin(pi*x)*sin(pi*y)"
    f" - 2*pi*exp(-2*{R})/{R} * (x*cos(pi*x)*sin(pi*y) + y*sin(pi*x)*cos(pi*y)))"
)


def manufactured_problem(nodeset="vertices", n=4, space="rt0"):
    return ProblemSpec(
        D=1.0, beta=1.0, phi=PHI_WEAK, f=F_MANUFACTURED, g="0",
        mesh=generate_unit_square(n), space=space, nodeset=nodeset,
        exact_rho="sin(pi*x)*sin(pi*y)",
        exact_grad_rho=("pi*cos(pi*x)*sin(pi*y)", "pi*sin(pi*x)*cos(pi*y)"))


def p1_stiffness(mesh):
    """Classical P1 Laplace stiffness, assembled independently of the package."""
    n = mesh.nv
    A = np.zeros((n, n))
    for tri in mesh.triangles:
        xy = mesh.vertices[tri]
        M = np.column_stack([np.ones(3), xy])
        grads = np.linalg.inv(M)[1:, :]          # columns: gradient of each hat
        area = 0.5 * abs(np.linalg.det(M))
        A[np.ix_(tri, tri)] += area * grads.T @ grads
    return A


def p2_lagrange(points):
    """P2 Lagrange basis at vertices then midpoints (i, i+1) of the reference triangle."""
    x, y = points[:, 0], points[:, 1]
    l0, l1, l2 = 1 - x - y, x, y
    return np.column_stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                            4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0])


def reference_grid(n):
    t = np.linspace(0, 1, n)
    X, Y = np.meshgrid(t, t)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return pts[pts.sum(axis=1) <= 1 + 1e-14]


def random_phi(rng, bound=4.0):
    """Random smooth potential on {1, x, y, exp(-r)} with |phi| <= bound on the unit triangle."""
    c = [float(v) for v in rng.uniform(-1, 1, 4)]
    s = bound / sum(abs(v) for v in c)
    c = [v * s for v in c]
    return f"{c[0]!r} + {c[1]!r}*x + {c[2]!r}*y + {c[3]!r}*exp(-{R})".replace("+ -", "- ")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
