"""Global assembly and solution of the fitted nonconforming Galerkin problem.

The unknowns are nodal values of the Slotboom variable rho. Dirichlet
nodes are eliminated strongly; Neumann zero-flux is natural.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .fitting import FittedBasis, Variant, construct_on_mesh
from .mesh import Mesh
from .problem import ProblemSpec
from .quadrature import triangle_rule

__all__ = [
    "DofTable",
    "GlobalSystem",
    "Solution",
    "SolverError",
    "ConvergenceError",
    "IndefiniteMatrixError",
    "PointOutsideDomainError",
    "build_dof_table",
    "assemble",
    "solve",
    "pcg",
    "evaluate_solution",
]

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class ConvergenceError(SolverError):
    def __init__(self, iterations, residual):
        super().__init__(f"CG did not converge in {iterations} iterations "
                         f"(relative residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class IndefiniteMatrixError(SolverError):
    pass


class PointOutsideDomainError(ValueError):
    pass


@dataclass(frozen=True)
class DofTable:
    kind: str
    element_dofs: np.ndarray    # (nt, nloc)
    coords: np.ndarray          # (ndofs, 2)
    constrained: np.ndarray     # (ndofs,) bool

    @property
    def n_dofs(self):
        return len(self.coords)

    @property
    def free(self):
        return np.flatnonzero(~self.constrained)

    @property
    def fixed(self):
        return np.flatnonzero(self.constrained)


def build_dof_table(mesh: Mesh, nodeset_kind: str) -> DofTable:
    """One DOF per vertex, per edge (midpoint) or both, in local node order."""
    if nodeset_kind == "vertices":
        return DofTable(nodeset_kind, mesh.triangles, mesh.vertices, mesh.dirichlet_vertices)
    if nodeset_kind == "midpoints":
        return DofTable(nodeset_kind, mesh.triangle_edges, mesh.edge_midpoints,
                        mesh.dirichlet_edges)
    if nodeset_kind == "p2":
        dofs = np.hstack([mesh.triangles, mesh.nv + mesh.triangle_edges])
        coords = np.vstack([mesh.vertices, mesh.edge_midpoints])
        constrained = np.concatenate([mesh.dirichlet_vertices, mesh.dirichlet_edges])
        return DofTable(nodeset_kind, dofs, coords, constrained)
    raise ValueError(f"no DOF layout for node set {nodeset_kind!r}")


@dataclass(frozen=True, eq=False)
class GlobalSystem:
    problem: ProblemSpec
    mesh: Mesh
    dofs: DofTable
    bases: FittedBasis
    A: sp.csr_matrix          # full stiffness, all DOFs
    b: np.ndarray             # full load
    dirichlet_values: np.ndarray
    rho_qp: np.ndarray        # basis rho_j at the triangle rule points, (nt, Q, nloc)

    @property
    def free(self):
        return self.dofs.free

    def reduced(self):
        """Free block and right-hand side after Dirichlet elimination."""
        free, fixed = self.dofs.free, self.dofs.fixed
        A = self.A.tocsr()
        A_ff = A[free][:, free]
        rhs = self.b[free] - A[free][:, fixed] @ self.dirichlet_values[fixed]
        return A_ff.tocsr(), rhs


def _element_matrices(fb: FittedBasis, rule):
    qp = rule.points
    phi_qp = fb.phi_at(qp)                                        # (E, Q)
    # D e^{-beta phi} grad rho_p . grad rho_q = e^{beta(phi - 2 shift)}/D  R_p . R_q
    with np.errstate(under="ignore"):
        weight = np.exp(fb.beta * (phi_qp - 2 * fb.shift[:, None])) / fb.D
    Binv_T = np.linalg.inv(fb.B).transpose(0, 2, 1)
    R = np.einsum("eab,eqjb->eqja", Binv_T, fb._rot_sum(qp))    # (E, Q, nloc, 2)
    det = np.abs(np.linalg.det(fb.B))
    c = weight * rule.weights[None, :] * det[:, None]
    K = np.einsum("eq,eqia,eqja->eij", c, R, R)
    return 0.5 * (K + K.transpose(0, 2, 1))


def assemble(problem: ProblemSpec) -> GlobalSystem:
    """Build fitted bases on every element and assemble stiffness and load."""
    if problem.variant is not Variant.Slotboom:
        raise ValueError("global assembly uses the slotboom construction")
    mesh = problem.mesh
    if mesh is None:
        raise ValueError("problem has no mesh")
    dofs = build_dof_table(mesh, problem.nodeset)
    fb = construct_on_mesh(mesh, problem.variant, problem.basis, problem.nodes,
                           problem.path, problem.phi, problem.beta, problem.D,
                           shift=problem.shift, segment_order=problem.segment_order)
    rule = triangle_rule(problem.triangle_degree)
    Ke = _element_matrices(fb, rule)

    rho_qp = fb.rho(rule.points)                                  # (E, Q, nloc)
    x_qp = fb.physical(rule.points)
    f_qp = np.asarray(problem.f.at(x_qp), dtype=float)
    det = np.abs(np.linalg.det(fb.B))
    be = np.einsum("q,e,eq,eqj->ej", rule.weights, det, f_qp, rho_qp)

    ed = dofs.element_dofs
    nloc = ed.shape[1]
    rows = np.repeat(ed, nloc, axis=1).ravel()
    cols = np.tile(ed, (1, nloc)).ravel()
    n = dofs.n_dofs
    A = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    b = np.zeros(n)
    np.add.at(b, ed.ravel(), be.ravel())

    gvals = np.zeros(n)
    fixed = dofs.fixed
    if len(fixed):
        xc = dofs.coords[fixed]
        gvals[fixed] = problem.g.at(xc) * np.exp(problem.beta * problem.phi.at(xc))
    log.debug("assembled %d dofs (%d free) on %d elements", n, len(dofs.free), mesh.nt)
    return GlobalSystem(problem, mesh, dofs, fb, A, b, gvals, rho_qp)


def pcg(A, b, tol=1e-10, max_iter=10000, M=None):
    """Preconditioned conjugate gradients with an indefiniteness check.

    Returns ``(x, iterations, relative_residual, lanczos)`` where ``lanczos``
    holds the (alpha, beta) sequences for Ritz value estimates.
    """
    n = len(b)
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return x, 0, 0.0, ([], [])
    if M is None:
        M = np.ones(n)
    r = b.copy()
    z = r / M
    p = z.copy()
    rz = r @ z
    alphas, betas = [], []
    for it in range(1, max_iter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise IndefiniteMatrixError(
                f"non-positive curvature p.Ap = {pAp:.3e} at CG iteration {it}")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        alphas.append(alpha)
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            return x, it, res, (alphas, betas)
        z = r / M
        rz_new = r @ z
        beta = rz_new / rz
        betas.append(beta)
        rz = rz_new
        p = z + beta * p
    raise ConvergenceError(max_iter, res)


def ritz_values(lanczos):
    """Eigenvalue estimates of the preconditioned operator from CG coefficients."""
    alphas, betas = lanczos
    k = len(alphas)
    if k == 0:
        return np.array([])
    diag = np.empty(k)
    off = np.empty(max(k - 1, 0))
    diag[0] = 1 / alphas[0]
    for i in range(1, k):
        diag[i] = 1 / alphas[i] + betas[i - 1] / alphas[i - 1]
        off[i - 1] = np.sqrt(betas[i - 1]) / alphas[i - 1]
    return scipy.linalg.eigvalsh_tridiagonal(diag, off)


@dataclass(frozen=True, eq=False)
class Solution:
    system: GlobalSystem
    rho: np.ndarray          # nodal rho, all DOFs
    method: str
    iterations: int
    residual: float
    ritz: np.ndarray

    @property
    def u(self):
        p = self.system.problem
        return self.rho * np.exp(-p.beta * p.phi.at(self.system.dofs.coords))

    @property
    def element_rho(self):
        return self.rho[self.system.dofs.element_dofs]          # (E, nloc)


def solve(system: GlobalSystem, tol=1e-10, max_iter=10000, dense_threshold=500) -> Solution:
    """Solve the reduced SPD system: dense Cholesky when small, Jacobi-PCG otherwise."""
    A_ff, rhs = system.reduced()
    n_free = len(rhs)
    x = system.dirichlet_values.copy()
    ritz = np.array([])
    if n_free == 0:
        method, its, res = "none", 0, 0.0
    elif n_free <= dense_threshold:
        dense = A_ff.toarray()
        try:
            c = scipy.linalg.cho_factor(dense)
        except np.linalg.LinAlgError as exc:
            raise IndefiniteMatrixError(f"free block is not positive definite: {exc}") from None
        xf = scipy.linalg.cho_solve(c, rhs)
        method, its = "cholesky", 1
        bn = np.linalg.norm(rhs)
        res = float(np.linalg.norm(A_ff @ xf - rhs) / bn) if bn else 0.0
        x[system.free] = xf
    else:
        diag = A_ff.diagonal()
        if np.any(diag <= 0):
            raise IndefiniteMatrixError("non-positive diagonal entry in the free block")
        xf, its, res, lanczos = pcg(A_ff, rhs, tol=tol, max_iter=max_iter, M=diag)
        bn = np.linalg.norm(rhs)
        res = float(np.linalg.norm(A_ff @ xf - rhs) / bn) if bn else 0.0
        ritz = ritz_values(lanczos)
        method = "pcg"
        x[system.free] = xf
    return Solution(system, x, method, its, res, ritz)


def _subset(fb: FittedBasis, elems):
    from dataclasses import replace

    return replace(fb, B=fb.B[elems], b=fb.b[elems], shift=fb.shift[elems], F=fb.F[elems],
                   coeffs=fb.coeffs[elems], node_phi=fb.node_phi[elems])


def evaluate_solution(sol: Solution, points):
    """(rho, u, J) at physical points; J has shape (n, 2).

    A point on a shared edge is evaluated in the first element found.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    mesh = sol.system.mesh
    elems = mesh.locate(pts)
    if np.any(elems < 0):
        bad = pts[np.flatnonzero(elems < 0)[0]]
        raise PointOutsideDomainError(f"point {tuple(bad)} lies outside the mesh")
    fb = _subset(sol.system.bases, elems)
    B, b = mesh.jacobians
    ref = np.einsum("eij,ej->ei", np.linalg.inv(B[elems]), pts - b[elems])[:, None, :]
    coef = sol.element_rho[elems]                                # (n, nloc)
    rho = np.einsum("epj,ej->e", fb.rho(ref), coef)
    problem = sol.system.problem
    u = rho * np.exp(-problem.beta * problem.phi.at(pts))
    J = np.einsum("epjd,ej->ed", fb.current(ref), coef)
    return rho, u, J
