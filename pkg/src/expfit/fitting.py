"""Exponentially fitted element bases built from divergence-free fields.

Two constructions are provided, both on the reference element with the
potential pulled back through the element's affine map:

``slotboom``
    For the Slotboom variable rho = u exp(beta phi). Each basis function
    has the fitted gradient ``grad rho_j = exp(beta phi)/D * sum_i m_ji rot v_i``
    with ``rot v = (v_y, -v_x)``; rho_j is recovered by integrating that
    field from the start point along a chosen route. With phi = 0 the
    construction reproduces the Lagrange basis of P_{k+1}.

``direct_u``
    Integrates ``exp(beta phi) v_i`` along the route and weights by
    ``exp(-beta phi(p))`` to produce u_j directly. Kept for the
    nonsingularity / singularity / path-dependence studies and for the
    3-D tetrahedral construction.

In both cases the interpolation constraints at the node set give a square
system ``F M = I`` whose last column of F is all ones.

All arrays are batched over elements: a construction on ``E`` elements
stores coefficient matrices of shape ``(E, N+1, N+1)``.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .expr import Expression
from .quadrature import DEFAULT_SEGMENT_ORDER, segment_rule
from .refspace import DivFreeBasis, NodeSet

__all__ = [
    "PathRule",
    "Variant",
    "FittedBasis",
    "FittingError",
    "SingularElementError",
    "FittingOverflowError",
    "construct",
    "construct_on_mesh",
    "assemble_F_slotboom",
    "assemble_F_directU",
    "solve_element_coefficients",
    "evaluate_rho",
    "evaluate_u",
    "canonical_gradient_rho",
    "directU_basis_3d",
    "linear_phi_oracle",
    "linear_phi_closed_form",
    "SINGULAR_PIVOT_RTOL",
]

SINGULAR_PIVOT_RTOL = 1e-12


class FittingError(ArithmeticError):
    pass


class SingularElementError(FittingError):
    def __init__(self, message, element=None, matrix=None):
        if element is not None:
            message = f"element {element}: {message}"
        super().__init__(message)
        self.element = element
        self.matrix = matrix


class FittingOverflowError(FittingError):
    pass


class PathRule(str, enum.Enum):
    XThenY = "xy"
    YThenX = "yx"
    StraightLine = "line"
    AverageXYYX = "avg"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for member in cls:
            if value in (member.value, member.name):
                return member
        raise ValueError(f"unknown path rule {value!r}")


class Variant(str, enum.Enum):
    Slotboom = "slotboom"
    DirectU = "direct_u"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for member in cls:
            if value in (member.value, member.name):
                return member
        raise ValueError(f"unknown construction variant {value!r}")


def _routes(path, start, p):
    """Waypoint lists for each route from ``start`` to points ``p`` (..., d).

    Returns a list of routes; each route is a list of arrays broadcastable
    to ``p.shape``. AverageXYYX yields two routes whose results are averaged.
    """
    d = p.shape[-1]
    s = np.broadcast_to(start, p.shape)

    def axis_route(order):
        pts = [s]
        cur = s.copy()
        for ax in order:
            cur = cur.copy()
            cur[..., ax] = p[..., ax]
            pts.append(cur)
        return pts

    forward = tuple(range(d))
    if path is PathRule.XThenY:
        return [axis_route(forward)]
    if path is PathRule.YThenX:
        return [axis_route(forward[::-1])]
    if path is PathRule.StraightLine:
        return [[s, p]]
    return [axis_route(forward), axis_route(forward[::-1])]


def _phi_values(phi, x):
    if isinstance(phi, Expression):
        return np.asarray(phi.at(x), dtype=float)
    return np.asarray(phi(x), dtype=float)


@dataclass(frozen=True, eq=False)
class FittedBasis:
    """Fitted basis functions on a batch of elements.

    ``coeffs[e, :, j]`` holds ``(m_j1 .. m_jN, c_j)`` for basis function j,
    where ``c_j`` is rho_j (slotboom) or u_j (direct_u) at the start point.
    With the shift enabled the stored ``m`` are scaled by
    ``exp(beta * shift)`` so that no ``exp(beta phi)`` is ever formed.
    """

    variant: Variant
    basis: DivFreeBasis
    nodes: NodeSet
    path: PathRule
    phi: object
    beta: float
    D: float
    B: np.ndarray
    b: np.ndarray
    shift: np.ndarray
    F: np.ndarray
    coeffs: np.ndarray
    node_phi: np.ndarray
    segment_order: int = DEFAULT_SEGMENT_ORDER
    shifted: bool = True

    @property
    def n_elements(self):
        return self.B.shape[0]

    @property
    def n_basis(self):
        return self.coeffs.shape[-1]

    @property
    def dim(self):
        return self.basis.dim

    @property
    def m(self):
        """Shift-free coefficients m_ji, shape (E, N, N+1)."""
        if self.variant is Variant.DirectU:
            # the direct-u matrix is invariant under the shift
            return self.coeffs[:, :-1, :]
        return self.coeffs[:, :-1, :] * np.exp(-self.beta * self.shift)[:, None, None]

    def physical(self, ref_points):
        ref = self._broadcast(ref_points)
        return np.einsum("eij,e...j->e...i", self.B, ref) + self.b.reshape(
            (self.n_elements,) + (1,) * (ref.ndim - 2) + (self.dim,))

    def _broadcast(self, points):
        p = np.asarray(points, dtype=float)
        if p.ndim == 1:
            p = p[None, :]
        if p.ndim == 2:
            p = np.broadcast_to(p, (self.n_elements,) + p.shape)
        return p

    def phi_at(self, ref_points):
        return _phi_values(self.phi, self.physical(ref_points))

    def _field(self, q):
        v = self.basis(q)  # (..., N, d)
        if self.variant is Variant.Slotboom:
            return np.stack([v[..., 1], -v[..., 0]], axis=-1)
        return v

    def path_integrals(self, ref_points):
        """(1/D) * integral of exp(beta (phi - shift)) field_i along the route.

        Returns shape (E, P, N) for reference points of shape (P, d) or (E, P, d).
        """
        p = self._broadcast(ref_points)
        return _path_integrals(self, p)

    def fitted(self, ref_points, coeffs=None):
        """Values of the functions the F system makes interpolative.

        rho_j for the Slotboom variant, u_j for direct_u. Shape (E, P, N+1).
        """
        coeffs = self.coeffs if coeffs is None else coeffs
        p = self._broadcast(ref_points)
        I = _path_integrals(self, p)
        lin = np.einsum("epi,eij->epj", I, coeffs[:, :-1, :])
        if self.variant is Variant.DirectU:
            lin = lin * self._exp(-(self.phi_at(p) - self.shift[:, None]))[..., None]
        return coeffs[:, None, -1, :] + lin

    def _exp(self, arg):
        with np.errstate(over="ignore"):
            out = np.exp(self.beta * arg)
        if not np.all(np.isfinite(out)):
            raise FittingOverflowError(
                "exponential weight overflowed; enable the per-element shift")
        return out

    def rho(self, ref_points):
        """Slotboom basis functions, interpolative at the nodes."""
        f = self.fitted(ref_points)
        if self.variant is Variant.Slotboom:
            return f
        # rho_j = u_j exp(beta (phi(p) - phi(node_j)))
        p = self._broadcast(ref_points)
        return f * self._exp(self.phi_at(p)[..., None] - self.node_phi[:, None, :])

    def u(self, ref_points):
        """Density basis functions, scaled to be interpolative at the nodes."""
        f = self.fitted(ref_points)
        if self.variant is Variant.DirectU:
            return f
        p = self._broadcast(ref_points)
        return f * self._exp(self.node_phi[:, None, :] - self.phi_at(p)[..., None])

    def _rot_sum(self, ref_points):
        """sum_i m~_ji rot v_i on the reference element, shape (E, P, N+1, d)."""
        if self.variant is not Variant.Slotboom:
            raise FittingError("canonical gradients are defined for the slotboom variant")
        p = self._broadcast(ref_points)
        t = self._field(p)  # (E, P, N, d)
        return np.einsum("epid,eij->epjd", t, self.coeffs[:, :-1, :])

    def grad_rho_ref(self, ref_points):
        """Canonical reference gradient exp(beta phi)/D * sum_i m_ji rot v_i."""
        p = self._broadcast(ref_points)
        w = self._exp(self.phi_at(p) - self.shift[:, None]) / self.D
        return w[..., None, None] * self._rot_sum(p)

    def grad_rho(self, ref_points):
        """Canonical gradient in physical coordinates, shape (E, P, N+1, d)."""
        Binv_T = np.linalg.inv(self.B).transpose(0, 2, 1)
        return np.einsum("eab,epjb->epja", Binv_T, self.grad_rho_ref(ref_points))

    def current(self, ref_points):
        """Canonical current D exp(-beta phi) grad rho_j in physical coordinates.

        The exponential weights cancel, leaving exp(-beta shift) B^{-T} sum m~ rot v.
        """
        Binv_T = np.linalg.inv(self.B).transpose(0, 2, 1)
        r = np.einsum("eab,epjb->epja", Binv_T, self._rot_sum(ref_points))
        return np.exp(-self.beta * self.shift)[:, None, None, None] * r


def _path_integrals(fb, p):
    rule = segment_rule(fb.segment_order)
    routes = _routes(fb.path, fb.nodes.start, p)
    total = 0.0
    for route in routes:
        acc = 0.0
        for a, b in zip(route[:-1], route[1:]):
            delta = np.broadcast_to(b - a, p.shape)
            q = a[..., None, :] + rule.points[:, None] * delta[..., None, :]  # (E,P,K,d)
            q = np.broadcast_to(q, p.shape[:-1] + (rule.order, p.shape[-1]))
            w = fb._exp(fb.phi_at(q) - fb.shift.reshape((-1,) + (1,) * (q.ndim - 2)))
            t = fb._field(q)  # (E,P,K,N,d)
            proj = np.einsum("epkid,epd->epki", t, delta)
            acc = acc + np.einsum("k,epk,epki->epi", rule.weights, w, proj)
        total = total + acc
    return total / (len(routes) * fb.D)


def solve_element_coefficients(F, element=None):
    """Solve F M = I by LU with partial pivoting.

    Raises SingularElementError when a pivot falls below
    ``SINGULAR_PIVOT_RTOL * max|F|``.
    """
    F = np.asarray(F, dtype=float)
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise ValueError("F must be a square matrix")
    if not np.all(np.isfinite(F)):
        raise FittingOverflowError("non-finite entries in F; enable the per-element shift")
    with warnings.catch_warnings():
        # exact zero pivots are reported below as SingularElementError
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(F, check_finite=False)
    scale = np.abs(F).max()
    if np.abs(np.diag(lu)).min() < SINGULAR_PIVOT_RTOL * scale:
        raise SingularElementError("singular interpolation matrix F", element, F)
    return scipy.linalg.lu_solve((lu, piv), np.eye(len(F)), check_finite=False)


def _assemble_F(fb):
    nodes = fb.nodes.points
    I = fb.path_integrals(nodes)  # (E, N+1, N)
    if fb.variant is Variant.DirectU:
        I = I * fb._exp(-(fb.node_phi - fb.shift[:, None]))[..., None]
    ones = np.ones(I.shape[:-1] + (1,))
    return np.concatenate([I, ones], axis=-1)


def construct(variant, basis: DivFreeBasis, nodes: NodeSet, path, phi, beta, D,
              B=None, b=None, *, shift=True, segment_order=DEFAULT_SEGMENT_ORDER,
              solve=True) -> FittedBasis:
    """Build fitted bases on elements given by affine data ``B`` (E,d,d), ``b`` (E,d).

    Omitting ``B``/``b`` constructs on the reference element itself.
    """
    variant = Variant.parse(variant)
    path = PathRule.parse(path)
    if isinstance(phi, str):
        phi = Expression(phi)
    if not D > 0:
        raise ValueError("D must be positive")
    if not beta > 0:
        raise ValueError("beta must be positive")
    d = basis.dim
    if nodes.dim != d:
        raise ValueError("node set and basis have different dimensions")
    if len(nodes) != basis.N + 1:
        raise ValueError(f"node set has {len(nodes)} points, need {basis.N + 1}")
    if variant is Variant.Slotboom and d != 2:
        raise ValueError("the slotboom construction is two-dimensional")
    if B is None:
        B = np.eye(d)[None]
        b = np.zeros((1, d))
    B = np.asarray(B, dtype=float).reshape(-1, d, d)
    b = np.asarray(b, dtype=float).reshape(-1, d)
    E = B.shape[0]
    x_nodes = np.einsum("eij,nj->eni", B, nodes.points) + b[:, None, :]
    node_phi = _phi_values(phi, x_nodes)
    shift_vals = node_phi.max(axis=1) if shift else np.zeros(E)
    n = basis.N + 1
    fb = FittedBasis(variant, basis, nodes, path, phi, float(beta), float(D), B, b,
                     shift_vals, np.empty((E, n, n)), np.empty((E, n, n)), node_phi,
                     segment_order, bool(shift))
    F = _assemble_F(fb)
    object.__setattr__(fb, "F", F)
    if solve:
        coeffs = np.empty_like(F)
        for e in range(E):
            coeffs[e] = solve_element_coefficients(F[e], element=e if E > 1 else None)
        object.__setattr__(fb, "coeffs", coeffs)
    return fb


def construct_on_mesh(mesh, variant, basis, nodes, path, phi, beta, D, **kw) -> FittedBasis:
    B, b = mesh.jacobians
    return construct(variant, basis, nodes, path, phi, beta, D, B, b, **kw)


def _element_data(element, d):
    if element is None:
        return None, None
    return element.B, element.b


def _unshifted_F(variant, basis, nodes, path, phi, beta, D, element):
    B, b = _element_data(element, basis.dim)
    fb = construct(variant, basis, nodes, path, phi, beta, D, B, b, shift=False, solve=False)
    return fb.F[0]


def assemble_F_slotboom(basis, nodes, path, phi, beta, D, element=None):
    """Interpolation matrix of the Slotboom construction.

    Row j, column i <= N: (1/D) times the route integral of
    exp(beta phi) (v_i^y, -v_i^x) from the start point to node j; last column ones.
    """
    return _unshifted_F(Variant.Slotboom, basis, nodes, path, phi, beta, D, element)


def assemble_F_directU(basis, nodes, path, phi, beta, D, element=None):
    """Interpolation matrix of the direct-u construction.

    Row j, column i <= N: exp(-beta phi(node_j))/D times the route integral
    of exp(beta phi) v_i; last column ones.
    """
    return _unshifted_F(Variant.DirectU, basis, nodes, path, phi, beta, D, element)


def _single(fb, values, j):
    if fb.n_elements != 1:
        raise ValueError("pass a single-element FittedBasis")
    return values[0, ..., j]


def evaluate_rho(fb: FittedBasis, j: int, p):
    """rho_j at reference point(s) p; scalar for a single point."""
    p = np.asarray(p, dtype=float)
    out = _single(fb, fb.rho(p.reshape(-1, fb.dim)), j)
    return float(out[0]) if p.ndim == 1 else out


def evaluate_u(fb: FittedBasis, j: int, p):
    p = np.asarray(p, dtype=float)
    out = _single(fb, fb.u(p.reshape(-1, fb.dim)), j)
    return float(out[0]) if p.ndim == 1 else out


def canonical_gradient_rho(fb: FittedBasis, j: int, p, physical=True):
    p = np.asarray(p, dtype=float)
    g = fb.grad_rho(p.reshape(-1, 2)) if physical else fb.grad_rho_ref(p.reshape(-1, 2))
    out = g[0, :, j, :]
    return out[0] if p.ndim == 1 else out


def fd_gradient_rho(fb: FittedBasis, ref_points, h=1e-6):
    """Central-difference reference gradient of the route-integral rho (diagnostic)."""
    p = np.asarray(ref_points, dtype=float)
    cols = []
    for ax in range(fb.dim):
        e = np.zeros(fb.dim)
        e[ax] = h
        cols.append((fb.rho(p + e) - fb.rho(p - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def directU_basis_3d(phi, beta, D, nodes: NodeSet, path=PathRule.XThenY, **kw) -> FittedBasis:
    """First-order direct-u basis on the reference tetrahedron (4 functions)."""
    from .refspace import rt0_basis_3d

    if nodes.dim != 3:
        raise ValueError("3-D construction needs a tetrahedral node set")
    return construct(Variant.DirectU, rt0_basis_3d(), nodes, path, phi, beta, D, **kw)


# ---------------------------------------------------------------------------
# closed forms for a linear potential phi = a x + b y + c, start (0, 0)

def _check_slopes(a, b):
    if a == 0 or b == 0:
        raise ZeroDivisionError("closed form needs nonzero slopes a and b")


def linear_phi_oracle(a, b, c, beta, D, m, u0):
    """Averaged two-route closed form in its reference transcription.

    Returns ``f(x, y)``. Note that its second route pairs m_1 with the
    y-leg; ``linear_phi_closed_form`` is the version consistent with the
    route integrals.
    """
    _check_slopes(a, b)
    m1, m2 = m
    k = 2 * beta * D

    def f(x, y):
        return (u0 + m2 / k * (1 / a + 1 / b)
                + np.exp(-beta * b * y) * (m1 / (k * a) - m2 / (k * b))
                + np.exp(-beta * a * x) * (m1 / (k * b) - m2 / (k * a))
                - m1 * (1 / (k * b) + 1 / (k * a)) * np.exp(-beta * (a * x + b * y)))
    return f


def linear_phi_closed_form(a, b, c, beta, D, m, u0, route="avg"):
    """Exact direct-u RT0 function for linear phi along x-then-y, y-then-x or their mean."""
    _check_slopes(a, b)
    m1, m2 = m
    bD = beta * D

    def xy(x, y):
        return (u0 + m2 / (bD * b) + np.exp(-beta * b * y) * (m1 / (bD * a) - m2 / (bD * b))
                - m1 / (bD * a) * np.exp(-beta * (a * x + b * y)))

    def yx(x, y):
        return (u0 + m1 / (bD * a) + np.exp(-beta * a * x) * (m2 / (bD * b) - m1 / (bD * a))
                - m2 / (bD * b) * np.exp(-beta * (a * x + b * y)))

    route = PathRule.parse(route)
    if route is PathRule.XThenY:
        return xy
    if route is PathRule.YThenX:
        return yx
    if route is PathRule.AverageXYYX:
        return lambda x, y: 0.5 * (xy(x, y) + yx(x, y))
    raise ValueError("closed form is available for axis routes only")
