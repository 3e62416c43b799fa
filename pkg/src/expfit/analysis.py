"""Error norms and convergence tables for manufactured solutions."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import Solution, assemble, solve
from .expr import Expression
from .mesh import generate_unit_square
from .problem import ProblemSpec
from .quadrature import triangle_rule

__all__ = [
    "ErrorReport",
    "broken_h1_error",
    "l2_error",
    "convergence_study",
    "spectral_bracket",
    "CSV_HEADER",
]

CSV_HEADER = ("h", "dofs", "err_h1_broken", "err_l2_rho", "err_l2_u", "rate_h1")


def _values(e, x):
    if isinstance(e, str):
        e = Expression(e)
    if isinstance(e, Expression):
        return np.asarray(e.at(x), dtype=float)
    return np.asarray(e(x[..., 0], x[..., 1]), dtype=float)


def _quadrature(sol: Solution):
    system = sol.system
    rule = triangle_rule(system.problem.triangle_degree)
    fb = system.bases
    x = fb.physical(rule.points)
    dx = rule.weights[None, :] * np.abs(np.linalg.det(fb.B))[:, None]
    return rule, fb, x, dx


def broken_h1_error(sol: Solution, exact_grad) -> float:
    """(sum_K |grad rho_exact - grad rho_h|^2_K)^(1/2) with canonical discrete gradients.

    ``exact_grad`` is a pair of expressions (or callables of x, y).
    """
    rule, fb, x, dx = _quadrature(sol)
    gh = np.einsum("eqjd,ej->eqd", fb.grad_rho(rule.points), sol.element_rho)
    ge = np.stack([_values(exact_grad[0], x), _values(exact_grad[1], x)], axis=-1)
    return float(np.sqrt(np.sum(dx * ((ge - gh) ** 2).sum(-1))))


def l2_error(sol: Solution, exact, field="rho") -> float:
    """L2 norm of exact - discrete for ``field`` in {'rho', 'u'}."""
    if field not in ("rho", "u"):
        raise ValueError("field must be 'rho' or 'u'")
    _, fb, x, dx = _quadrature(sol)
    rh = np.einsum("eqj,ej->eq", sol.system.rho_qp, sol.element_rho)
    if field == "u":
        p = sol.system.problem
        rh = rh * np.exp(-p.beta * p.phi.at(x))
    diff = _values(exact, x) - rh
    return float(np.sqrt(np.sum(dx * diff ** 2)))


@dataclass
class ErrorReport:
    rows: list = field(default_factory=list)

    def add(self, h, dofs, err_h1, err_l2_rho, err_l2_u):
        if self.rows and not h < self.rows[-1]["h"]:
            raise ValueError("h must decrease strictly down the table")
        rate = None
        if self.rows:
            prev = self.rows[-1]["err_h1_broken"]
            rate = math.log2(prev / err_h1) if err_h1 > 0 and prev > 0 else float("nan")
        self.rows.append({"h": h, "dofs": dofs, "err_h1_broken": err_h1,
                          "err_l2_rho": err_l2_rho, "err_l2_u": err_l2_u, "rate_h1": rate})

    @property
    def rates(self):
        return [r["rate_h1"] for r in self.rows[1:]]

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([repr(r["h"]), r["dofs"], repr(r["err_h1_broken"]), repr(r["err_l2_rho"]),
                        repr(r["err_l2_u"]), "" if r["rate_h1"] is None else repr(r["rate_h1"])])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    def __str__(self):
        lines = [f"{'h':>10} {'dofs':>7} {'|.|_h err':>12} {'L2 rho':>12} {'L2 u':>12} {'rate':>6}"]
        for r in self.rows:
            rate = "" if r["rate_h1"] is None else f"{r['rate_h1']:.3f}"
            lines.append(f"{r['h']:10.5f} {r['dofs']:7d} {r['err_h1_broken']:12.4e} "
                         f"{r['err_l2_rho']:12.4e} {r['err_l2_u']:12.4e} {rate:>6}")
        return "\n".join(lines)


def convergence_study(problem: ProblemSpec, levels: int, n0=4, solver=None) -> ErrorReport:
    """Solve on generate_unit_square(n0 * 2**l), l = 0..levels-1, and tabulate errors."""
    if levels < 2:
        raise ValueError("levels must be >= 2")
    if problem.exact_rho is None or problem.exact_grad_rho is None:
        raise ValueError("convergence study needs exact_rho and its gradient")
    solver = solver or {}
    exact_rho = problem.exact_rho
    beta, phi = problem.beta, problem.phi

    def exact_u(x, y):
        return exact_rho(x, y) * np.exp(-beta * phi(x, y))

    report = ErrorReport()
    for level in range(levels):
        mesh = generate_unit_square(n0 * 2 ** level, problem.dirichlet_sides)
        sol = solve(assemble(problem.with_mesh(mesh)), **solver)
        report.add(mesh.h, sol.system.dofs.n_dofs,
                   broken_h1_error(sol, problem.exact_grad_rho),
                   l2_error(sol, exact_rho, "rho"),
                   l2_error(sol, exact_u, "u"))
    return report


def spectral_bracket(problem: ProblemSpec):
    """Extreme eigenvalues of the free stiffness block against the phi = 0 block.

    Returns ``(lam_min, lam_max, lower, upper)`` where the bounds are
    ``exp(-beta max|phi|) * lam_min(A_0)`` and ``exp(-beta min|phi|) * lam_max(A_0)``
    with the potential sampled at the DOF nodes and quadrature points. Dense;
    meant for small diagnostic meshes.
    """
    system = assemble(problem)
    ref = assemble(problem.with_(phi=Expression("0")))
    A, _ = system.reduced()
    A0, _ = ref.reduced()
    lam = np.linalg.eigvalsh(A.toarray())
    lam0 = np.linalg.eigvalsh(A0.toarray())
    rule = triangle_rule(problem.triangle_degree)
    samples = np.concatenate([np.abs(problem.phi.at(system.dofs.coords)).ravel(),
                              np.abs(problem.phi.at(system.bases.physical(rule.points))).ravel()])
    lower = math.exp(-problem.beta * samples.max()) * lam0[0]
    upper = math.exp(-problem.beta * samples.min()) * lam0[-1]
    return float(lam[0]), float(lam[-1]), lower, upper
