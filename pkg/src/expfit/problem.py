"""Problem description shared by assembly, analysis and the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .expr import Expression
from .fitting import PathRule, Variant
from .mesh import SIDES, Mesh
from .quadrature import DEFAULT_SEGMENT_ORDER, DEFAULT_TRIANGLE_DEGREE
from .refspace import basis_for_space, node_set

_SPACE_ORDER = {"rt0": 0, "rt1": 1}


def _expr(e):
    if e is None or isinstance(e, Expression):
        return e
    return Expression(e)


@dataclass(frozen=True)
class ProblemSpec:
    """-div(D exp(-beta phi) grad rho) = f, rho = g exp(beta phi) on the Dirichlet part.

    ``exact_rho`` and its gradient are optional and only used for error
    measurement; ``grad_phi`` is only needed by the linear-potential oracle.
    """

    D: float = 1.0
    beta: float = 1.0
    phi: Expression = "0"
    f: Expression = "0"
    g: Expression = "0"
    mesh: Mesh | None = None
    dirichlet_sides: tuple = SIDES
    space: str = "rt0"
    nodeset: str = "vertices"
    path: PathRule = PathRule.XThenY
    variant: Variant = Variant.Slotboom
    shift: bool = True
    segment_order: int = DEFAULT_SEGMENT_ORDER
    triangle_degree: int = DEFAULT_TRIANGLE_DEGREE
    exact_rho: Expression | None = None
    exact_grad_rho: tuple | None = None
    grad_phi: tuple | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        for name in ("phi", "f", "g", "exact_rho"):
            set_(name, _expr(getattr(self, name)))
        for name in ("exact_grad_rho", "grad_phi"):
            val = getattr(self, name)
            if val is not None:
                set_(name, tuple(_expr(v) for v in val))
        set_("path", PathRule.parse(self.path))
        set_("variant", Variant.parse(self.variant))
        set_("dirichlet_sides", tuple(self.dirichlet_sides))
        if not self.D > 0:
            raise ValueError("D must be positive")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.space not in _SPACE_ORDER:
            raise ValueError(f"space must be one of {sorted(_SPACE_ORDER)} for 2-D problems")
        self.nodes  # validates the (space, nodeset) pairing

    @property
    def k(self):
        return _SPACE_ORDER[self.space]

    @property
    def basis(self):
        return basis_for_space(self.space)

    @property
    def nodes(self):
        return node_set(self.k, self.nodeset)

    def with_mesh(self, mesh):
        return replace(self, mesh=mesh)

    def with_(self, **kw):
        return replace(self, **kw)
