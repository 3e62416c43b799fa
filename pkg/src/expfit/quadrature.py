"""Gauss rules on segments and symmetric rules on the reference triangle."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

__all__ = [
    "SegmentRule",
    "TriangleRule",
    "segment_rule",
    "triangle_rule",
    "integrate_segment",
    "integrate_triangle",
    "integrate_element",
    "DEFAULT_SEGMENT_ORDER",
    "DEFAULT_TRIANGLE_DEGREE",
]

DEFAULT_SEGMENT_ORDER = 16
DEFAULT_TRIANGLE_DEGREE = 8


@dataclass(frozen=True)
class SegmentRule:
    """Gauss-Legendre rule on [0, 1]; weights sum to 1."""

    points: np.ndarray
    weights: np.ndarray

    @property
    def order(self):
        return len(self.points)

    @property
    def degree(self):
        return 2 * len(self.points) - 1


@dataclass(frozen=True)
class TriangleRule:
    """Rule on the reference triangle; weights sum to its area 1/2."""

    points: np.ndarray
    weights: np.ndarray
    degree: int


@lru_cache(maxsize=None)
def segment_rule(order: int = DEFAULT_SEGMENT_ORDER) -> SegmentRule:
    if order < 1:
        raise ValueError("segment rule order must be >= 1")
    x, w = np.polynomial.legendre.leggauss(order)
    pts, wts = 0.5 * (x + 1.0), 0.5 * w
    pts.setflags(write=False)
    wts.setflags(write=False)
    return SegmentRule(pts, wts)


# Symmetric orbits in barycentric form, weights normalised to sum 1.
# Degree 4/6/8 values are the Dunavant rules re-solved to double precision.
_ORBITS = {
    1: [("c", 1.0)],
    2: [("s2", 1 / 3, 1 / 6)],
    4: [("s2", 0.22338158967801114, 0.44594849091596467),
        ("s2", 0.10995174365532223, 0.09157621350977095)],
    6: [("s2", 0.11678627572642229, 0.2492867451708851),
        ("s2", 0.05084490637021456, 0.0630890144915078),
        ("s3", 0.08285107561834826, 0.053145049844799036, 0.31035245103380393)],
    8: [("c", 0.14431560767773963),
        ("s2", 0.09509163426731805, 0.4592925882926874),
        ("s2", 0.10321737053472649, 0.1705693077517169),
        ("s2", 0.03245849762320241, 0.050547228317031484),
        ("s3", 0.027230314174419918, 0.008394777409902639, 0.263112829634764)],
}


def _expand(orbits):
    pts, wts = [], []
    for kind, w, *par in orbits:
        if kind == "c":
            bary = [(1 / 3, 1 / 3, 1 / 3)]
        elif kind == "s2":
            a = par[0]
            b = 1 - 2 * a
            bary = [(b, a, a), (a, b, a), (a, a, b)]
        else:
            a, b = par
            bary = sorted(set(itertools.permutations((a, b, 1 - a - b))))
        for lam in bary:
            pts.append((lam[1], lam[2]))
            wts.append(0.5 * w)
    return np.array(pts), np.array(wts)


def _conical_product(degree):
    # Duffy-collapsed Gauss-Jacobi x Gauss-Legendre; exact to 2n-1 >= degree.
    n = degree // 2 + 1
    xa, wa = roots_jacobi(n, 1.0, 0.0)   # weight (1 - s) on [-1, 1]
    xb, wb = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (xa + 1.0)
    t = 0.5 * (xb + 1.0)
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(wa / 4.0, wb / 2.0)
    pts = np.column_stack([S.ravel(), ((1 - S) * T).ravel()])
    return pts, W.ravel()


@lru_cache(maxsize=None)
def triangle_rule(degree: int = DEFAULT_TRIANGLE_DEGREE) -> TriangleRule:
    """Symmetric rule of the requested exactness degree.

    Degrees without a tabulated symmetric rule fall back to the smallest
    tabulated rule that is at least as exact, or to a collapsed Gauss
    product rule above degree 8.
    """
    if degree < 0:
        raise ValueError("triangle rule degree must be >= 0")
    table = [d for d in sorted(_ORBITS) if d >= max(degree, 1)]
    if table:
        d = table[0]
        pts, wts = _expand(_ORBITS[d])
    else:
        d = degree
        pts, wts = _conical_product(degree)
    pts.setflags(write=False)
    wts.setflags(write=False)
    return TriangleRule(pts, wts, d)


def integrate_segment(f, a, b, rule: SegmentRule | None = None) -> float:
    """Integral of f with respect to arc length along the segment a -> b."""
    rule = rule or segment_rule()
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    L = float(np.linalg.norm(b - a))
    if L == 0.0:
        return 0.0
    pts = a + rule.points[:, None] * (b - a)
    vals = np.asarray(f(pts), dtype=float)
    return float(L * (rule.weights * vals).sum())


def integrate_triangle(f, rule: TriangleRule | None = None) -> float:
    """Integral of f over the reference triangle; f takes an (n, 2) array."""
    rule = rule or triangle_rule()
    return float((rule.weights * np.asarray(f(rule.points), dtype=float)).sum())


def integrate_element(f, amap, rule: TriangleRule | None = None) -> float:
    """Integral of f over the physical element ``amap`` maps onto."""
    rule = rule or triangle_rule()
    x = amap(rule.points)
    return float(abs(amap.det) * (rule.weights * np.asarray(f(x), dtype=float)).sum())
