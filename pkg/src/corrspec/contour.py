"""Rectangular integration contours around the LSD support.

The rectangle has vertical edges at x_l < a and x_r > b and horizontal edges
at +-i v0, traversed counterclockwise.  Nodes come from composite
Gauss-Legendre panels; on the vertical edges the panels are graded
geometrically towards the real axis, where the contour passes closest to the
support edges and (for y < 1) to the pole at the origin.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, ContourError
from .spectral import SupportInfo


@dataclass(frozen=True)
class ContourSpec:
    x_l: float
    x_r: float
    v0: float
    num_nodes: int

    def __post_init__(self):
        if not (self.v0 > 0 and self.x_l < self.x_r):
            raise ConfigurationError(f"invalid contour {self}")

    def encloses(self, lo: float, hi: float) -> bool:
        return self.x_l < lo and self.x_r > hi


@dataclass(frozen=True, eq=False)
class Contour:
    spec: ContourSpec
    z: np.ndarray  # nodes
    w: np.ndarray  # complex weights (dz), so that sum(w f(z)) ~ oint f dz

    def integrate(self, values) -> complex:
        return complex(np.sum(self.w * values))

    def __len__(self):
        return self.z.size


@lru_cache(maxsize=32)
def _gl(n):
    return np.polynomial.legendre.leggauss(n)


def _graded_breaks(delta: float, v0: float) -> np.ndarray:
    """Breakpoints 0 < delta/2 < delta < 2 delta < ... < v0 on [0, v0]."""
    h = min(max(delta, 1e-8), v0) / 2.0
    br = [0.0]
    while h < v0:
        br.append(h)
        h *= 2.0
    br.append(v0)
    # fold a tiny final panel into its neighbour
    if len(br) > 2 and (br[-1] - br[-2]) < 0.25 * (br[-2] - br[-3]):
        br.pop(-2)
    return np.array(br)


def rectangle(x_l: float, x_r: float, v0: float, num_nodes: int = 2048,
              delta_l: float | None = None, delta_r: float | None = None) -> Contour:
    """Counterclockwise rectangle with composite Gauss-Legendre nodes.

    delta_l / delta_r are the distances from the real-axis crossing of each
    vertical edge to the nearest singularity of the integrand.
    """
    if num_nodes < 64:
        raise ConfigurationError("num_nodes must be >= 64")
    spec = ContourSpec(float(x_l), float(x_r), float(v0), int(num_nodes))
    dl = v0 if delta_l is None else float(delta_l)
    dr = v0 if delta_r is None else float(delta_r)
    bl = _graded_breaks(dl, v0)
    brr = _graded_breaks(dr, v0)
    L = x_r - x_l
    nh = max(2, int(np.ceil(L / v0)))
    hx = np.linspace(x_l, x_r, nh + 1)

    segments = []  # (start, end) complex, in traversal order
    for a, b in zip(hx[:-1], hx[1:]):  # bottom, left to right
        segments.append((a - 1j * v0, b - 1j * v0))
    vr = np.concatenate([-brr[::-1], brr[1:]])  # right edge, bottom to top
    for a, b in zip(vr[:-1], vr[1:]):
        segments.append((x_r + 1j * a, x_r + 1j * b))
    for a, b in zip(hx[::-1][:-1], hx[::-1][1:]):  # top, right to left
        segments.append((a + 1j * v0, b + 1j * v0))
    vl = np.concatenate([bl[::-1], -bl[1:]])  # left edge, top to bottom
    for a, b in zip(vl[:-1], vl[1:]):
        segments.append((x_l + 1j * a, x_l + 1j * b))

    q = max(8, int(round(num_nodes / len(segments))))
    u, wu = _gl(q)
    S = np.array([s for s, _ in segments])
    E = np.array([e for _, e in segments])
    z = (0.5 * (E - S))[:, None] * u[None, :] + (0.5 * (E + S))[:, None]
    w = (0.5 * (E - S))[:, None] * wu[None, :]
    return Contour(spec=spec, z=z.reshape(-1), w=w.reshape(-1))


def _left_edge(support: SupportInfo, inflation: float) -> float:
    a, b = support.a, support.b
    cand = a - inflation * (b - a) - 0.05
    if support.atom_at_zero > 0:
        # y > 1: the contour must also enclose the atom at the origin
        return min(cand, -0.05)
    if a > 0:
        # y < 1: stay strictly between the pole at 0 and the left edge
        return max(cand, 0.5 * a)
    return cand


def _deltas(support: SupportInfo, x_l: float, x_r: float, pole_at_zero: bool = True):
    a, b = support.a, support.b
    dl = a - x_l
    if pole_at_zero:
        dl = min(dl, abs(x_l)) if x_l != 0 else dl
    return dl, x_r - b


def build_contour(support: SupportInfo, v0: float = 0.5, num_nodes: int = 2048, inflation: float = 0.1) -> Contour:
    """Rectangle enclosing [a, b] (and the origin when y > 1)."""
    if v0 <= 0:
        raise ConfigurationError("v0 must be positive")
    x_l = _left_edge(support, inflation)
    x_r = support.b + inflation * (support.b - support.a)
    dl, dr = _deltas(support, x_l, x_r)
    return rectangle(x_l, x_r, v0, num_nodes, dl, dr)


def union_support(*supports: SupportInfo) -> SupportInfo:
    return SupportInfo(a=min(s.a for s in supports), b=max(s.b for s in supports),
                       atom_at_zero=max(s.atom_at_zero for s in supports))


def build_nested_contours(support: SupportInfo, v0: float = 0.5, num_nodes: int = 2048,
                          inflation: float = 0.1) -> tuple[Contour, Contour]:
    """(inner, outer) pair of non-overlapping rectangles; inner height 0.4 v0."""
    outer = build_contour(support, v0, num_nodes, inflation)
    o = outer.spec
    a, b = support.a, support.b
    x_l = 0.5 * (o.x_l + a) if support.atom_at_zero == 0 else 0.5 * o.x_l
    x_r = 0.5 * (o.x_r + b)
    dl, dr = _deltas(support, x_l, x_r)
    # the outer contour is itself a nearby singularity of the double integrand
    dl = min(dl, abs(x_l - o.x_l))
    dr = min(dr, abs(o.x_r - x_r))
    inner = rectangle(x_l, x_r, 0.4 * v0, num_nodes, dl, dr)
    check_nested(inner, outer)
    return inner, outer


def check_nested(inner: Contour, outer: Contour) -> None:
    i, o = inner.spec, outer.spec
    if not (o.x_l < i.x_l and i.x_r < o.x_r and i.v0 < o.v0):
        raise ContourError("inner contour must lie strictly inside the outer contour")
