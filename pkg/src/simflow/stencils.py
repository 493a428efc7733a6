"""Finite difference stencil generation.

Weights are computed exactly as rationals from the polynomial moment
conditions and only converted to floats at the end, so generated stencils
are reproducible and exact on the polynomials they claim to handle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction


class StencilError(Exception):
    pass


def fd_weights(m, offsets):
    """Exact weights w_j such that sum_j w_j f(x + j h) ~ h^m f^(m)(x).

    Solves sum_j w_j * j^k / k! = delta(k, m) for k = 0..len(offsets)-1
    by rational Gaussian elimination.  Returns a list of Fractions.
    """
    offsets = [int(o) for o in offsets]
    n = len(offsets)
    if len(set(offsets)) != n:
        raise StencilError("duplicate offsets make the moment system singular")
    if n <= m:
        raise StencilError(f"need more than {m} offsets for an order-{m} derivative")
    # rows: moment conditions, columns: weights
    rows = [[Fraction(o) ** k for o in offsets] for k in range(n)]
    rhs = [Fraction(math.factorial(k)) if k == m else Fraction(0) for k in range(n)]
    return _solve_rational(rows, rhs)


def _solve_rational(a, b):
    n = len(b)
    a = [row[:] for row in a]
    b = b[:]
    for col in range(n):
        pivot = next((r for r in range(col, n) if a[r][col] != 0), None)
        if pivot is None:
            raise StencilError("singular moment system")
        a[col], a[pivot] = a[pivot], a[col]
        b[col], b[pivot] = b[pivot], b[col]
        inv = 1 / a[col][col]
        a[col] = [x * inv for x in a[col]]
        b[col] *= inv
        for r in range(n):
            if r != col and a[r][col] != 0:
                factor = a[r][col]
                a[r] = [x - factor * y for x, y in zip(a[r], a[col])]
                b[r] -= factor * b[col]
    return b


@dataclass(frozen=True)
class Stencil:
    """One-axis derivative stencil: order m, offsets, float weights.

    Application divides by dx**order (grid-spacing exponent -m).
    """

    order: int
    axis: str
    offsets: tuple
    weights: tuple

    @property
    def radius(self):
        return max(abs(o) for o in self.offsets)


def centered_stencil(m, width, axis):
    """Centered stencil of the given width (odd) for the m-th derivative."""
    if width % 2 != 1:
        raise StencilError("centered stencils need an odd point count")
    r = width // 2
    offsets = tuple(range(-r, r + 1))
    weights = tuple(float(w) for w in fd_weights(m, offsets))
    return Stencil(m, axis, offsets, weights)


def ko_difference_weights(r):
    """Integer weights of (D+D-)^r, i.e. the 2r-th centered difference.

    r = 3 gives [1, -6, 15, -20, 15, -6, 1].
    """
    return [(-1) ** k * math.comb(2 * r, k) for k in range(2 * r + 1)]


def ko_dissipation(r, sigma, dx, axis):
    """Kreiss-Oliger dissipation operator for one axis.

    Returns a Stencil-like operator Q with weights chosen so that Q is
    negative semi-definite on periodic grids (strictly dissipative on
    non-polynomial data) and annihilates polynomials of degree < 2r.
    Magnitude: sigma / 2^(2r) * dx^(2r-1) times the 2r-th difference
    (which itself carries dx^-2r), i.e. an overall 1/dx scaling.
    """
    if sigma < 0:
        raise StencilError("dissipation strength sigma must be >= 0")
    base = ko_difference_weights(r)
    sign = -1.0 if r % 2 == 0 else 1.0  # (D+D-)^r is definite with sign (-1)^r
    scale = sign * sigma / (2.0 ** (2 * r) * dx)
    offsets = tuple(range(-r, r + 1))
    weights = tuple(scale * w for w in base)
    return Stencil(0, axis, offsets, weights)
