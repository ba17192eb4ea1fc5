"""Potentials, mobilities, their delta-regularisations and the entropy function.

All evaluators are vectorised over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

SIMPSON_TOL = 1e-10


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class PotentialSpec:
    """Double-well potential split into a convex part F1 and a smooth part F2.

    ``kind="quartic"``: F1 = (1 + r^4)/4, F2 = -r^2/2.
    ``kind="logarithmic"``: F1 = theta/2 [(1+r)log(1+r) + (1-r)log(1-r)],
    F2 = (1 - r^2)/2, with theta in (0, 1).
    """

    kind: str = "quartic"
    theta: float = 0.0

    def __post_init__(self):
        if self.kind not in ("quartic", "logarithmic"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "logarithmic" and not 0.0 < self.theta < 1.0:
            raise ValueError("logarithmic potential requires theta in (0, 1)")

    def F1(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "quartic":
            return (1.0 + r**4) / 4.0
        self._check_domain(r)
        return 0.5 * self.theta * ((1 + r) * np.log1p(r) + (1 - r) * np.log1p(-r))

    def dF1(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "quartic":
            return r**3
        self._check_domain(r)
        return self.theta * np.arctanh(r)

    def d2F1(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "quartic":
            return 3.0 * r**2
        self._check_domain(r)
        return self.theta / (1.0 - r**2)

    def F2(self, r):
        r = np.asarray(r, dtype=float)
        return -0.5 * r**2 if self.kind == "quartic" else 0.5 * (1.0 - r**2)

    def dF2(self, r):
        return -np.asarray(r, dtype=float)

    def d2F2(self, r):
        return -np.ones_like(np.asarray(r, dtype=float))

    def F(self, r):
        return self.F1(r) + self.F2(r)

    def _check_domain(self, r):
        if np.any(np.abs(r) >= 1.0):
            raise DomainError("logarithmic potential is only defined for |r| < 1")


def potential_eval(spec: PotentialSpec, r):
    """(F1, F1', F1'', F2, F2', F2'') at ``r``."""
    return spec.F1(r), spec.dF1(r), spec.d2F1(r), spec.F2(r), spec.dF2(r), spec.d2F2(r)


@dataclass(frozen=True)
class MobilitySpec:
    """``kind="constant"`` with value ``c`` or ``kind="degenerate"``, M(r) = (1 - r^2)^k."""

    kind: str = "constant"
    c: float = 1.0
    k: int = 1

    def __post_init__(self):
        if self.kind == "constant":
            if self.c <= 0:
                raise ValueError("constant mobility must be positive")
        elif self.kind == "degenerate":
            if int(self.k) != self.k or self.k < 1:
                raise ValueError("degenerate mobility exponent k must be an integer >= 1")
        else:
            raise ValueError(f"unknown mobility kind {self.kind!r}")

    @property
    def degenerate(self) -> bool:
        return self.kind == "degenerate"

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "constant":
            return np.full_like(r, self.c)
        return (1.0 - r**2) ** self.k


def adaptive_simpson(f, a: float, b: float, tol: float = SIMPSON_TOL, max_depth: int = 50) -> float:
    """Adaptive Simpson quadrature of a scalar function on [a, b]."""

    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        delta = left + right - whole
        if depth <= 0 or abs(delta) <= 15.0 * tol:
            return left + right + delta / 15.0
        return (recurse(a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + recurse(m, b, fm, frm, fb, right, 0.5 * tol, depth - 1))

    if a == b:
        return 0.0
    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    return recurse(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, max_depth)


@dataclass(frozen=True)
class RegularizedMaterial:
    """Potential and mobility with the delta-regularisation applied.

    Inside (-1 + delta, 1 - delta) every evaluator agrees with the
    unregularised function.  Outside, F1 is continued by its second-order
    Taylor polynomial at the nearer of +-(1 - delta) and M is frozen at its
    value there.  ``delta = 0`` switches the regularisation off, which is
    only meaningful for direct evaluation on (-1, 1).
    """

    potential: PotentialSpec
    mobility: MobilitySpec
    delta: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.delta < 1.0:
            raise ValueError("delta must lie in [0, 1)")

    @property
    def edge(self) -> float:
        return 1.0 - self.delta

    def _regularizes(self) -> bool:
        return self.delta > 0.0

    def _split(self, r):
        r = np.asarray(r, dtype=float)
        a = self.edge
        if not self._regularizes():
            return r, np.zeros_like(r), np.ones(r.shape, bool)
        anchor = np.clip(r, -a, a)
        return anchor, r - anchor, np.abs(r) < a

    # F1^delta and derivatives
    def F1(self, r):
        anchor, h, _ = self._split(r)
        p = self.potential
        return p.F1(anchor) + p.dF1(anchor) * h + 0.5 * p.d2F1(anchor) * h**2

    def dF1(self, r):
        anchor, h, _ = self._split(r)
        p = self.potential
        return p.dF1(anchor) + p.d2F1(anchor) * h

    def d2F1(self, r):
        anchor, _, _ = self._split(r)
        return self.potential.d2F1(anchor)

    def F(self, r):
        return self.F1(r) + self.potential.F2(r)

    def d2F(self, r):
        return self.d2F1(r) + self.potential.d2F2(r)

    def M(self, r):
        anchor, _, _ = self._split(r)
        return self.mobility(anchor)

    def entropy(self, r):
        """(Psi^delta(r), Psi^delta'(r)), the solution of Psi'' = 1/M^delta, Psi(0) = Psi'(0) = 0."""
        anchor, h, _ = self._split(r)
        psi, dpsi = self._entropy_unregularized(anchor)
        inv_m = 1.0 / self.mobility(anchor)
        return psi + dpsi * h + 0.5 * inv_m * h**2, dpsi + inv_m * h

    def _entropy_unregularized(self, r):
        r = np.asarray(r, dtype=float)
        mob = self.mobility
        if mob.kind == "constant":
            return 0.5 * r**2 / mob.c, r / mob.c
        if np.any(np.abs(r) >= 1.0):
            raise DomainError("entropy of a degenerate mobility is only finite on (-1, 1)")
        if mob.k == 1:
            psi = 0.5 * ((1 + r) * np.log1p(r) + (1 - r) * np.log1p(-r))
            return psi, np.arctanh(r)
        if mob.k == 2:
            dpsi = 0.5 * r / (1.0 - r**2) + 0.5 * np.arctanh(r)
            return 0.5 * r * np.arctanh(r), dpsi
        return entropy_quadrature(r, mob.k)


def _entropy_scalar(r: float, k: int):
    inv_m = lambda s: (1.0 - s * s) ** (-k)
    dpsi = adaptive_simpson(inv_m, 0.0, r)
    # Psi(r) = int_0^r (r - s)/M(s) ds
    psi = adaptive_simpson(lambda s: (r - s) * inv_m(s), 0.0, r)
    return psi, dpsi


_entropy_scalar_cached = lru_cache(maxsize=65536)(_entropy_scalar)


def entropy_quadrature(r, k: int):
    """(Psi, Psi') for M = (1 - r^2)^k by adaptive Simpson quadrature."""
    r = np.asarray(r, dtype=float)
    flat = r.ravel()
    out = np.array([_entropy_scalar_cached(float(x), int(k)) for x in flat]).reshape(flat.size, 2)
    return out[:, 0].reshape(r.shape), out[:, 1].reshape(r.shape)


def regularized_potential_eval(mat: RegularizedMaterial, r):
    return mat.F1(r), mat.dF1(r), mat.d2F1(r)


def mobility_eval(mat: RegularizedMaterial, r):
    return mat.M(r)


def entropy_eval(mat: RegularizedMaterial, r):
    return mat.entropy(r)
