"""Mobility-weighted inverse Laplacian and the weak norm it induces."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .assembly import FormSet, NodalField, element_average, weighted_stiffness_from_elements
from .linalg import DeflationSpace, cg_solve


class DegenerateOperatorError(ValueError):
    """The weighted operator is not uniformly elliptic for the given ``xi``."""


class WeakNormContext:
    """Operator ``v = G_xi z`` solving ``K(M(xi)) v = M z`` with zero mean.

    ``mobility`` is applied pointwise to ``xi`` and averaged per element.
    Pass a regularised mobility explicitly if a positivity floor is wanted;
    non-positive element mobilities are refused.
    """

    def __init__(self, forms: FormSet, xi, mobility: Callable, tol: float = 1e-11, maxit: int = 5000):
        xi = np.asarray(xi, dtype=float)
        if xi.shape != (forms.mesh.n_vertices,):
            raise ValueError("xi length does not match mesh")
        self.forms = forms
        self.xi = xi
        self.tol = tol
        self.maxit = maxit
        self.element_mobility = element_average(forms.mesh, mobility(xi))
        m_min = float(np.min(self.element_mobility))
        if not m_min > 0.0:
            raise DegenerateOperatorError(f"element mobility {m_min:.3e} is not positive")
        self.mobility_bounds = (m_min, float(np.max(self.element_mobility)))
        self.K = weighted_stiffness_from_elements(forms.mesh, self.element_mobility)
        self._deflation = DeflationSpace.constants(forms.mesh.n_vertices)

    def green_apply(self, z) -> NodalField:
        z = np.asarray(z, dtype=float)
        rhs = self.forms.M @ z
        mean = float(np.sum(rhs))
        if abs(mean) > 1e-10 * np.linalg.norm(z):
            raise ValueError(f"z must have zero mean (integral {mean:.3e})")
        # constants span the kernel of K; project them out of the right-hand side
        v = cg_solve(self.K, rhs, tol=self.tol, maxit=self.maxit, deflation=self._deflation)
        lumped = self.forms.lumped
        v = v - (lumped @ v) / lumped.sum()
        return NodalField(v, self.forms.time)

    def norm(self, z) -> float:
        v = self.green_apply(z)
        return float(np.sqrt(max(np.asarray(z, dtype=float) @ (self.forms.M @ v), 0.0)))


def green_apply(ctx: WeakNormContext, z) -> NodalField:
    return ctx.green_apply(z)


def weak_norm(ctx: WeakNormContext, z) -> float:
    return ctx.norm(z)
