"""Potentials with a convex + smooth split, F = F1 + F2.

The steppers rely on three structural properties: F1 is convex, F2 has a
Lipschitz derivative, and F = F1 + F2 is bounded below.  The double well
theta*(phi^2-1)^2 satisfies all three with the split F1 = theta*(phi^4+1),
F2 = -2*theta*phi^2.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class PotentialSplit:
    """A scalar potential F = F1 + F2 with evaluation of values and derivatives.

    f1 and f2 map an array of nodal values to a (value, derivative) pair,
    elementwise.  f1 must be convex and f2's derivative Lipschitz
    (constant lipschitz_f2_prime, None if unknown); F is bounded below by
    lower_bound.  f1_dd / f2_dd return second derivatives and are needed
    by the Newton-based steppers.
    """

    f1: Callable
    f2: Callable
    lower_bound: float
    lipschitz_f2_prime: Optional[float]
    f1_dd: Optional[Callable] = None
    f2_dd: Optional[Callable] = None

    def eval(self, phi):
        """Return (F(phi), F'(phi)), elementwise over an array or scalar."""
        phi = np.asarray(phi, dtype=float)
        if not np.all(np.isfinite(phi)):
            raise ValueError("potential evaluated at non-finite input")
        v1, d1 = self.f1(phi)
        v2, d2 = self.f2(phi)
        return v1 + v2, d1 + d2

    def second_derivative(self, phi):
        """Return F''(phi). Requires f1_dd and f2_dd."""
        if self.f1_dd is None or self.f2_dd is None:
            raise ValueError("potential split carries no second derivatives")
        phi = np.asarray(phi, dtype=float)
        return self.f1_dd(phi) + self.f2_dd(phi)


def double_well(theta):
    """The double well F(phi) = theta*(phi^2-1)^2, split convex/concave.

    F1(phi) = theta*(phi^4+1) is convex, F2(phi) = -2*theta*phi^2 is
    concave with F2' Lipschitz of constant 4*theta, and F >= 0.
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    th = float(theta)

    def f1(phi):
        return th * (phi**4 + 1.0), 4.0 * th * phi**3

    def f2(phi):
        return -2.0 * th * phi**2, -4.0 * th * phi

    return PotentialSplit(
        f1=f1,
        f2=f2,
        lower_bound=0.0,
        lipschitz_f2_prime=4.0 * th,
        f1_dd=lambda phi: 12.0 * th * phi**2,
        f2_dd=lambda phi: np.full_like(np.asarray(phi, dtype=float), -4.0 * th),
    )
