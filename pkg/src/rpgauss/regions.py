"""Integration regions on the torus: balls, half-spaces and set algebra.

Membership is decided by site centers; ties |x| = r are excluded, so masks
are deterministic and symmetric under the hyperoctahedral group.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

from .errors import SupportError
from .lattice import LatticeSpec

__all__ = ["Ball", "HalfSpace", "Union", "Intersection", "Difference", "region_volume"]


class Region:
    bounded = False

    def contains(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def mask(self, spec: LatticeSpec) -> np.ndarray:
        """Boolean site mask, shape (N,)*D.  Bounded regions must fit the torus."""
        self.validate_on(spec)
        m = self.contains(spec.position_grid())
        return m.reshape(spec.shape)

    def validate_on(self, spec: LatticeSpec) -> None:
        if not self.bounded:
            raise SupportError(
                "integration region must be bounded (intersect half-spaces with a ball)"
            )
        for b in self._balls():
            c = np.asarray(b.center)
            if len(c) != spec.D:
                raise SupportError(f"region is {len(c)}-dimensional, lattice is {spec.D}")
            if np.any(np.abs(c) + b.radius >= spec.L / 2):
                raise SupportError(
                    f"ball (center {b.center}, r={b.radius}) exceeds the torus "
                    f"[-L/2, L/2)^D with L={spec.L}"
                )

    def _balls(self):
        return []

    def __and__(self, other):
        return Intersection(self, other)

    def __or__(self, other):
        return Union(self, other)

    def __sub__(self, other):
        return Difference(self, other)


@dataclass(frozen=True)
class Ball(Region):
    """Open ball B(center, radius); boundary sites excluded."""

    center: tuple
    radius: float

    bounded = True

    def contains(self, x):
        r2 = np.sum((x - np.asarray(self.center)) ** 2, axis=-1)
        return r2 < self.radius**2

    def _balls(self):
        return [self]


@dataclass(frozen=True)
class HalfSpace(Region):
    """{x : x_axis > offset} for sign=+1, {x : x_axis < offset} for sign=-1."""

    axis: int
    offset: float
    sign: int = 1

    bounded = False

    def contains(self, x):
        if self.sign > 0:
            return x[..., self.axis] > self.offset
        return x[..., self.axis] < self.offset


class _Combinator(Region):
    def __init__(self, *parts):
        self.parts = parts

    def _balls(self):
        return [b for p in self.parts for b in p._balls()]


class Union(_Combinator):
    @property
    def bounded(self):
        return all(p.bounded for p in self.parts)

    def contains(self, x):
        return reduce(np.logical_or, (p.contains(x) for p in self.parts))


class Intersection(_Combinator):
    @property
    def bounded(self):
        return any(p.bounded for p in self.parts)

    def contains(self, x):
        return reduce(np.logical_and, (p.contains(x) for p in self.parts))


class Difference(_Combinator):
    """parts[0] minus the union of the rest."""

    @property
    def bounded(self):
        return self.parts[0].bounded

    def contains(self, x):
        out = self.parts[0].contains(x)
        for p in self.parts[1:]:
            out = np.logical_and(out, np.logical_not(p.contains(x)))
        return out


def region_volume(region: Region, spec: LatticeSpec) -> float:
    """Lattice volume h^D * #sites of the region."""
    return float(spec.h**spec.D * np.count_nonzero(region.mask(spec)))
