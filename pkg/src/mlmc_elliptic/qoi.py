"""Output functionals of the discrete solution."""

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import fem
from .errors import DomainError, InputError
from .mesh import locate_point


class QoIKind(str, enum.Enum):
    H1_SEMINORM = "h1_seminorm"
    L2_NORM = "l2_norm"
    POINT_PRESSURE = "point_pressure"
    POINT_FLUX_MAGNITUDE = "point_flux_magnitude"

    @property
    def is_point(self):
        return self in (QoIKind.POINT_PRESSURE, QoIKind.POINT_FLUX_MAGNITUDE)


DEFAULT_POINTS = {
    QoIKind.POINT_PRESSURE: (0.5, 0.5),
    QoIKind.POINT_FLUX_MAGNITUDE: (0.25, 0.5),
}


@dataclass(frozen=True)
class QoISpec:
    kind: QoIKind
    point: tuple = None
    expected_rates: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "kind", QoIKind(self.kind))
        if self.kind.is_point:
            point = DEFAULT_POINTS[self.kind] if self.point is None else self.point
            point = tuple(float(c) for c in point)
            if len(point) != 2:
                raise InputError(f"point must have two coordinates, got {point}")
            object.__setattr__(self, "point", point)
        elif self.point is not None:
            raise InputError(f"{self.kind.value} does not take a point")

    def validate_for(self, h_finest):
        """Point QoIs need ``x*`` at least ``h_finest`` away from the boundary."""
        if not self.kind.is_point:
            return
        x, y = self.point
        dist = min(x, y, 1.0 - x, 1.0 - y)
        if dist < h_finest:
            raise DomainError(
                f"point {self.point} is {dist:g} from the boundary, closer than h={h_finest:g}"
            )


@lru_cache(maxsize=256)
def _located(mesh, point):
    return locate_point(mesh, np.array(point))


def evaluate(spec, sol, coefficients=None):
    """Evaluate the QoI on a discrete solution.

    ``coefficients`` (per-triangle tensors) is needed for the flux magnitude
    ``|A_t grad u_h|_t|`` on the triangle containing the point.
    """
    kind = spec.kind
    if kind is QoIKind.H1_SEMINORM:
        return fem.h1_seminorm(sol)
    if kind is QoIKind.L2_NORM:
        return fem.l2_norm(sol)
    tri, lam = _located(sol.mesh, spec.point)
    if kind is QoIKind.POINT_PRESSURE:
        return float(np.dot(lam, sol.values[sol.mesh.triangles[tri]]))
    if coefficients is None:
        raise InputError("flux magnitude needs the coefficient tensors")
    return float(np.linalg.norm(np.asarray(coefficients)[tri] @ sol.gradients[tri]))


@dataclass(frozen=True)
class RatePrediction:
    """Predicted ``(low, high)`` brackets for the bias and variance rates."""

    alpha: tuple
    beta: tuple


def predicted_rates(kind, s, t, d=2):
    """Rate brackets for a QoI given the regularity ``s`` and Hoelder exponent ``t``.

    The low ends come from the Sobolev-embedding route, the high ends from the
    Schauder route; norm functionals have a single value.
    """
    kind = QoIKind(kind)
    if kind is QoIKind.H1_SEMINORM:
        return RatePrediction((s, s), (2 * s, 2 * s))
    if kind is QoIKind.L2_NORM:
        return RatePrediction((2 * s, 2 * s), (4 * s, 4 * s))
    if kind is QoIKind.POINT_PRESSURE:
        lo, hi = 1 + s - d / 2, 1 + t
    else:
        lo, hi = s - d / 2, t
    return RatePrediction((lo, hi), (2 * lo, 2 * hi))
