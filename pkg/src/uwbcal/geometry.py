"""Planar geometric primitives and the error metrics used throughout.

All lengths are in meters and all angles in radians. Positions estimated by
the calibration pipeline live in the *anchor frame*: anchor 0 at the origin
and (on the first calibration only) anchor 1 on the positive x-axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DegenerateGeometry, LengthMismatch

# Relative slack on y^2 when two ranging circles fail to intersect: small
# inconsistencies are projected onto the x-axis, anything worse is an error.
CIRCLE_INTERSECT_TOL = 1e-6


@dataclass(frozen=True)
class Point2:
    """A point (or displacement) in the plane. Coordinates must be finite."""

    x: float
    y: float

    def __post_init__(self):
        # tolerate numpy scalars at the boundary, store plain floats
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite coordinates ({self.x}, {self.y})")

    def __iter__(self):
        yield self.x
        yield self.y

    def __add__(self, other: "Point2") -> "Point2":
        return Point2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: "Point2") -> "Point2":
        return Point2(self.x - other.x, self.y - other.y)

    def rotated(self, angle: float) -> "Point2":
        """Rotate about the origin by ``angle`` radians (counter-clockwise)."""
        c, s = math.cos(angle), math.sin(angle)
        return Point2(c * self.x - s * self.y, s * self.x + c * self.y)


@dataclass(frozen=True)
class ErrorMetrics:
    """Per-node translation errors plus the signed frame rotation error."""

    translation_errors: tuple[float, ...]
    rotation_error: float

    def __post_init__(self):
        if any(e < 0 for e in self.translation_errors):
            raise ValueError("translation errors must be non-negative")
        if not -math.pi < self.rotation_error <= math.pi:
            raise ValueError("rotation error outside (-pi, pi]")


def distance(p: Point2, q: Point2) -> float:
    """Euclidean distance between two points."""
    return math.hypot(p.x - q.x, p.y - q.y)


def wrap_angle(angle: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def bilaterate_positive_y(d01: float, d0i: float, d1i: float,
                          tol: float = CIRCLE_INTERSECT_TOL) -> Point2:
    """Intersect circles centered at (0, 0) and (d01, 0), keeping y >= 0.

    ``d01`` is the baseline between the two reference nodes, ``d0i``/``d1i``
    the measured distances from each of them to the node being placed. Of the
    two intersection points the one in the upper half-plane is returned; a
    slightly negative discriminant (relative to ``tol * d0i**2``) is clamped
    to the x-axis, a grossly negative one raises :class:`DegenerateGeometry`.
    """
    if d01 <= 0.0 or d0i <= 0.0 or d1i <= 0.0:
        raise DegenerateGeometry(
            f"distances must be positive, got ({d01}, {d0i}, {d1i})")
    x = (d0i * d0i - d1i * d1i + d01 * d01) / (2.0 * d01)
    y_sq = d0i * d0i - x * x
    if y_sq < 0.0:
        if y_sq < -tol * d0i * d0i:
            raise DegenerateGeometry(
                f"circles d0i={d0i}, d1i={d1i} on baseline {d01} do not "
                f"intersect (discriminant {y_sq:.3e})")
        y_sq = 0.0
    return Point2(x, math.sqrt(y_sq))


def rotation_error(estimated_a1: Point2) -> float:
    """Signed angle between the x-axis and the ray to the estimated anchor 1."""
    if estimated_a1.x == 0.0 and estimated_a1.y == 0.0:
        raise DegenerateGeometry("anchor 1 estimate coincides with the origin")
    return wrap_angle(math.atan2(estimated_a1.y, estimated_a1.x))


def translation_errors(estimated: list[Point2], truth: list[Point2],
                       truth_origin: Point2) -> list[float]:
    """Per-node position errors after translating the estimated frame.

    The estimated coordinates are expressed in the anchor frame; shifting
    them by ``truth_origin`` (the true world position of anchor 0) aligns
    the two frames by translation only. No rotation correction is applied;
    frame rotation is reported separately through :func:`rotation_error`.
    """
    if len(estimated) != len(truth):
        raise LengthMismatch(
            f"{len(estimated)} estimated vs {len(truth)} true positions")
    if not estimated:
        raise LengthMismatch("empty position lists")
    return [distance(e + truth_origin, t) for e, t in zip(estimated, truth)]
