import math

import pytest

from uwbcal.autocalib import DistanceStatsMatrix
from uwbcal.geometry import Point2, distance

# Surveyed desk-scale deployment used as the golden reconstruction case:
# five anchors and one tag, with anchor 1 due east of anchor 0 so the
# world and anchor frames coincide up to the anchor-0 translation.
GOLDEN_WORLD = [Point2(2, 3), Point2(11, 3), Point2(18, 6),
                Point2(15, 20), Point2(4, 22)]
GOLDEN_FRAME = [Point2(0, 0), Point2(9, 0), Point2(16, 3),
                Point2(13, 17), Point2(2, 19)]
GOLDEN_TAG_WORLD = Point2(9, 11)
GOLDEN_TAG_FRAME = Point2(7, 8)
GOLDEN_TAG_RANGES = [math.sqrt(v) for v in (113, 68, 106, 117, 146)]


def exact_matrix(frame_positions, transform=None) -> DistanceStatsMatrix:
    """Distance matrix holding exact pairwise distances (optionally mapped
    through a measurement transform), both directions, count 1, std 0."""
    n = len(frame_positions)
    m = DistanceStatsMatrix(n)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            d = distance(frame_positions[i], frame_positions[j])
            m.set_pair(i, j, d if transform is None else transform(d), 0.0, 1)
    return m


@pytest.fixture(scope="session")
def golden_frame():
    return list(GOLDEN_FRAME)


@pytest.fixture(scope="session")
def golden_world():
    return list(GOLDEN_WORLD)
