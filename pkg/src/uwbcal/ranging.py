"""Two-way-ranging distance computation and the empirical sensor model.

Distances come from round-trip signal timings (single- or double-sided
two-way ranging). Real modules read systematically long: a line fitted to
measured-vs-true sweeps captures that bias, and its residual spread gives
the noise level used when simulating measurements.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import CsvFormatError, DegenerateFit, InsufficientData, InvalidTiming

SPEED_OF_LIGHT = 299_792_458.0  # m/s, vacuum value; air correction is < 0.03%

# Line-of-sight sweep recorded with DWM1001 modules, 0.5 m to 22 m, with the
# responder-delay offset already removed. Ships with the package so models
# can be fitted without external files.
REFERENCE_SWEEP = "dwm1001_los_sweep.csv"


@dataclass(frozen=True)
class TwrTimings:
    """Round-trip timings in seconds; the second pair is only for DS-TWR.

    ``t_round`` is the initiator's poll-to-response elapsed time and
    ``t_reply`` the responder's fixed processing delay. Zero flight time
    (``t_round == t_reply``) is allowed; a round shorter than the reply is not.
    """

    t_round: float
    t_reply: float
    t_round2: float | None = None
    t_reply2: float | None = None

    def __post_init__(self):
        self._check(self.t_round, self.t_reply)
        if (self.t_round2 is None) != (self.t_reply2 is None):
            raise InvalidTiming("second exchange needs both t_round2 and t_reply2")
        if self.t_round2 is not None:
            self._check(self.t_round2, self.t_reply2)

    @staticmethod
    def _check(t_round, t_reply):
        if not (math.isfinite(t_round) and math.isfinite(t_reply)):
            raise InvalidTiming("non-finite timing")
        if t_reply < 0.0:
            raise InvalidTiming(f"negative reply time {t_reply}")
        if t_round < t_reply:
            raise InvalidTiming(
                f"t_round={t_round} earlier than t_reply={t_reply}")


@dataclass(frozen=True)
class RangingModel:
    """Linear bias fit (measured = slope*true + intercept) plus noise level."""

    slope: float
    intercept: float
    noise_std: float
    n_samples: int

    def __post_init__(self):
        if self.slope <= 0.0:
            raise ValueError(f"slope must be positive, got {self.slope}")
        if self.noise_std < 0.0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.n_samples < 2:
            raise ValueError(f"n_samples must be >= 2, got {self.n_samples}")

    @classmethod
    def identity(cls) -> "RangingModel":
        """Bias-free, noise-free model (measured == true)."""
        return cls(slope=1.0, intercept=0.0, noise_std=0.0, n_samples=2)

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept_m": self.intercept,
            "noise_std_m": self.noise_std,
            "n_samples": self.n_samples,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RangingModel":
        return cls(slope=d["slope"], intercept=d["intercept_m"],
                   noise_std=d["noise_std_m"], n_samples=d["n_samples"])


@dataclass(frozen=True)
class RangingSample:
    """One calibration measurement: ground-truth distance and what was read."""

    true_distance: float
    measured_distance: float

    def __post_init__(self):
        if self.true_distance <= 0.0 or self.measured_distance <= 0.0:
            raise ValueError(
                f"distances must be positive, got ({self.true_distance}, "
                f"{self.measured_distance})")


def ss_twr_distance(t: TwrTimings) -> float:
    """Single-sided TWR: half the net round trip times the speed of light."""
    return SPEED_OF_LIGHT * (t.t_round - t.t_reply) / 2.0


def ds_twr_distance(t: TwrTimings) -> float:
    """Double-sided TWR using the standard asymmetric expression.

    d = c * (Tround1*Tround2 - Treply1*Treply2)
          / (Tround1 + Tround2 + Treply1 + Treply2)

    The cross-product form cancels first-order clock-offset errors, removing
    the need for responder-delay calibration.
    """
    if t.t_round2 is None:
        raise InvalidTiming("DS-TWR needs a second round/reply pair")
    num = t.t_round * t.t_round2 - t.t_reply * t.t_reply2
    den = t.t_round + t.t_round2 + t.t_reply + t.t_reply2
    if den <= 0.0:
        raise InvalidTiming(f"non-positive timing sum {den}")
    if num < 0.0:
        if num < -1e-9 * max(t.t_round * t.t_round2, 1e-300):
            raise InvalidTiming(f"negative timing product {num}")
        num = 0.0
    return SPEED_OF_LIGHT * num / den


def fit_model(samples: list[RangingSample]) -> RangingModel:
    """Ordinary least-squares line through (true, measured) pairs.

    noise_std is the residual standard deviation with denominator n - 2
    (two fitted parameters).
    """
    if len(samples) < 2:
        raise InsufficientData(f"need >= 2 samples, got {len(samples)}")
    x = np.array([s.true_distance for s in samples])
    y = np.array([s.measured_distance for s in samples])
    sxx = float(((x - x.mean()) ** 2).sum())
    if sxx == 0.0:
        raise DegenerateFit("all samples share the same true distance")
    slope = float(((x - x.mean()) * (y - y.mean())).sum()) / sxx
    intercept = float(y.mean()) - slope * float(x.mean())
    resid = y - (slope * x + intercept)
    if len(samples) > 2:
        noise_std = math.sqrt(float((resid ** 2).sum()) / (len(samples) - 2))
    else:
        noise_std = 0.0
    return RangingModel(slope=slope, intercept=intercept,
                        noise_std=noise_std, n_samples=len(samples))


def simulate_measurement(true_d: float, model: RangingModel,
                         rng: np.random.Generator) -> float:
    """Draw one simulated range: biased line value plus Gaussian noise.

    Always consumes exactly one draw from ``rng`` so seeded draw order does
    not depend on the noise level. The result may be <= 0 under extreme
    noise; callers decide how to treat that.
    """
    if true_d <= 0.0:
        raise ValueError(f"true distance must be positive, got {true_d}")
    noise = model.noise_std * rng.standard_normal()
    return model.slope * true_d + model.intercept + noise


def correct_measurement(measured_d: float, model: RangingModel) -> float:
    """Invert the fitted bias line: (measured - intercept) / slope."""
    return (measured_d - model.intercept) / model.slope


def load_samples(path) -> list[RangingSample]:
    """Read a `true_m,measured_m` CSV of ranging samples."""
    samples = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["true_m", "measured_m"]:
            raise CsvFormatError(
                f"expected header 'true_m,measured_m', got {header}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise CsvFormatError(f"expected 2 columns, got {len(row)}",
                                     line=lineno)
            try:
                sample = RangingSample(float(row[0]), float(row[1]))
            except ValueError as exc:
                raise CsvFormatError(str(exc), line=lineno) from exc
            samples.append(sample)
    return samples


def save_samples(samples: list[RangingSample], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["true_m", "measured_m"])
        for s in samples:
            writer.writerow([repr(s.true_distance), repr(s.measured_distance)])


def load_reference_samples() -> list[RangingSample]:
    """The packaged DWM1001 line-of-sight sweep (40 rows, 0.5 m to 22 m)."""
    ref = resources.files("uwbcal.data").joinpath(REFERENCE_SWEEP)
    with resources.as_file(ref) as path:
        return load_samples(path)


def reference_model() -> RangingModel:
    """Model fitted to the packaged sweep; the default simulation sensor."""
    return fit_model(load_reference_samples())
