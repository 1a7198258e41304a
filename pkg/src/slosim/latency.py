"""Decode-batch latency calibration and the prefill cost model.

The decode cost is a piecewise-linear interpolation over measured
``(batch_size, latency_ms)`` points: exact at every calibration point,
constant below the smallest batch size, and extended with the slope of the
last segment above the largest one.  Prefill is an affine function of the
prompt length and runs as a standalone pipeline-blocking step.
"""
from __future__ import annotations

import csv
from bisect import bisect_right
from dataclasses import dataclass

from .errors import ConfigurationError, ContractViolation

# Synthetic reference curve for a small-GPU quantized ~6B model.  Near-flat
# through batch 5, a steep wall through batch 9 (anchored at 128.59 ms), then
# a slow tail.  These are shipped defaults, not measurements; replace them
# with `slosim calibrate` output for real hardware.
REFERENCE_POINTS: tuple[tuple[int, float], ...] = (
    (1, 35.0),
    (2, 40.0),
    (3, 44.0),
    (4, 47.0),
    (5, 49.5),
    (6, 65.0),
    (7, 80.0),
    (8, 105.0),
    (9, 128.59),
    (16, 150.0),
    (32, 185.0),
)

DEFAULT_PREFILL_BASE_MS = 10.0
DEFAULT_PREFILL_PER_TOKEN_MS = 0.3


@dataclass(frozen=True)
class LatencyCalibration:
    """Immutable map from decode batch size to per-iteration latency (ms).

    ``points`` must be sorted by strictly increasing batch size with strictly
    positive, non-decreasing latencies.  Safe to share across threads.
    """

    points: tuple[tuple[int, float], ...]
    prefill_base: float = 0.0  # ms
    prefill_per_token: float = 0.0  # ms per prompt token

    def __post_init__(self):
        if not self.points:
            raise ConfigurationError("latency calibration needs at least one point")
        prev_b = 0
        prev_lat = 0.0
        for b, lat in self.points:
            if int(b) != b or b < 1:
                raise ConfigurationError(f"batch size must be a positive integer, got {b!r}")
            if b <= prev_b:
                raise ConfigurationError("batch sizes must be strictly increasing")
            if lat <= 0.0:
                raise ConfigurationError(f"latency must be positive, got {lat!r} at batch {b}")
            if lat < prev_lat:
                raise ConfigurationError(
                    f"latency must be non-decreasing in batch size (batch {b}: "
                    f"{lat} < {prev_lat}); run `slosim calibrate` to repair"
                )
            prev_b, prev_lat = b, lat
        if self.prefill_base < 0 or self.prefill_per_token < 0:
            raise ConfigurationError("prefill parameters must be non-negative")
        # cache the split columns; decode_latency sits on the hot path
        object.__setattr__(self, "_sizes", tuple(b for b, _ in self.points))
        object.__setattr__(self, "_lats", tuple(lat for _, lat in self.points))

    @property
    def batch_sizes(self) -> tuple[int, ...]:
        return self._sizes

    def decode_latency(self, b: int) -> float:
        """Latency in ms of one decode iteration over a batch of ``b`` tasks."""
        if b < 1:
            raise ContractViolation(f"decode batch size must be >= 1, got {b!r}")
        sizes = self._sizes
        lats = self._lats
        if b <= sizes[0]:
            # constant extrapolation below the smallest calibrated batch
            return lats[0]
        if b >= sizes[-1]:
            if b == sizes[-1] or len(sizes) == 1:
                return lats[-1]
            # linear extrapolation with the slope of the last segment
            slope = (lats[-1] - lats[-2]) / (sizes[-1] - sizes[-2])
            return lats[-1] + slope * (b - sizes[-1])
        i = bisect_right(sizes, b)
        lo_b, lo_l = self.points[i - 1]
        hi_b, hi_l = self.points[i]
        if b == lo_b:
            return lo_l
        frac = (b - lo_b) / (hi_b - lo_b)
        return lo_l + frac * (hi_l - lo_l)

    def prefill_latency(self, prompt_tokens: int) -> float:
        """Latency in ms of the prefill pass over ``prompt_tokens`` tokens."""
        return self.prefill_base + self.prefill_per_token * prompt_tokens

    def max_throughput(self, b: int) -> float:
        """Maximum sustainable rate (tokens/s) when decoding batches of ``b``."""
        return b / (self.decode_latency(b) / 1000.0)


def default_calibration(
    prefill_base: float = DEFAULT_PREFILL_BASE_MS,
    prefill_per_token: float = DEFAULT_PREFILL_PER_TOKEN_MS,
) -> LatencyCalibration:
    """The synthetic reference calibration shipped with the repo."""
    return LatencyCalibration(REFERENCE_POINTS, prefill_base, prefill_per_token)


CSV_HEADER = ("batch", "latency_ms")


def load_calibration_csv(
    path,
    prefill_base: float = 0.0,
    prefill_per_token: float = 0.0,
) -> LatencyCalibration:
    """Load `batch,latency_ms` points from a CSV file (strict validation)."""
    points = read_calibration_rows(path)
    return LatencyCalibration(tuple(points), prefill_base, prefill_per_token)


def read_calibration_rows(path) -> list[tuple[int, float]]:
    """Parse calibration CSV rows without monotonicity validation."""
    points = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != list(CSV_HEADER):
            raise ConfigurationError(
                f"{path}: expected header {','.join(CSV_HEADER)!r}, got {header!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                b = int(row[0])
                lat = float(row[1])
            except (ValueError, IndexError):
                raise ConfigurationError(f"{path}: unparseable calibration row {lineno}: {row!r}")
            points.append((b, lat))
    return points


def save_calibration_csv(path, points) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for b, lat in points:
            writer.writerow([b, repr(float(lat))])


def repair_monotone(points) -> tuple[list[tuple[int, float]], list[str]]:
    """Sort points and enforce non-decreasing latency via pool-adjacent-violators.

    Duplicate batch sizes are averaged first.  Returns the repaired points and
    a list of human-readable warnings (empty when the input was already clean).
    """
    warnings: list[str] = []
    by_batch: dict[int, list[float]] = {}
    for b, lat in points:
        by_batch.setdefault(int(b), []).append(float(lat))
    merged = []
    for b in sorted(by_batch):
        lats = by_batch[b]
        if len(lats) > 1:
            warnings.append(f"batch {b}: averaged {len(lats)} duplicate rows")
        merged.append((b, sum(lats) / len(lats)))

    # Each block: [mean, weight, batches]
    blocks: list[list] = []
    for b, lat in merged:
        blocks.append([lat, 1, [b]])
        while len(blocks) > 1 and blocks[-2][0] > blocks[-1][0]:
            hi = blocks.pop()
            lo = blocks.pop()
            w = lo[1] + hi[1]
            mean = (lo[0] * lo[1] + hi[0] * hi[1]) / w
            pooled = lo[2] + hi[2]
            warnings.append(
                f"non-monotone latency at batches {pooled}: pooled to {mean:.6g} ms"
            )
            blocks.append([mean, w, pooled])
    repaired = []
    for mean, _w, batches in blocks:
        for b in batches:
            repaired.append((b, mean))
    repaired.sort()
    return repaired, warnings
