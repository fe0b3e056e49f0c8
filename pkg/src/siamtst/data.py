"""Synthetic sector generation, CSV ingestion, splitting, and windowing.

The synthetic generator stands in for hourly per-sector KPI series:
base level, daily cycle, weekly modulation, slow trend, level-scaled
noise, and sparse positive spikes (the handover-count feature spikes
hardest). Everything is reproducible from a seed, including byte-exact
CSV export.

CSV schema (exact): header ``time_period,sector_id,<feature...>``,
ISO-8601 hourly timestamps, decimal point, UTF-8, LF line endings.
Missing cells are empty strings; missing hours in the grid count as
missing values for every feature.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

FEATURES = ("mcdr_denom", "msdr_denom", "thp_nom_tt_kpi", "thp_denom_tt_kpi", "ho_denom")
SPIKY_FEATURES = ("ho_denom",)

EPOCH = datetime(2024, 1, 1, 0, 0, 0)
HOUR = timedelta(hours=1)
MAX_MISSING = 16
MIN_HOURS = 24 * 14


class CsvFormatError(ValueError):
    """Malformed ingestion input; carries the offending line number."""


@dataclass
class SectorSeries:
    """One sector's multivariate hourly series."""

    sector_id: str
    features: tuple
    values: np.ndarray        # [num_features, num_hours]
    start: datetime = EPOCH

    @property
    def n_features(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]


@dataclass
class SyntheticProfile:
    """Parameter ranges the per-sector generator draws from."""

    base_range: tuple = (80.0, 400.0)
    daily_amp_range: tuple = (0.25, 0.55)      # relative to base
    daily_harmonic: float = 0.35               # second-harmonic share of the daily cycle
    weekly_depth_range: tuple = (0.08, 0.22)   # relative weekly modulation
    trend_range: tuple = (-0.10, 0.25)         # relative drift over the whole series
    noise_range: tuple = (0.02, 0.06)          # noise std relative to local level
    spike_rate: float = 0.002                  # per-hour probability
    spike_scale: float = 1.5                   # spike magnitude relative to base
    phase_jitter: float = 1.0                  # radians; 0 = all sectors share phases

    def scaled(self, **overrides) -> "SyntheticProfile":
        fields = {**self.__dict__, **overrides}
        return SyntheticProfile(**fields)


def _sector_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def generate_sector(seed: int, hours: int, profile: SyntheticProfile | None = None,
                    sector_id: str = "S000", index: int = 0,
                    features: tuple = FEATURES) -> SectorSeries:
    """Generate one sector; identical output for identical arguments."""
    if hours < MIN_HOURS:
        raise ValueError(f"need at least {MIN_HOURS} hours (two weeks), got {hours}")
    if profile is None:
        profile = SyntheticProfile()
    rng = _sector_rng(seed, index)
    t = np.arange(hours, dtype=np.float64)
    values = np.empty((len(features), hours))
    for fi, name in enumerate(features):
        base = rng.uniform(*profile.base_range)
        amp = rng.uniform(*profile.daily_amp_range)
        depth = rng.uniform(*profile.weekly_depth_range)
        trend = rng.uniform(*profile.trend_range)
        noise_scale = rng.uniform(*profile.noise_range)
        phase = rng.uniform(-profile.phase_jitter, profile.phase_jitter)
        week_phase = rng.uniform(-profile.phase_jitter, profile.phase_jitter)

        daily = np.sin(2 * np.pi * t / 24.0 + phase)
        daily = daily + profile.daily_harmonic * np.sin(4 * np.pi * t / 24.0 + 2 * phase)
        weekly = 1.0 + depth * np.sin(2 * np.pi * t / 168.0 + week_phase)
        level = base * (1.0 + trend * t / hours) * weekly
        signal = level + base * amp * daily

        noise = noise_scale * np.abs(signal) * rng.standard_normal(hours)
        rate = profile.spike_rate * (4.0 if name in SPIKY_FEATURES else 1.0)
        scale = profile.spike_scale * (2.0 if name in SPIKY_FEATURES else 1.0)
        spikes = (rng.random(hours) < rate) * rng.exponential(scale * base, size=hours)
        values[fi] = np.maximum(signal + noise + spikes, 0.0)
    return SectorSeries(sector_id=sector_id, features=tuple(features), values=values)


def generate_dataset(seed: int, n_sectors: int, hours: int,
                     profile: SyntheticProfile | None = None,
                     features: tuple = FEATURES) -> list[SectorSeries]:
    return [
        generate_sector(seed, hours, profile, sector_id=f"S{idx:03d}", index=idx,
                        features=features)
        for idx in range(n_sectors)
    ]


# -- CSV export / ingestion --------------------------------------------------


def export_csv(series: SectorSeries, path):
    """Write one sector to CSV with the exact documented schema."""
    path = Path(path)
    lines = ["time_period,sector_id," + ",".join(series.features)]
    stamp = series.start
    for col in range(series.length):
        cells = [stamp.isoformat(), series.sector_id]
        cells += [f"{series.values[fi, col]:.6f}" for fi in range(series.n_features)]
        lines.append(",".join(cells))
        stamp = stamp + HOUR
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def ingest_csv(path) -> list[SectorSeries]:
    """Read sectors from a CSV file or a directory of CSV files.

    Sectors with more than ``MAX_MISSING`` missing values in any feature
    are dropped with a logged reason; remaining gaps are filled by linear
    interpolation (edge values held). Rows are sorted by time per sector;
    duplicate timestamps are an error.
    """
    path = Path(path)
    if path.is_dir():
        sectors = []
        for child in sorted(path.glob("*.csv")):
            sectors.extend(ingest_csv(child))
        sectors.sort(key=lambda s: s.sector_id)
        return sectors
    return _ingest_file(path)


def _ingest_file(path: Path) -> list[SectorSeries]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        if header[:2] != ["time_period", "sector_id"] or len(header) < 3:
            raise CsvFormatError(
                f"{path}:1: header must start with time_period,sector_id,<feature...>")
        features = tuple(header[2:])
        rows_by_sector: dict[str, list] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvFormatError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                stamp = datetime.fromisoformat(row[0])
            except ValueError:
                raise CsvFormatError(f"{path}:{lineno}: bad timestamp {row[0]!r}") from None
            cells = []
            for raw in row[2:]:
                if raw == "":
                    cells.append(math.nan)
                    continue
                try:
                    cells.append(float(raw))
                except ValueError:
                    raise CsvFormatError(f"{path}:{lineno}: bad value {raw!r}") from None
            rows_by_sector.setdefault(row[1], []).append((stamp, lineno, cells))

    sectors = []
    for sector_id in sorted(rows_by_sector):
        series = _assemble_sector(path, sector_id, features, rows_by_sector[sector_id])
        if series is not None:
            sectors.append(series)
    return sectors


def _assemble_sector(path, sector_id, features, rows) -> SectorSeries | None:
    rows.sort(key=lambda r: (r[0], r[1]))
    stamps = [r[0] for r in rows]
    for prev, cur, lineno in zip(stamps, stamps[1:], (r[1] for r in rows[1:])):
        if cur <= prev:
            raise CsvFormatError(
                f"{path}:{lineno}: non-monotonic timestamp for sector {sector_id}")
    start, end = stamps[0], stamps[-1]
    length = int((end - start) / HOUR) + 1
    grid = np.full((len(features), length), np.nan)
    for stamp, _lineno, cells in rows:
        offset = int((stamp - start) / HOUR)
        if (start + offset * HOUR) != stamp:
            raise CsvFormatError(f"{path}: sector {sector_id} has a non-hourly timestamp {stamp}")
        grid[:, offset] = cells

    missing_per_feature = np.isnan(grid).sum(axis=1)
    worst = int(missing_per_feature.max())
    if worst > MAX_MISSING:
        logger.info("dropping sector %s: %d missing values exceed the threshold of %d",
                    sector_id, worst, MAX_MISSING)
        return None
    for fi in range(len(features)):
        gaps = np.isnan(grid[fi])
        if gaps.any():
            known = np.flatnonzero(~gaps)
            grid[fi, gaps] = np.interp(np.flatnonzero(gaps), known, grid[fi, known])
    return SectorSeries(sector_id=sector_id, features=features, values=grid, start=start)


# -- splitting and normalization --------------------------------------------


@dataclass
class SplitSpec:
    """Contiguous train/val/test fractions, in temporal order."""

    train: float = 0.6
    val: float = 0.2
    test: float = 0.2

    def __post_init__(self):
        total = self.train + self.val + self.test
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {total}")

    def boundaries(self, length: int) -> tuple[int, int]:
        n_train = int(length * self.train)
        n_val = int(length * self.val)
        return n_train, n_train + n_val


@dataclass
class NormStats:
    """Per-feature transform parameters, fitted on the train split only."""

    kind: str            # "zscore" or "minmax"
    loc: np.ndarray      # mean, or min
    scale: np.ndarray    # std, or range

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.loc[:, None]) / self.scale[:, None]

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return x * self.scale[:, None] + self.loc[:, None]


def fit_norm_stats(train: np.ndarray, kind: str = "zscore", eps: float = 1e-8) -> NormStats:
    if kind == "zscore":
        loc = train.mean(axis=1)
        scale = train.std(axis=1)
    elif kind == "minmax":
        loc = train.min(axis=1)
        scale = train.max(axis=1) - loc
    else:
        raise ValueError(f"unknown normalization kind {kind!r}")
    degenerate = scale < eps
    if degenerate.any():
        logger.warning("clamping %d degenerate feature scales to %g",
                       int(degenerate.sum()), eps)
        scale = np.where(degenerate, eps, scale)
    return NormStats(kind=kind, loc=loc, scale=scale)


def normalize_split(series: SectorSeries, spec: SplitSpec | None = None,
                    kind: str = "zscore") -> tuple[dict, NormStats]:
    """Split one sector and normalize all splits with train-fitted stats."""
    if spec is None:
        spec = SplitSpec()
    b1, b2 = spec.boundaries(series.length)
    if b1 < 2:
        raise ValueError(f"train split of {b1} steps is too short")
    raw = {
        "train": series.values[:, :b1],
        "val": series.values[:, b1:b2],
        "test": series.values[:, b2:],
    }
    stats = fit_norm_stats(raw["train"], kind=kind)
    return {name: stats.transform(part) for name, part in raw.items()}, stats


# -- windows -----------------------------------------------------------------


@dataclass
class WindowSet:
    """Aligned (context, target) pairs from a single split."""

    contexts: np.ndarray   # [num, N, L]
    targets: np.ndarray    # [num, N, H]
    starts: np.ndarray     # context start offsets within the split
    field_names: tuple = field(default=(), repr=False)

    def __len__(self):
        return self.contexts.shape[0]


def make_windows(split: np.ndarray, context_len: int, horizon: int,
                 stride: int = 1) -> WindowSet:
    """Slide a context+target window over a split; never crosses its edges."""
    length = split.shape[-1]
    if length < context_len + horizon:
        raise ValueError(
            f"split of {length} steps cannot hold context {context_len} + horizon {horizon}")
    starts = np.arange(0, length - context_len - horizon + 1, stride)
    contexts = np.stack([split[:, s:s + context_len] for s in starts])
    targets = np.stack([split[:, s + context_len:s + context_len + horizon] for s in starts])
    return WindowSet(contexts=contexts, targets=targets, starts=starts)
