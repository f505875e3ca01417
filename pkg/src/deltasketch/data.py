"""Dataset ingestion, standardization, repeated splits, and metrics.

CSV files are comma-separated with a header row; any row containing a cell
that does not parse as a decimal number is dropped and counted, so a loaded
Dataset never holds missing values.  Standardization statistics always come
from a training split only.  Evaluation metrics follow the usual trio for
prediction intervals: coverage probability, correlation between interval
width and absolute error, and mean width in training-target standard
deviations.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .delta import IntervalReport
from .errors import ConfigError, DataError
from .validation import check_vector

MIN_SPLIT_ROWS = 10


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...]
    target_name: str
    n_dropped: int = 0

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def m_x(self) -> int:
        return self.x.shape[1]

    def take(self, idx: np.ndarray) -> "Dataset":
        return replace(self, x=self.x[idx].copy(), y=self.y[idx].copy())


def load_csv(path, target_column: str) -> Dataset:
    """Read a numeric CSV with a header row.

    Rows with any cell that fails to parse as a float (including empty
    cells) are dropped; the count of dropped rows is kept on the returned
    Dataset.  Constant columns are rejected because downstream
    standardization divides by their standard deviation.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        if target_column not in header:
            raise DataError(
                f"{path}: no column named {target_column!r} in header {header}"
            )
        t_idx = header.index(target_column)
        rows = []
        dropped = 0
        for cells in reader:
            if not cells:
                continue
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                dropped += 1
                continue
            if len(rows[-1]) != len(header):
                rows.pop()
                dropped += 1
    if not rows:
        raise DataError(f"{path}: no numeric data rows")
    table = np.asarray(rows, dtype=np.float64)
    y = np.ascontiguousarray(table[:, t_idx])
    x = np.ascontiguousarray(np.delete(table, t_idx, axis=1))
    names = tuple(h for i, h in enumerate(header) if i != t_idx)
    for j, name in enumerate(names):
        if np.all(x[:, j] == x[0, j]):
            raise DataError(f"{path}: feature column {name!r} is constant")
    if np.all(y == y[0]):
        raise DataError(f"{path}: target column {target_column!r} is constant")
    return Dataset(x=x, y=y, feature_names=names,
                   target_name=target_column, n_dropped=dropped)


# ---------------------------------------------------------------------------
# standardization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StandardizationStats:
    x_mean: np.ndarray
    x_sd: np.ndarray
    y_mean: float
    y_sd: float

    @classmethod
    def from_arrays(cls, x: np.ndarray, y: np.ndarray) -> "StandardizationStats":
        x_mean = x.mean(axis=0)
        x_sd = x.std(axis=0)
        y_mean = float(y.mean())
        y_sd = float(y.std())
        if np.any(x_sd == 0.0) or y_sd == 0.0:
            raise DataError("cannot standardize: a column has zero variance")
        return cls(x_mean=x_mean, x_sd=x_sd, y_mean=y_mean, y_sd=y_sd)

    @classmethod
    def from_dataset(cls, train: Dataset) -> "StandardizationStats":
        return cls.from_arrays(train.x, train.y)

    def transform_x(self, x: np.ndarray) -> np.ndarray:
        return (x - self.x_mean) / self.x_sd

    def transform_y(self, y: np.ndarray) -> np.ndarray:
        return (y - self.y_mean) / self.y_sd

    def invert_x(self, x: np.ndarray) -> np.ndarray:
        return x * self.x_sd + self.x_mean

    def invert_y(self, y):
        return y * self.y_sd + self.y_mean


def apply_stats(ds: Dataset, stats: StandardizationStats) -> Dataset:
    return replace(ds, x=stats.transform_x(ds.x), y=stats.transform_y(ds.y))


def standardize(train: Dataset, apply_to: Dataset):
    """Z-score apply_to with statistics computed on train only."""
    stats = StandardizationStats.from_dataset(train)
    return apply_stats(apply_to, stats), stats


# ---------------------------------------------------------------------------
# repeated random splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    seed: int
    test_fraction: float = 0.1
    n_repeats: int = 20

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(
                f"test_fraction must lie in (0, 1), got {self.test_fraction}"
            )
        if self.n_repeats < 1:
            raise ConfigError(f"n_repeats must be >= 1, got {self.n_repeats}")


def split_indices(n: int, spec: SplitSpec, repeat: int):
    """Disjoint, exhaustive (train, test) indices for one repeat.

    Reproducible from (spec.seed, repeat) alone; both index arrays come back
    sorted.
    """
    if n < MIN_SPLIT_ROWS:
        raise DataError(f"need at least {MIN_SPLIT_ROWS} rows to split, got {n}")
    if not 0 <= repeat < spec.n_repeats:
        raise ConfigError(f"repeat {repeat} outside 0..{spec.n_repeats - 1}")
    rng = np.random.default_rng([spec.seed, repeat])
    perm = rng.permutation(n)
    n_test = int(round(spec.test_fraction * n))
    n_test = min(max(n_test, 1), n - 1)
    test = np.sort(perm[:n_test])
    train = np.sort(perm[n_test:])
    return train, test


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricsReport:
    p_cov: float
    r: float
    w_sd: float
    r_degenerate: bool = False


def metrics_from_arrays(y_true, centers, half_widths,
                        target_sd_train: float) -> MetricsReport:
    """Coverage, width-error correlation, and normalized mean width.

    Widths and y values must share one unit system; target_sd_train is the
    training-split target standard deviation in that same system, making
    w_sd invariant under affine rescaling of the target.
    """
    y_true = check_vector(y_true, "y_true")
    centers = check_vector(centers, "centers", length=y_true.shape[0])
    half_widths = check_vector(half_widths, "half_widths",
                               length=y_true.shape[0])
    if y_true.shape[0] == 0:
        raise DataError("metrics need at least one test point")
    target_sd_train = float(target_sd_train)
    if not target_sd_train > 0.0:
        raise DataError(f"target_sd_train must be > 0, got {target_sd_train}")
    covered = np.abs(y_true - centers) <= half_widths
    p_cov = float(np.mean(covered))
    widths = 2.0 * half_widths
    abs_err = np.abs(y_true - centers)
    degenerate = bool(widths.std() == 0.0 or abs_err.std() == 0.0)
    if degenerate:
        r = 0.0
    else:
        r = float(np.corrcoef(widths, abs_err)[0, 1])
    w_sd = float(widths.mean() / target_sd_train)
    return MetricsReport(p_cov=p_cov, r=r, w_sd=w_sd, r_degenerate=degenerate)


def interval_metrics(reports, y_true, target_sd_train: float) -> MetricsReport:
    """metrics_from_arrays over a sequence of IntervalReport."""
    reports = list(reports)
    centers = np.array([rep.center for rep in reports])
    halves = np.array([rep.half_width for rep in reports])
    return metrics_from_arrays(y_true, centers, halves, target_sd_train)


# ---------------------------------------------------------------------------
# dataset manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    target: str


def parse_manifest(path) -> dict[str, ManifestEntry]:
    """Line-oriented manifest: ``name = relative/path.csv, target_column``.

    Blank lines and lines starting with '#' are skipped; relative paths are
    resolved against the manifest's own directory.
    """
    path = Path(path)
    entries: dict[str, ManifestEntry] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected 'name = path, target'")
            name, rhs = line.split("=", 1)
            name = name.strip()
            if "," not in rhs:
                raise DataError(f"{path}:{lineno}: expected 'name = path, target'")
            file_part, target = rhs.rsplit(",", 1)
            file_part, target = file_part.strip(), target.strip()
            if not name or not file_part or not target:
                raise DataError(f"{path}:{lineno}: empty field")
            if name in entries:
                raise DataError(f"{path}:{lineno}: duplicate dataset {name!r}")
            file_path = Path(file_part)
            if not file_path.is_absolute():
                file_path = path.parent / file_path
            entries[name] = ManifestEntry(path=file_path, target=target)
    return entries


__all__ = [
    "Dataset", "IntervalReport", "ManifestEntry", "MetricsReport",
    "SplitSpec", "StandardizationStats", "apply_stats", "interval_metrics",
    "load_csv", "metrics_from_arrays", "parse_manifest", "split_indices",
    "standardize",
]
