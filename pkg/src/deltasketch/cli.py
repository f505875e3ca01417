"""Command-line interface: evaluate, compare-exact, spectrum, sweep-rank.

Every run resolves a RunConfig from three layers (built-in defaults, an
optional key-value config file, explicit flags; later layers win), and every
output CSV starts with a comment line recording the config hash and package
version so result files are self-describing.  Identical configs produce
byte-identical files on one platform when timing masking is on; wall-clock
columns are the one intentionally nondeterministic output, so --mask-timings
zeroes them for reproducibility checks.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    Dataset,
    SplitSpec,
    load_csv,
    metrics_from_arrays,
    parse_manifest,
    split_indices,
)
from .delta import build_covariance
from .errors import ConfigError, DataError, NumericError
from .estimator import DeltaSketchRegressor
from .linalg import thin_svd
from .nn import jacobian_rows
from .oracle import MAX_EXACT_PARAMS, MAX_EXACT_ROWS, exact_covariance
from .sketch import RidSketch, score_values

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_DEFAULTS = dict(
    dataset=None, target=None, manifest="datasets/manifest.txt",
    method="id", rank=500, lam=0.01, alpha=0.05, seed=0, repeats=20,
    test_fraction=0.1, hidden=(50, 50), activation="tanh", epochs=100,
    epoch_grid=None, batch_size=32, learning_rate=1e-3, score="covariance",
    complement=False, standardize=True, out="results",
    mask_timings=False, ranks=None,
)

_INT_KEYS = {"rank", "seed", "repeats", "epochs", "batch_size"}
_FLOAT_KEYS = {"lam", "alpha", "test_fraction", "learning_rate"}
_BOOL_KEYS = {"complement", "standardize", "mask_timings"}
_TUPLE_KEYS = {"hidden", "epoch_grid", "ranks"}


@dataclass(frozen=True)
class RunConfig:
    dataset: str
    target: str | None
    manifest: str
    method: str
    rank: int
    lam: float
    alpha: float
    seed: int
    repeats: int
    test_fraction: float
    hidden: tuple
    activation: str
    epochs: int
    epoch_grid: tuple | None
    batch_size: int
    learning_rate: float
    score: str
    complement: bool
    standardize: bool
    out: str
    mask_timings: bool
    ranks: tuple | None

    def key_value_lines(self) -> list[str]:
        out = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            out.append(f"{f.name}={value}")
        return out

    def config_hash(self) -> str:
        # the output directory is presentation, not experiment identity, so
        # the same run written elsewhere keeps the same hash
        lines = [l for l in self.key_value_lines() if not l.startswith("out=")]
        return hashlib.sha256("\n".join(sorted(lines)).encode()).hexdigest()[:12]

    @property
    def dataset_label(self) -> str:
        # direct CSV paths would put slashes into output filenames
        if self.dataset.endswith(".csv") or "/" in self.dataset:
            return Path(self.dataset).stem
        return self.dataset


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _parse_int_tuple(raw) -> tuple:
    if isinstance(raw, tuple):
        return tuple(int(v) for v in raw)
    parts = [p.strip() for p in str(raw).split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"expected a comma-separated integer list, got {raw!r}")
    return tuple(int(p) for p in parts)


def _coerce(key: str, value):
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key in _BOOL_KEYS:
            return value if isinstance(value, bool) else _parse_bool(value)
        if key in _TUPLE_KEYS:
            return None if value is None else _parse_int_tuple(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return value


def read_config_file(path) -> dict:
    """Key-value config: one ``key = value`` per line, '#' comments."""
    values = {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _DEFAULTS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    merged = dict(_DEFAULTS)
    if args.config is not None:
        merged.update(read_config_file(args.config))
    for key in _DEFAULTS:
        cli_value = getattr(args, key, None)
        if cli_value is not None:
            merged[key] = cli_value
    merged = {k: _coerce(k, v) for k, v in merged.items()}
    if merged["dataset"] is None:
        raise ConfigError("no dataset given (use --dataset or a config file)")
    cfg = RunConfig(**merged)
    if cfg.method not in ("id", "exact"):
        raise ConfigError(f"method must be 'id' or 'exact', got {cfg.method!r}")
    if cfg.method == "id" and cfg.rank < 1:
        raise ConfigError(f"rank must be >= 1, got {cfg.rank}")
    if not 0.0 < cfg.alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {cfg.alpha}")
    if cfg.repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {cfg.repeats}")
    return cfg


def resolve_dataset(cfg: RunConfig) -> Dataset:
    """A dataset is either a manifest name or a direct CSV path + target."""
    candidate = Path(cfg.dataset)
    looks_like_path = cfg.dataset.endswith(".csv") or "/" in cfg.dataset
    if looks_like_path:
        if cfg.target is None:
            raise ConfigError(
                f"dataset path {cfg.dataset!r} needs --target <column>"
            )
        if not candidate.exists():
            raise DataError(f"dataset file not found: {candidate}")
        return load_csv(candidate, cfg.target)
    manifest_path = Path(cfg.manifest)
    if not manifest_path.exists():
        raise ConfigError(
            f"manifest not found: {manifest_path} (needed to resolve "
            f"dataset name {cfg.dataset!r})"
        )
    entries = parse_manifest(manifest_path)
    if cfg.dataset not in entries:
        raise ConfigError(
            f"dataset {cfg.dataset!r} not in manifest "
            f"(available: {', '.join(sorted(entries))})"
        )
    entry = entries[cfg.dataset]
    if not entry.path.exists():
        raise DataError(
            f"dataset file not found: {entry.path} (run the fetch script "
            f"to download it)"
        )
    return load_csv(entry.path, entry.target)


def repeat_seed(seed: int, repeat: int) -> int:
    # well-mixed per-repeat seed so repeats are independent but reproducible
    return int(np.random.SeedSequence([seed, repeat]).generate_state(1)[0])


def make_estimator(cfg: RunConfig, repeat: int, method=None, rank=None):
    return DeltaSketchRegressor(
        hidden=cfg.hidden, activation=cfg.activation, lam=cfg.lam,
        method=method or cfg.method, rank=cfg.rank if rank is None else rank,
        score=cfg.score, complement=cfg.complement, epochs=cfg.epochs,
        epoch_grid=cfg.epoch_grid, batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate, alpha=cfg.alpha,
        standardize=cfg.standardize, random_state=repeat_seed(cfg.seed, repeat),
    )


def run_one_repeat(cfg: RunConfig, ds: Dataset, repeat: int,
                   method=None, rank=None):
    """Train, sketch, and evaluate a single split.

    Returns (metrics, wall_seconds, test_idx, y_true, centers, lower, upper);
    wall_seconds covers the sketch and interval phases only, never training.
    """
    spec = SplitSpec(seed=cfg.seed, test_fraction=cfg.test_fraction,
                     n_repeats=cfg.repeats)
    train_idx, test_idx = split_indices(ds.n, spec, repeat)
    train_ds, test_ds = ds.take(train_idx), ds.take(test_idx)
    est = make_estimator(cfg, repeat, method=method, rank=rank)
    est.fit(train_ds.x, train_ds.y)
    t0 = time.perf_counter()
    centers, lower, upper = est.predict_interval(test_ds.x)
    wall = est.sketch_seconds_ + (time.perf_counter() - t0)
    halves = (upper - lower) / 2.0
    rep = metrics_from_arrays(test_ds.y, centers, halves,
                              float(train_ds.y.std()))
    return rep, wall, test_idx, test_ds.y, centers, lower, upper


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".6f")


def write_csv(path: Path, cfg: RunConfig, header, rows, trailing_comments=()):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config_hash={cfg.config_hash()} version={__version__}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
        for comment in trailing_comments:
            fh.write(f"# {comment}\n")


def write_interval_csv(path: Path, cfg: RunConfig, test_idx, y_true,
                       centers, lower, upper):
    rows = [
        [int(i), format(t, ".10g"), format(c, ".10g"),
         format(lo, ".10g"), format(up, ".10g")]
        for i, t, c, lo, up in zip(test_idx, y_true, centers, lower, upper)
    ]
    write_csv(path, cfg, ["index", "y_true", "center", "lower", "upper"], rows)


def _wall(cfg: RunConfig, seconds: float) -> str:
    return _fmt(0.0 if cfg.mask_timings else seconds)


def _mean_or_nan(values) -> float:
    return float(np.mean(values)) if values else float("nan")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_evaluate(cfg: RunConfig) -> int:
    ds = resolve_dataset(cfg)
    out = Path(cfg.out)
    rows, failures = [], []
    collected = {"p_cov": [], "r": [], "w_sd": [], "wall": []}
    for repeat in range(cfg.repeats):
        try:
            rep, wall, test_idx, y_true, centers, lower, upper = \
                run_one_repeat(cfg, ds, repeat)
        except (DataError, NumericError, ConfigError) as exc:
            failures.append(f"repeat {repeat} failed: {exc}")
            rows.append([cfg.dataset_label, cfg.method, repeat,
                         "nan", "nan", "nan", "nan"])
            continue
        rows.append([cfg.dataset_label, cfg.method, repeat, _fmt(rep.p_cov),
                     _fmt(rep.r), _fmt(rep.w_sd), _wall(cfg, wall)])
        collected["p_cov"].append(rep.p_cov)
        collected["r"].append(rep.r)
        collected["w_sd"].append(rep.w_sd)
        collected["wall"].append(0.0 if cfg.mask_timings else wall)
        write_interval_csv(
            out / f"intervals_{cfg.dataset_label}_{cfg.method}_r{repeat}.csv",
            cfg, test_idx, y_true, centers, lower, upper,
        )
    rows.append([cfg.dataset_label, cfg.method, "mean",
                 _fmt(_mean_or_nan(collected["p_cov"])),
                 _fmt(_mean_or_nan(collected["r"])),
                 _fmt(_mean_or_nan(collected["w_sd"])),
                 _fmt(_mean_or_nan(collected["wall"]))])
    metrics_path = out / f"metrics_{cfg.dataset_label}_{cfg.method}.csv"
    write_csv(metrics_path, cfg,
              ["dataset", "method", "repeat", "p_cov", "r", "w_sd",
               "wall_seconds"],
              rows, trailing_comments=failures)
    done = cfg.repeats - len(failures)
    print(f"evaluate: {cfg.dataset_label} method={cfg.method} "
          f"repeats={done}/{cfg.repeats} ok -> {metrics_path}")
    if failures:
        for line in failures:
            print(f"  {line}", file=sys.stderr)
    return EXIT_OK


def cmd_compare_exact(cfg: RunConfig) -> int:
    ds = resolve_dataset(cfg)
    out = Path(cfg.out)
    rows = []
    means = {key: [] for key in
             ("p_id", "r_id", "w_id", "t_id", "p_ex", "r_ex", "w_ex", "t_ex")}
    for repeat in range(cfg.repeats):
        rep_id, wall_id, *_ = run_one_repeat(cfg, ds, repeat, method="id")
        rep_ex, wall_ex, *_ = run_one_repeat(cfg, ds, repeat, method="exact")
        rows.append([
            cfg.dataset_label, repeat,
            _fmt(rep_id.p_cov), _fmt(rep_id.r), _fmt(rep_id.w_sd),
            _wall(cfg, wall_id),
            _fmt(rep_ex.p_cov), _fmt(rep_ex.r), _fmt(rep_ex.w_sd),
            _wall(cfg, wall_ex),
        ])
        for key, val in zip(means, (rep_id.p_cov, rep_id.r, rep_id.w_sd,
                                    0.0 if cfg.mask_timings else wall_id,
                                    rep_ex.p_cov, rep_ex.r, rep_ex.w_sd,
                                    0.0 if cfg.mask_timings else wall_ex)):
            means[key].append(val)
    rows.append([cfg.dataset_label, "mean"] +
                [_fmt(_mean_or_nan(means[k])) for k in means])
    path = out / f"compare_{cfg.dataset_label}.csv"
    write_csv(path, cfg,
              ["dataset", "repeat", "p_cov_id", "r_id", "w_sd_id",
               "wall_seconds_id", "p_cov_exact", "r_exact", "w_sd_exact",
               "wall_seconds_exact"], rows)
    print(f"compare-exact: {cfg.dataset_label} repeats={cfg.repeats} -> {path}")
    return EXIT_OK


def cmd_spectrum(cfg: RunConfig) -> int:
    ds = resolve_dataset(cfg)
    spec = SplitSpec(seed=cfg.seed, test_fraction=cfg.test_fraction,
                     n_repeats=max(cfg.repeats, 1))
    train_idx, _ = split_indices(ds.n, spec, 0)
    train_ds = ds.take(train_idx)
    est = make_estimator(cfg, 0, method="id")
    est.fit(train_ds.x, train_ds.y)
    p = est.net_.n_params
    if p > MAX_EXACT_PARAMS or train_ds.n > MAX_EXACT_ROWS:
        raise ConfigError(
            f"spectrum needs the exact path; {train_ds.n} x {p} exceeds its "
            f"size gate"
        )
    xs = est._to_std(train_ds.x)
    j = np.vstack(list(jacobian_rows(est.net_, xs)))
    exact_d = thin_svd(j).d
    exact_cov = score_values(exact_d, "covariance", cfg.lam)
    model = est.model_
    rows = []
    for i in range(exact_d.shape[0]):
        if i < model.k:
            sk_d = format(model.d[i], ".10g")
            sk_cov = format(model.d_sigma_inv[i], ".10g")
        else:
            sk_d, sk_cov = "", ""
        rows.append([i, format(exact_d[i], ".10g"), sk_d,
                     format(exact_cov[i], ".10g"), sk_cov])
    path = Path(cfg.out) / f"spectrum_{cfg.dataset_label}.csv"
    write_csv(path, cfg,
              ["index", "exact_singular_value", "sketch_singular_value",
               "exact_cov_eigenvalue", "sketch_cov_eigenvalue"], rows)
    print(f"spectrum: {cfg.dataset_label} rank={model.k} of {exact_d.shape[0]} "
          f"-> {path}")
    return EXIT_OK


def cmd_sweep_rank(cfg: RunConfig) -> int:
    if not cfg.ranks:
        raise ConfigError("sweep-rank needs --ranks, e.g. --ranks 50,100,200")
    ds = resolve_dataset(cfg)
    rows = []
    for rank in cfg.ranks:
        if rank < 1:
            raise ConfigError(f"rank must be >= 1, got {rank}")
        collected = {"p_cov": [], "r": [], "w_sd": [], "wall": []}
        for repeat in range(cfg.repeats):
            rep, wall, *_ = run_one_repeat(cfg, ds, repeat, method="id",
                                           rank=rank)
            rows.append([cfg.dataset_label, rank, repeat, _fmt(rep.p_cov),
                         _fmt(rep.r), _fmt(rep.w_sd), _wall(cfg, wall)])
            collected["p_cov"].append(rep.p_cov)
            collected["r"].append(rep.r)
            collected["w_sd"].append(rep.w_sd)
            collected["wall"].append(0.0 if cfg.mask_timings else wall)
        rows.append([cfg.dataset_label, rank, "mean",
                     _fmt(_mean_or_nan(collected["p_cov"])),
                     _fmt(_mean_or_nan(collected["r"])),
                     _fmt(_mean_or_nan(collected["w_sd"])),
                     _fmt(_mean_or_nan(collected["wall"]))])
    path = Path(cfg.out) / f"sweep_{cfg.dataset_label}.csv"
    write_csv(path, cfg,
              ["dataset", "rank", "repeat", "p_cov", "r", "w_sd",
               "wall_seconds"], rows)
    print(f"sweep-rank: {cfg.dataset_label} ranks={list(cfg.ranks)} -> {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deltasketch",
        description="Delta-method prediction intervals for small neural "
                    "networks via a streaming low-rank Jacobian sketch.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("evaluate", "train, sketch, and report metrics over repeated splits"),
        ("compare-exact", "side-by-side sketched vs exact metrics"),
        ("spectrum", "dump exact vs sketched spectra for one split"),
        ("sweep-rank", "repeat evaluation across sketch ranks"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key-value config file; flags override")
        p.add_argument("--dataset", help="manifest name or CSV path")
        p.add_argument("--target", help="target column for CSV paths")
        p.add_argument("--manifest", help="dataset manifest file")
        p.add_argument("--method", choices=["id", "exact"])
        p.add_argument("--rank", type=int, help="sketch rank k")
        p.add_argument("--lambda", dest="lam", type=float,
                       help="L2 coefficient")
        p.add_argument("--alpha", type=float, help="miscoverage level")
        p.add_argument("--seed", type=int)
        p.add_argument("--repeats", type=int, help="number of random splits")
        p.add_argument("--test-fraction", dest="test_fraction", type=float)
        p.add_argument("--hidden", help="hidden widths, e.g. 50,50")
        p.add_argument("--activation", choices=["tanh", "relu"])
        p.add_argument("--epochs", type=int)
        p.add_argument("--epoch-grid", dest="epoch_grid",
                       help="epoch counts to tune over, e.g. 40,100,200,400")
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--learning-rate", dest="learning_rate", type=float)
        p.add_argument("--score", choices=["magnitude", "covariance"])
        p.add_argument("--complement", action="store_const", const=True,
                       default=None, help="include the off-subspace term")
        p.add_argument("--no-standardize", dest="standardize",
                       action="store_const", const=False, default=None)
        p.add_argument("--out", help="output directory")
        p.add_argument("--mask-timings", dest="mask_timings",
                       action="store_const", const=True, default=None,
                       help="write wall_seconds as 0 for byte-stable output")
        if name == "sweep-rank":
            p.add_argument("--ranks", help="comma-separated rank list")
    return parser


_COMMANDS = {
    "evaluate": cmd_evaluate,
    "compare-exact": cmd_compare_exact,
    "spectrum": cmd_spectrum,
    "sweep-rank": cmd_sweep_rank,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
