"""Delta-method prediction intervals for small neural regressors.

The package streams per-example parameter gradients of a trained network
through a score-driven low-rank sketch, turns the sketch into a regularized
parameter covariance, and emits t-based prediction intervals.  An exact
SVD-based method is included as an oracle for small problems, along with a
benchmark CLI (``deltasketch``).

Typical use::

    from deltasketch import DeltaSketchRegressor

    est = DeltaSketchRegressor(hidden=(50, 50), lam=0.01, rank=500)
    est.fit(x_train, y_train)
    centers, lower, upper = est.predict_interval(x_test)
"""
from .data import (
    Dataset,
    MetricsReport,
    SplitSpec,
    StandardizationStats,
    interval_metrics,
    load_csv,
    metrics_from_arrays,
    parse_manifest,
    split_indices,
    standardize,
)
from .delta import (
    CovarianceModel,
    IntervalReport,
    build_covariance,
    load_model,
    predict_interval,
    predict_intervals,
    quad_form,
    save_model,
)
from .errors import (
    ConfigError,
    DataError,
    DegreesOfFreedomError,
    DeltaSketchError,
    ExactSizeError,
    NumericError,
    SingularCovarianceError,
    SvdConvergenceError,
    TrainingDivergedError,
)
from .estimator import DeltaSketchRegressor
from .linalg import ThinSvd, t_quantile, thin_svd
from .nn import (
    Mlp,
    TrainConfig,
    init_params,
    jacobian_rows,
    load_checkpoint,
    n_params,
    save_checkpoint,
    train,
)
from .oracle import (
    ExactCovariance,
    exact_covariance,
    exact_interval,
    linreg_interval,
)
from .sketch import (
    RidSketch,
    SketchResult,
    load_result,
    save_result,
    score_values,
    sketch_stream,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CovarianceModel",
    "DataError",
    "Dataset",
    "DegreesOfFreedomError",
    "DeltaSketchError",
    "DeltaSketchRegressor",
    "ExactCovariance",
    "ExactSizeError",
    "IntervalReport",
    "MetricsReport",
    "Mlp",
    "NumericError",
    "RidSketch",
    "SingularCovarianceError",
    "SketchResult",
    "SplitSpec",
    "StandardizationStats",
    "SvdConvergenceError",
    "ThinSvd",
    "TrainConfig",
    "TrainingDivergedError",
    "build_covariance",
    "exact_covariance",
    "exact_interval",
    "init_params",
    "interval_metrics",
    "jacobian_rows",
    "linreg_interval",
    "load_checkpoint",
    "load_csv",
    "load_model",
    "load_result",
    "metrics_from_arrays",
    "n_params",
    "parse_manifest",
    "predict_interval",
    "predict_intervals",
    "quad_form",
    "save_checkpoint",
    "save_model",
    "save_result",
    "score_values",
    "sketch_stream",
    "split_indices",
    "standardize",
    "t_quantile",
    "thin_svd",
    "train",
]
