"""Accuracy metrics and consistency analyses for trained choke models.

Accuracy is reported as MAPE per well plus cumulative-deviation curves (the
fraction of test points whose relative deviation stays under a threshold),
aggregated across wells by median and quartiles. Scientific consistency is
probed two ways: sensitivity sweeps perturb one explanatory variable around
random test points and count violations of the expected monotone response,
and the correlation matrix of the explanatory variables exposes
production-system effects (for example a negative rate/pressure correlation
from the wellbore) that a flexible model may absorb against choke physics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, DomainError
from .hybrid import X_COLUMNS, HybridModel
from .pipeline import WellDataset, subset_columns

DAY_SECONDS = 86400.0

DEFAULT_THRESHOLDS = np.arange(0.0, 50.5, 0.5)

CORRELATION_COLUMNS = X_COLUMNS + ("q_o",)


def mape(predictions: Sequence[float], measurements: Sequence[float]) -> float:
    """Mean absolute percentage error, in percent."""
    pred = np.asarray(predictions, dtype=float)
    meas = np.asarray(measurements, dtype=float)
    if pred.shape != meas.shape or pred.size == 0:
        raise DomainError("predictions and measurements must share a nonzero length")
    if np.any(meas == 0.0):
        raise DomainError("zero measurement leaves the relative error undefined")
    return float(100.0 * np.mean(np.abs(pred - meas) / np.abs(meas)))


def cumulative_deviation(
    predictions: Sequence[float],
    measurements: Sequence[float],
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
) -> np.ndarray:
    """Percentage of points within each relative-deviation threshold [%]."""
    pred = np.asarray(predictions, dtype=float)
    meas = np.asarray(measurements, dtype=float)
    if pred.shape != meas.shape or pred.size == 0:
        raise DomainError("predictions and measurements must share a nonzero length")
    if np.any(meas == 0.0):
        raise DomainError("zero measurement leaves the relative error undefined")
    deviation = 100.0 * np.abs(pred - meas) / np.abs(meas)
    thresholds = np.asarray(thresholds, dtype=float)
    return np.array([100.0 * np.mean(deviation <= d) for d in thresholds])


@dataclass
class EvaluationReport:
    """MAPE and cumulative-deviation curves for one model across wells."""

    model: str
    horizon_days: float | None
    per_well_mape: dict[str, float]
    thresholds: np.ndarray
    per_well_curve: dict[str, np.ndarray]
    n_points: dict[str, int] = field(default_factory=dict)

    @property
    def wells(self) -> list[str]:
        return sorted(self.per_well_mape)

    @property
    def median_mape(self) -> float:
        return float(np.median([self.per_well_mape[w] for w in self.wells]))

    @property
    def quartiles(self) -> tuple[float, float]:
        values = [self.per_well_mape[w] for w in self.wells]
        return float(np.percentile(values, 25)), float(np.percentile(values, 75))

    def to_text(self) -> str:
        q1, q3 = self.quartiles
        lines = [
            "chokevfm-evaluation 1",
            f"model {self.model}",
            f"horizon_days {self.horizon_days!r}",
            f"wells {len(self.wells)}",
            f"median_mape {self.median_mape!r}",
            f"quartile_mape {q1!r} {q3!r}",
        ]
        for well in self.wells:
            lines.append(
                f"well {well} mape {self.per_well_mape[well]!r} n {self.n_points.get(well, 0)}"
            )
        return "\n".join(lines) + "\n"

    def curve_csv(self) -> str:
        header = "threshold_percent," + ",".join(self.wells)
        rows = [header]
        for i, d in enumerate(self.thresholds):
            cells = [repr(float(d))] + [repr(float(self.per_well_curve[w][i])) for w in self.wells]
            rows.append(",".join(cells))
        return "\n".join(rows) + "\n"


def evaluate_model(
    model: HybridModel,
    datasets: Sequence[WellDataset],
    horizon_days: float | None = None,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
) -> EvaluationReport:
    """Test-partition MAPE and deviation curve per well.

    With `horizon_days`, only test samples within that many days of the
    test-window start are scored.
    """
    per_mape: dict[str, float] = {}
    per_curve: dict[str, np.ndarray] = {}
    n_points: dict[str, int] = {}
    for ds in datasets:
        idx = np.flatnonzero(ds.mask("test"))
        if idx.size == 0:
            raise ConfigurationError(f"well {ds.well_id} has no test samples")
        t = ds.columns["timestamp"][idx]
        if horizon_days is not None:
            idx = idx[t <= t.min() + horizon_days * DAY_SECONDS]
            if idx.size == 0:
                raise ConfigurationError(
                    f"well {ds.well_id}: empty {horizon_days}-day evaluation window"
                )
        cols = subset_columns(ds.model_columns(), idx)
        y = ds.columns["q_o"][idx]
        pred = model.predict(cols)
        per_mape[ds.well_id] = mape(pred, y)
        per_curve[ds.well_id] = cumulative_deviation(pred, y, thresholds)
        n_points[ds.well_id] = int(idx.size)
    return EvaluationReport(
        model=model.variant.tag,
        horizon_days=horizon_days,
        per_well_mape=per_mape,
        thresholds=np.asarray(thresholds, dtype=float),
        per_well_curve=per_curve,
        n_points=n_points,
    )


def horizon_compare(
    models: Mapping[str, HybridModel],
    datasets: Sequence[WellDataset],
    horizons: Sequence[float] = (90.0, 7.0),
) -> dict[str, dict[float, EvaluationReport]]:
    """Evaluate each model over several prediction horizons of the test set.

    Each horizon scores the first `h` days of the test window; a horizon
    whose window holds no samples raises a configuration error.
    """
    return {
        tag: {h: evaluate_model(model, datasets, horizon_days=h) for h in horizons}
        for tag, model in models.items()
    }


@dataclass
class SweepCurve:
    base_index: int
    grid: np.ndarray
    response: np.ndarray
    violations: int


@dataclass
class SensitivityResult:
    variable: str
    curves: list[SweepCurve]

    @property
    def total_violations(self) -> int:
        return sum(c.violations for c in self.curves)

    def to_csv(self) -> str:
        rows = ["variable,base_index,value,response"]
        for curve in self.curves:
            for x, y in zip(curve.grid, curve.response):
                rows.append(f"{self.variable},{curve.base_index},{x!r},{y!r}")
        return "\n".join(rows) + "\n"


def sensitivity_sweep(
    model: HybridModel,
    dataset: WellDataset,
    variable: str,
    n_base: int = 5,
    n_grid: int = 60,
    seed=0,
    expand: float = 0.1,
) -> SensitivityResult:
    """Perturb one variable around random test points and score monotonicity.

    The sweep spans the training-data range of `variable` extended by
    `expand` on each side (clipped to the physical domain), holding the
    other explanatory variables at the base point. A grid step with a
    falling oil rate counts as one monotonicity violation.
    """
    if variable not in ("u", "p1"):
        raise ConfigurationError(f"sensitivity sweeps cover u and p1, not {variable!r}")
    test_idx = np.flatnonzero(dataset.mask("test"))
    if test_idx.size == 0:
        raise ConfigurationError("dataset has no test samples")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(test_idx, size=min(n_base, test_idx.size), replace=False)

    i = model.stats.index(variable)
    lo, hi = float(model.stats.minimum[i]), float(model.stats.maximum[i])
    pad = expand * (hi - lo)
    lo, hi = lo - pad, hi + pad
    if variable == "u":
        lo, hi = max(lo, 0.0), min(hi, 1.0)
    else:
        lo = max(lo, 1.0)
    grid = np.linspace(lo, hi, n_grid)

    cols_all = dataset.model_columns()
    curves = []
    for base in chosen:
        cols = {c: np.full(n_grid, float(cols_all[c][base])) for c in cols_all}
        cols[variable] = grid
        response = np.asarray(ad.value_of(model.predict_tensor(cols)))
        tol = 1e-9 * max(float(np.max(np.abs(response))), 1e-30)
        violations = int(np.sum(np.diff(response) < -tol))
        curves.append(SweepCurve(int(base), grid, response, violations))
    return SensitivityResult(variable, curves)


def correlation_matrix(data: WellDataset | Mapping[str, np.ndarray]) -> tuple[np.ndarray, tuple[str, ...]]:
    """Pearson correlations over the explanatory variables and the oil rate.

    Zero-variance columns yield NaN (undefined) entries, including their
    diagonal.
    """
    cols = data.columns if isinstance(data, WellDataset) else data
    arrays = [np.asarray(cols[c], dtype=float) for c in CORRELATION_COLUMNS]
    n = arrays[0].size
    if n < 3:
        raise ConfigurationError("correlation needs at least 3 samples")
    stacked = np.column_stack(arrays)
    centered = stacked - stacked.mean(axis=0)
    std = centered.std(axis=0)
    k = len(CORRELATION_COLUMNS)
    matrix = np.full((k, k), np.nan)
    cov = centered.T @ centered / n
    for a in range(k):
        for b in range(k):
            if std[a] > 0.0 and std[b] > 0.0:
                matrix[a, b] = cov[a, b] / (std[a] * std[b])
    return matrix, CORRELATION_COLUMNS


def correlation_csv(matrix: np.ndarray, names: Sequence[str]) -> str:
    rows = ["," + ",".join(names)]
    for name, row in zip(names, matrix):
        rows.append(name + "," + ",".join(repr(float(v)) for v in row))
    return "\n".join(rows) + "\n"
