"""Maximum a posteriori fitting of the choke models.

The training objective is a sum of squared prediction residuals plus two
Gaussian-prior penalties, one over the physical parameters (in natural
units, after the positivity transform) and one over the network weights and
biases:

    sum_i (y_i - h(x_i))^2
      + sigma_eps^2 * [ sum ((phi_mm - mu_mm)/sigma_mm)^2
                      + sum ((phi_dm - mu_dm)/sigma_dm)^2 ]

With flat priors (sigma -> inf) this reduces to least squares; with a
constant noise level it is maximum likelihood with l2 regularization. On a
mini-batch the data term is rescaled by n_total/n_batch so the prior terms
keep their full-dataset weight.

Prior construction follows three conventions:
  * physical parameters: sigma from a six-sigma band between hard bounds,
  * network parameters: He variances (first layer 1/fan_in, later 2/fan_in),
    with means zero or taken from a network pretrained on the mechanistic
    relation it replaces,
  * measurement noise: a device MAPE alpha translates to
    sigma_eps = sqrt(pi/2) * alpha * |mean(y_train)|.

Model selection uses validation-based early stopping: several repetitions,
each with freshly drawn two-week validation chunks, record the epoch with
the lowest validation MSE; the final model is retrained on the full training
window for the averaged epoch count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, DomainError, TrainingError
from .hybrid import X_COLUMNS, HybridModel, reference_relation
from .pipeline import WellDataset, draw_validation_chunks, subset_columns

DAY_SECONDS = 86400.0


def physical_prior_sigma(min_value: float, max_value: float) -> float:
    """Prior standard deviation from a six-sigma band between hard bounds."""
    if max_value <= min_value:
        raise DomainError(f"empty parameter band [{min_value}, {max_value}]")
    return (max_value - min_value) / 6.0


def noise_sigma_from_mape(alpha: float, targets: Sequence[float]) -> float:
    """Measurement-noise sigma implied by a device MAPE of `alpha`.

    Uses the mean of the training targets as the reference value.
    """
    if alpha <= 0.0:
        raise DomainError(f"MAPE alpha must be positive, got {alpha}")
    targets = np.asarray(targets, dtype=float)
    if targets.size == 0:
        raise ConfigurationError("noise sigma needs a nonempty target sample")
    y_ref = float(targets.mean())
    if y_ref == 0.0:
        raise ConfigurationError("zero-mean targets leave the noise reference undefined")
    return math.sqrt(math.pi / 2.0) * alpha * abs(y_ref)


def default_physical_priors() -> dict[str, tuple[float, float]]:
    """Documented prior means and six-sigma-band deviations, SI units."""
    return {
        "rho_o": (780.0, physical_prior_sigma(630.0, 930.0)),
        "rho_w": (1000.0, physical_prior_sigma(910.0, 1090.0)),
        "kappa": (1.3, physical_prior_sigma(1.06, 1.54)),
        "m_g": (0.019, physical_prior_sigma(0.016, 0.022)),
        "p_rc": (0.6, physical_prior_sigma(0.45, 0.75)),
        "c_d": (0.84, physical_prior_sigma(0.54, 1.14)),
    }


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and protocol settings for :func:`fit`."""

    learning_rate: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 5000
    patience: int = 50
    repetitions: int = 5
    seed: int = 0
    mape_alpha: float = 0.1
    validation_fraction: float = 0.2
    chunk_days: float = 14.0
    clip_norm: float = 1e3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> "TrainConfig":
        positive = {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "repetitions": self.repetitions,
            "mape_alpha": self.mape_alpha,
            "chunk_days": self.chunk_days,
            "clip_norm": self.clip_norm,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigurationError(f"{name} must be positive, got {value}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigurationError("validation_fraction must lie in [0, 1)")
        if self.patience >= self.max_epochs:
            raise ConfigurationError("patience must be smaller than max_epochs")
        return self


class Adam(object):
    """Adam optimizer over autodiff leaves; consumes and clears their grads."""

    def __init__(
        self,
        params: Sequence[ad.Tensor],
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        clip_norm: float | None = None,
    ):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.value) for p in self.params]
        if self.clip_norm is not None:
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
                grads = [g * scale for g in grads]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v, g in zip(self.params, self.m, self.v, grads):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None


def prior_penalty(model: HybridModel) -> ad.Tensor:
    """Sum of squared standardized parameter deviations from the prior means."""
    terms: list = []
    for name in model.variant.physical:
        tp = model.phys[name]
        dev = (tp.expression() - tp.prior_mean) / tp.prior_sigma
        terms.append(dev * dev)
    if model.net is not None:
        for w, b, mw, mb, sigma in zip(
            model._weight_leaves,
            model._bias_leaves,
            model.net_prior_means.weights,
            model.net_prior_means.biases,
            model.net_prior_sigmas,
        ):
            dw = (w - mw) * (1.0 / sigma)
            db = (b - mb) * (1.0 / sigma)
            terms.append(ad.total(dw * dw) + ad.total(db * db))
    out = terms[0] if terms else ad.constant(0.0)
    for t in terms[1:]:
        out = out + t
    return out


def map_loss_tensor(
    model: HybridModel,
    cols: Mapping[str, np.ndarray],
    y: np.ndarray,
    noise_sigma: float,
    n_total: int | None = None,
) -> ad.Tensor:
    """The MAP objective on one batch, as a differentiable scalar."""
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ConfigurationError("empty batch")
    n_total = y.size if n_total is None else n_total
    residual = ad.constant(y) - model.predict_tensor(cols)
    data = ad.total(residual * residual) * (n_total / y.size)
    return data + noise_sigma**2 * prior_penalty(model)


def map_loss(
    model: HybridModel,
    cols: Mapping[str, np.ndarray],
    y: np.ndarray,
    noise_sigma: float,
    n_total: int | None = None,
) -> float:
    value = float(ad.value_of(map_loss_tensor(model, cols, y, noise_sigma, n_total)))
    if not math.isfinite(value):
        raise TrainingError(f"non-finite MAP loss for {model.variant.tag}")
    return value


# -- pretraining ---------------------------------------------------------------


def _sample_relation_inputs(
    model: HybridModel, n: int, ranges: Mapping[str, tuple[float, float]], rng: np.random.Generator
) -> dict[str, np.ndarray]:
    cols: dict[str, np.ndarray] = {}
    for name in model.variant.x_dm:
        lo, hi = ranges[name]
        cols[name] = rng.uniform(lo, hi, size=n)
    if {"eta_g", "eta_o"} <= set(cols):
        # resample pairs that leave no room for the water fraction
        bad = cols["eta_g"] + cols["eta_o"] > 1.0
        while np.any(bad):
            k = int(bad.sum())
            cols["eta_g"][bad] = rng.uniform(*ranges["eta_g"], size=k)
            cols["eta_o"][bad] = rng.uniform(*ranges["eta_o"], size=k)
            bad = cols["eta_g"] + cols["eta_o"] > 1.0
    return cols


def default_pretrain_ranges(model: HybridModel) -> dict[str, tuple[float, float]]:
    """Training-data column spans, the default sampling box for pretraining."""
    out = {}
    for name in model.variant.x_dm:
        i = model.stats.index(name)
        lo, hi = float(model.stats.minimum[i]), float(model.stats.maximum[i])
        if not hi > lo:
            lo, hi = lo - 0.5, hi + 0.5
        out[name] = (lo, hi)
    return out


@dataclass
class PretrainReport:
    variant: str
    n_samples: int
    epochs: int
    relative_rmse: float
    tolerance: float

    @property
    def within_tolerance(self) -> bool:
        return self.relative_rmse <= self.tolerance


def pretrain_network(
    model: HybridModel,
    seed: int,
    *,
    n_samples: int = 10000,
    ranges: Mapping[str, tuple[float, float]] | None = None,
    epochs: int = 400,
    batch_size: int = 256,
    learning_rate: float = 3e-3,
    holdout_fraction: float = 0.1,
    tolerance: float = 0.02,
) -> PretrainReport:
    """Fit the embedded network to its mechanistic relation by least squares.

    Samples inputs uniformly over `ranges` (training-data spans by default),
    evaluates the replaced relation at the prior parameter means, and
    minimizes the plain squared error. The fitted weights become both the
    network state and its prior means; the prior variances keep their He
    values. Returns the held-out relative RMSE; exceeding `tolerance` warns
    rather than fails.
    """
    if not model.variant.pretrainable:
        raise ConfigurationError(f"pretraining undefined for variant {model.variant.tag}")
    rng = np.random.default_rng([seed, 7041])
    ranges = dict(ranges or default_pretrain_ranges(model))
    missing = [c for c in model.variant.x_dm if c not in ranges]
    if missing:
        raise ConfigurationError(f"pretraining ranges missing columns: {', '.join(missing)}")

    n_hold = max(1, int(round(n_samples * holdout_fraction)))
    cols = _sample_relation_inputs(model, n_samples + n_hold, ranges, rng)
    phi = model._reference_phi()
    targets = np.asarray(
        reference_relation(model.variant.substitutes, cols, phi, model.constants), dtype=float
    )
    x = model.network_input(cols)
    t_scaled = targets / model.out_scale
    x_train, x_hold = x[:n_samples], x[n_samples:]
    t_train, t_hold = t_scaled[:n_samples], t_scaled[n_samples:]

    leaves = [*model._weight_leaves, *model._bias_leaves]
    from . import mlp as _mlp

    opt = Adam(leaves, learning_rate)
    for _ in range(epochs):
        perm = rng.permutation(n_samples)
        for start in range(0, n_samples, batch_size):
            idx = perm[start : start + batch_size]
            pred = _mlp.forward(model._weight_leaves, model._bias_leaves, ad.constant(x_train[idx]))
            res = ad.constant(t_train[idx]) - pred
            loss = ad.total(res * res) * (1.0 / idx.size)
            if not math.isfinite(float(loss.value)):
                raise TrainingError(f"pretraining diverged for {model.variant.tag}")
            ad.backward(loss)
            opt.step()

    pred_hold = ad.value_of(_mlp.forward(model._weight_leaves, model._bias_leaves, ad.constant(x_hold)))
    rms_ref = float(np.sqrt(np.mean(t_hold**2)))
    rel_rmse = float(np.sqrt(np.mean((pred_hold - t_hold) ** 2))) / max(rms_ref, 1e-30)

    for mean_w, leaf in zip(model.net_prior_means.weights, model._weight_leaves):
        mean_w[...] = leaf.value
    for mean_b, leaf in zip(model.net_prior_means.biases, model._bias_leaves):
        mean_b[...] = leaf.value

    report = PretrainReport(model.variant.tag, n_samples, epochs, rel_rmse, tolerance)
    model.training_meta["pretraining"] = {
        "seed": seed,
        "n_samples": n_samples,
        "epochs": epochs,
        "relative_rmse": rel_rmse,
    }
    if not report.within_tolerance:
        import warnings

        warnings.warn(
            f"pretrained {model.variant.tag} network misses its relation: "
            f"relative RMSE {rel_rmse:.2%} > {tolerance:.0%}",
            stacklevel=2,
        )
    return report


# -- training protocol ---------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    validation_mse: float | None = None


@dataclass
class RepetitionResult:
    repetition: int
    best_epoch: int
    best_validation_mse: float
    records: list[EpochRecord] = field(default_factory=list)


@dataclass
class TrainingReport:
    variant: str
    well_id: str
    config: TrainConfig
    noise_sigma: float
    repetitions: list[RepetitionResult]
    chosen_epochs: list[int]
    final_epochs: int
    final_records: list[EpochRecord]
    parameter_table: list[tuple[str, float, float, float]]  # name, prior mean/sigma, posterior
    network_summary: dict | None

    def to_text(self) -> str:
        lines = [
            "chokevfm-training-report 1",
            f"variant {self.variant}",
            f"well {self.well_id}",
            f"noise_sigma {self.noise_sigma!r}",
            "config "
            + " ".join(
                f"{k}={getattr(self.config, k)!r}"
                for k in (
                    "learning_rate",
                    "batch_size",
                    "max_epochs",
                    "patience",
                    "repetitions",
                    "seed",
                    "mape_alpha",
                    "validation_fraction",
                    "chunk_days",
                    "clip_norm",
                )
            ),
        ]
        for rep in self.repetitions:
            lines.append(
                f"repetition {rep.repetition} best_epoch {rep.best_epoch} "
                f"best_validation_mse {rep.best_validation_mse!r}"
            )
            for rec in rep.records:
                lines.append(
                    f"repetition {rep.repetition} epoch {rec.epoch} "
                    f"train {rec.train_loss!r} validation {rec.validation_mse!r}"
                )
        lines.append("chosen_epochs " + " ".join(str(e) for e in self.chosen_epochs))
        lines.append(f"final_epochs {self.final_epochs}")
        for rec in self.final_records:
            lines.append(f"final epoch {rec.epoch} train {rec.train_loss!r}")
        for name, mean, sigma, post in self.parameter_table:
            lines.append(
                f"parameter {name} prior_mean {mean!r} prior_sigma {sigma!r} posterior {post!r}"
            )
        if self.network_summary is not None:
            lines.append(
                "network parameters {count} l2_from_prior {l2!r}".format(
                    count=self.network_summary["count"], l2=self.network_summary["l2_from_prior"]
                )
            )
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())


def _run_epochs(
    model: HybridModel,
    cols: Mapping[str, np.ndarray],
    y: np.ndarray,
    config: TrainConfig,
    noise_sigma: float,
    rng: np.random.Generator,
    max_epochs: int,
    patience: int | None,
    val_cols: Mapping[str, np.ndarray] | None = None,
    val_y: np.ndarray | None = None,
) -> tuple[list[EpochRecord], int, float]:
    n = y.size
    opt = Adam(
        model.parameters(),
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.adam_eps,
        config.clip_norm,
    )
    records: list[EpochRecord] = []
    best_epoch, best_val = 0, math.inf
    for epoch in range(1, max_epochs + 1):
        perm = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            loss = map_loss_tensor(model, subset_columns(cols, idx), y[idx], noise_sigma, n)
            value = float(loss.value)
            if not math.isfinite(value):
                raise TrainingError(
                    f"{model.variant.tag}: non-finite loss at epoch {epoch}, "
                    f"batch {start // config.batch_size}"
                )
            ad.backward(loss)
            opt.step()
            batch_losses.append(value)
        record = EpochRecord(epoch, float(np.mean(batch_losses)))
        if val_y is not None:
            pred = ad.value_of(model.predict_tensor(val_cols))
            record.validation_mse = float(np.mean((pred - val_y) ** 2))
            if not math.isfinite(record.validation_mse):
                raise TrainingError(f"{model.variant.tag}: non-finite validation error at epoch {epoch}")
            if record.validation_mse < best_val:
                best_val = record.validation_mse
                best_epoch = epoch
        records.append(record)
        if patience is not None and val_y is not None and epoch - best_epoch >= patience:
            break
    return records, best_epoch, best_val


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def fit(model: HybridModel, dataset: WellDataset, config: TrainConfig) -> TrainingReport:
    """Train `model` on the dataset's training window; returns the report.

    Protocol: for each repetition, two-week validation chunks are drawn
    afresh (seeded by the repetition index), the model is trained from its
    initial state on the remaining samples, and the epoch with the lowest
    validation MSE is recorded under patience-based early stopping. The
    final model is retrained on the whole training window for the rounded
    average of those epochs (at least one).
    """
    config.validate()
    if dataset.partition is None:
        raise ConfigurationError("dataset must be partitioned before fitting")
    region = dataset.partition != "test"
    if not np.any(region):
        raise ConfigurationError("dataset has no training samples")
    cols_all = dataset.model_columns()
    region_idx = np.flatnonzero(region)
    cols = subset_columns(cols_all, region_idx)
    y = dataset.columns["q_o"][region_idx]
    t = dataset.columns["timestamp"][region_idx]
    noise_sigma = noise_sigma_from_mape(config.mape_alpha, y)

    initial_state = model.parameter_state()
    chunk_seconds = config.chunk_days * DAY_SECONDS
    reps: list[RepetitionResult] = []
    for r in range(config.repetitions):
        if config.validation_fraction > 0.0:
            val_mask = draw_validation_chunks(
                t, config.validation_fraction, chunk_seconds, seed=[config.seed, r, 101]
            )
        else:
            val_mask = np.zeros(t.size, dtype=bool)
        train_idx = np.flatnonzero(~val_mask)
        val_idx = np.flatnonzero(val_mask)
        if train_idx.size == 0:
            raise ConfigurationError("validation draw left no training samples")
        model.restore_parameter_state(initial_state)
        rng = np.random.default_rng([config.seed, r, 202])
        if val_idx.size:
            records, best_epoch, best_val = _run_epochs(
                model,
                subset_columns(cols, train_idx),
                y[train_idx],
                config,
                noise_sigma,
                rng,
                config.max_epochs,
                config.patience,
                subset_columns(cols, val_idx),
                y[val_idx],
            )
        else:
            records, best_epoch, best_val = _run_epochs(
                model,
                subset_columns(cols, train_idx),
                y[train_idx],
                config,
                noise_sigma,
                rng,
                config.max_epochs,
                None,
            )
            best_epoch, best_val = len(records), math.nan
        reps.append(RepetitionResult(r, max(best_epoch, 1), best_val, records))

    chosen = [rep.best_epoch for rep in reps]
    final_epochs = max(1, _round_half_up(float(np.mean(chosen))))

    model.restore_parameter_state(initial_state)
    rng = np.random.default_rng([config.seed, 303])
    final_records, _, _ = _run_epochs(
        model, cols, y, config, noise_sigma, rng, final_epochs, None
    )

    table = [
        (
            name,
            model.phys[name].prior_mean,
            model.phys[name].prior_sigma,
            model.phys[name].natural,
        )
        for name in model.variant.physical
    ]
    summary = None
    if model.net is not None:
        l2 = math.sqrt(
            sum(
                float(np.sum((w.value - mw) ** 2))
                for w, mw in zip(model._weight_leaves, model.net_prior_means.weights)
            )
            + sum(
                float(np.sum((b.value - mb) ** 2))
                for b, mb in zip(model._bias_leaves, model.net_prior_means.biases)
            )
        )
        summary = {"count": model.net.parameter_count(), "l2_from_prior": l2}

    model.training_meta.update(
        {
            "seed": config.seed,
            "final_epochs": final_epochs,
            "chosen_epochs": chosen,
            "noise_sigma": noise_sigma,
            "n_train": int(y.size),
        }
    )
    return TrainingReport(
        variant=model.variant.tag,
        well_id=dataset.well_id,
        config=replace(config),
        noise_sigma=noise_sigma,
        repetitions=reps,
        chosen_epochs=chosen,
        final_epochs=final_epochs,
        final_records=final_records,
        parameter_table=table,
        network_summary=summary,
    )
