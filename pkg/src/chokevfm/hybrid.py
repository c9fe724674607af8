"""Gray-box choke models: a mechanistic skeleton with optional data-driven parts.

Seven variants share one prediction interface. MM is the plain mechanistic
model; DM is a plain feed-forward network. In between, each hybrid variant
substitutes exactly one mechanistic relation with a network ``g``:

    tag        network replaces            network inputs       dropped parameter
    HM_A2      C_D * A2(u)                 u                    c_d
    HM_RHOG1   upstream gas density        p1, t1               m_g
    HM_RHOG2   gas expansion to rho_g2     p1, p2, t1, t2       kappa (kept fixed
                                                                in the k/(k-1) factor)
    HM_RHO     mixture density             p1, p2, t1, t2,      none
                                           eta_g, eta_o
    HM_EPS     nothing; g is added to      p1, p2, t1, t2,      none
               the mechanistic output      eta_g, eta_o

Network inputs are standardized with training-set statistics stored on the
model. A substituted quantity is the network output clamped below at a small
positive floor (in scaled units) and multiplied by the magnitude the replaced
relation has at the training means, so that a unit network output is a
physically plausible value. The additive (HM_EPS) and direct (DM) outputs
are scaled by the training-target magnitude instead.

Physical parameters are estimated through the positivity transform
``phi = exp(S + zeta)``: the optimizer sees the unconstrained S while the
model always evaluates a strictly positive natural value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from . import autodiff as ad
from . import mlp
from .choke import oil_rate_expression
from .errors import ConfigurationError, ContractError, EvaluationError
from .fluids import (
    AIR_MOLAR_MASS,
    PARAMETER_NAMES,
    OperatingPoint,
    PhysicalConstants,
    z_factor_expression,
)

ARCHIVE_TAG = "chokevfm-model"
ARCHIVE_VERSION = 1

#: Explanatory variables, in canonical column order.
X_COLUMNS = ("p1", "p2", "t1", "t2", "u", "eta_g", "eta_o")

DEFAULT_ZETA = 1e-8
DEFAULT_FLOOR = 1e-6
DEFAULT_WIDTHS = (100, 100, 100)
DEFAULT_FLOOR_FRACTION_LIMIT = 0.25


@dataclass(frozen=True)
class VariantSpec:
    tag: str
    physical: tuple[str, ...]
    x_dm: tuple[str, ...]
    substitutes: str | None = None
    additive: bool = False

    @property
    def has_network(self) -> bool:
        return bool(self.x_dm)

    @property
    def pretrainable(self) -> bool:
        return self.substitutes is not None


VARIANTS: dict[str, VariantSpec] = {
    "MM": VariantSpec("MM", PARAMETER_NAMES, ()),
    "HM_A2": VariantSpec("HM_A2", ("rho_o", "rho_w", "kappa", "m_g", "p_rc"), ("u",), "cd_a2"),
    "HM_RHOG1": VariantSpec("HM_RHOG1", ("rho_o", "rho_w", "kappa", "p_rc", "c_d"), ("p1", "t1"), "rho_g1"),
    "HM_RHOG2": VariantSpec(
        "HM_RHOG2", ("rho_o", "rho_w", "m_g", "p_rc", "c_d"), ("p1", "p2", "t1", "t2"), "rho_g2"
    ),
    "HM_RHO": VariantSpec(
        "HM_RHO", PARAMETER_NAMES, ("p1", "p2", "t1", "t2", "eta_g", "eta_o"), "rho_mix"
    ),
    "HM_EPS": VariantSpec(
        "HM_EPS", PARAMETER_NAMES, ("p1", "p2", "t1", "t2", "eta_g", "eta_o"), additive=True
    ),
    "DM": VariantSpec("DM", (), X_COLUMNS),
}


def variant_tags() -> list[str]:
    return list(VARIANTS)


@dataclass
class Standardization:
    """Per-column location/scale/spread statistics of the training inputs."""

    mean: np.ndarray
    std: np.ndarray
    median: np.ndarray
    minimum: np.ndarray
    maximum: np.ndarray

    @classmethod
    def identity(cls) -> "Standardization":
        n = len(X_COLUMNS)
        return cls(np.zeros(n), np.ones(n), np.zeros(n), np.zeros(n), np.ones(n))

    @classmethod
    def from_columns(cls, cols: Mapping[str, np.ndarray]) -> "Standardization":
        stacked = np.column_stack([np.asarray(cols[c], dtype=float) for c in X_COLUMNS])
        std = stacked.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)  # constant columns pass through unscaled
        return cls(
            mean=stacked.mean(axis=0),
            std=std,
            median=np.median(stacked, axis=0),
            minimum=stacked.min(axis=0),
            maximum=stacked.max(axis=0),
        )

    def index(self, column: str) -> int:
        return X_COLUMNS.index(column)

    def standardize_column(self, column: str, values):
        i = self.index(column)
        return (values - self.mean[i]) / self.std[i]

    def median_columns(self) -> dict[str, float]:
        return {c: float(self.median[i]) for i, c in enumerate(X_COLUMNS)}


class TransformedParameter:
    """A positive physical parameter learned through phi = exp(S + zeta)."""

    def __init__(self, name: str, prior_mean: float, prior_sigma: float, zeta: float = DEFAULT_ZETA):
        if prior_mean <= 0.0 or prior_sigma <= 0.0:
            raise ConfigurationError(f"prior for {name} must have positive mean and sigma")
        self.name = name
        self.prior_mean = prior_mean
        self.prior_sigma = prior_sigma
        self.zeta = zeta
        self.s = ad.parameter(np.log(prior_mean) - zeta)

    @property
    def natural(self) -> float:
        return float(np.exp(self.s.value + self.zeta))

    def set_natural(self, value: float) -> None:
        if value <= 0.0:
            raise ConfigurationError(f"{self.name} must stay positive, got {value}")
        self.s.value[...] = np.log(value) - self.zeta

    def expression(self) -> ad.Tensor:
        return ad.exp(self.s + self.zeta)


def reference_relation(
    substitutes: str,
    cols: Mapping[str, np.ndarray],
    phi: Mapping[str, float],
    constants: PhysicalConstants,
):
    """The mechanistic relation a hybrid network replaces, evaluated directly."""
    if substitutes == "cd_a2":
        return phi["c_d"] * constants.a_max * np.asarray(cols["u"], dtype=float)
    gamma = phi["m_g"] / AIR_MOLAR_MASS
    z = z_factor_expression(cols["p1"], cols["t1"], gamma)
    rho_g1 = cols["p1"] * phi["m_g"] / (z * constants.r * cols["t1"])
    if substitutes == "rho_g1":
        return rho_g1
    p_r = np.clip(np.asarray(cols["p2"], dtype=float) / cols["p1"], phi["p_rc"], 1.0)
    rho_g2 = rho_g1 * p_r ** (1.0 / phi["kappa"])
    if substitutes == "rho_g2":
        return rho_g2
    if substitutes == "rho_mix":
        eta_g = np.asarray(cols["eta_g"], dtype=float)
        eta_o = np.asarray(cols["eta_o"], dtype=float)
        eta_w = 1.0 - eta_g - eta_o
        return 1.0 / (eta_g / rho_g2 + eta_o / phi["rho_o"] + eta_w / phi["rho_w"])
    raise ContractError(f"unknown substitution {substitutes}")


class HybridModel:
    """One choke model variant with its parameters and scalings."""

    def __init__(
        self,
        variant: VariantSpec,
        phys: dict[str, TransformedParameter],
        fixed_phys: dict[str, float],
        net: mlp.Mlp | None,
        net_prior_means: mlp.Mlp | None,
        net_prior_sigmas: list[float],
        stats: Standardization,
        constants: PhysicalConstants,
        out_scale: float = 1.0,
        y_scale: float = 1.0,
        floor: float = DEFAULT_FLOOR,
        floor_fraction_limit: float = DEFAULT_FLOOR_FRACTION_LIMIT,
        zeta: float = DEFAULT_ZETA,
    ):
        self.variant = variant
        self.phys = phys
        self.fixed_phys = fixed_phys
        self.net = net
        self.net_prior_means = net_prior_means
        self.net_prior_sigmas = net_prior_sigmas
        self.stats = stats
        self.constants = constants
        self.out_scale = out_scale
        self.y_scale = y_scale
        self.floor = floor
        self.floor_fraction_limit = floor_fraction_limit
        self.zeta = zeta
        self.training_meta: dict = {}
        if net is not None:
            self._weight_leaves = [ad.parameter(w) for w in net.weights]
            self._bias_leaves = [ad.parameter(b) for b in net.biases]
            # leaves own the arrays; keep the Mlp views in sync
            net.weights = [t.value for t in self._weight_leaves]
            net.biases = [t.value for t in self._bias_leaves]
        else:
            self._weight_leaves = []
            self._bias_leaves = []

    # -- parameter access ----------------------------------------------------

    def parameters(self) -> list[ad.Tensor]:
        leaves = [self.phys[name].s for name in self.variant.physical]
        for w, b in zip(self._weight_leaves, self._bias_leaves):
            leaves.extend((w, b))
        return leaves

    def parameter_state(self) -> list[np.ndarray]:
        return [leaf.value.copy() for leaf in self.parameters()]

    def restore_parameter_state(self, state: Iterable[np.ndarray]) -> None:
        for leaf, value in zip(self.parameters(), state):
            leaf.value[...] = value

    def physical_values(self) -> dict[str, float]:
        return {name: self.phys[name].natural for name in self.variant.physical}

    def expression_phi(self) -> dict[str, float]:
        """Full parameter dict for reference relations (fixed + current)."""
        phi = dict(self.fixed_phys)
        for name in self.variant.physical:
            phi[name] = self.phys[name].natural
        for name in PARAMETER_NAMES:
            phi.setdefault(name, np.nan)
        return phi

    # -- evaluation ----------------------------------------------------------

    def network_input(self, cols: Mapping[str, np.ndarray]) -> np.ndarray:
        columns = [
            np.asarray(self.stats.standardize_column(c, np.asarray(cols[c], dtype=float)))
            for c in self.variant.x_dm
        ]
        return np.column_stack([np.atleast_1d(c) for c in columns])

    def network_output(self, cols: Mapping[str, np.ndarray]) -> ad.Tensor:
        x = ad.constant(self.network_input(cols))
        return mlp.forward(self._weight_leaves, self._bias_leaves, x)

    def predict_tensor(self, cols: Mapping[str, np.ndarray], diag: dict | None = None) -> ad.Tensor:
        """Prediction as a differentiation-graph node over this model's leaves."""
        cols = _with_eta_w(cols)
        if self.variant.tag == "DM":
            raw = self.network_output(cols)
            if diag is not None:
                diag["net_raw"] = ad.value_of(raw)
            return self.y_scale * raw

        phi: dict = {name: self.phys[name].expression() for name in self.variant.physical}
        phi.update(self.fixed_phys)
        hooks = {}
        if self.variant.substitutes is not None:
            def substitution(c, _self=self, _diag=diag):
                raw = _self.network_output(c)
                if _diag is not None:
                    _diag["net_raw"] = ad.value_of(raw)
                return ad.maximum(raw, _self.floor) * _self.out_scale

            hooks[self.variant.substitutes] = substitution
        inter: dict = {}
        rate = oil_rate_expression(cols, phi, self.constants, hooks, intermediates=inter)
        if diag is not None:
            diag["radicand"] = ad.value_of(inter["radicand"])
            diag["p_r"] = ad.value_of(inter["p_r"])
        if self.variant.additive:
            raw = self.network_output(cols)
            if diag is not None:
                diag["net_raw"] = ad.value_of(raw)
            rate = rate + self.y_scale * raw
        return rate

    def predict(self, cols: Mapping[str, np.ndarray]) -> np.ndarray:
        """Oil-rate predictions for a batch of samples, with validity checks."""
        diag: dict = {}
        rate = ad.value_of(self.predict_tensor(cols, diag=diag))
        if not np.all(np.isfinite(rate)):
            raise EvaluationError(f"{self.variant.tag} produced non-finite predictions")
        if "radicand" in diag:
            radicand = np.atleast_1d(diag["radicand"])
            scale = max(float(np.max(np.abs(radicand))), 1.0)
            if np.any(radicand < -1e-9 * scale):
                raise EvaluationError(
                    f"negative radicand (min {radicand.min():g}) under {self.variant.tag} substitution"
                )
        if self.variant.substitutes is not None:
            raw = np.atleast_1d(diag["net_raw"])
            fraction = float(np.mean(raw <= self.floor))
            if fraction > self.floor_fraction_limit:
                raise EvaluationError(
                    f"{self.variant.tag} substitution at the positivity floor for "
                    f"{fraction:.0%} of the batch (limit {self.floor_fraction_limit:.0%})"
                )
        return np.atleast_1d(rate)

    def predict_point(self, x: OperatingPoint) -> float:
        cols = {
            "p1": np.array([x.p1]),
            "p2": np.array([x.p2]),
            "t1": np.array([x.t1]),
            "t2": np.array([x.t2]),
            "u": np.array([x.u]),
            "eta_g": np.array([x.eta_g]),
            "eta_o": np.array([x.eta_o]),
            "eta_w": np.array([x.eta_w]),
        }
        return float(self.predict(cols)[0])

    def kink_margins(self, cols: Mapping[str, np.ndarray]) -> dict[str, float]:
        """Distance of a batch from the model's non-smooth points.

        Reported margins: critical-flow clamp, unit pressure-ratio clamp,
        ReLU preactivations, substitution floor, and the radicand zero.
        Gradient-vs-finite-difference comparisons are only meaningful when
        these are not tiny.
        """
        cols = _with_eta_w(cols)
        margins: dict[str, float] = {}
        if self.variant.tag != "DM":
            raw_ratio = np.asarray(cols["p2"], dtype=float) / np.asarray(cols["p1"], dtype=float)
            p_rc = self.phys["p_rc"].natural if "p_rc" in self.phys else self.fixed_phys.get("p_rc", np.nan)
            margins["critical_clamp"] = float(np.min(np.abs(raw_ratio - p_rc)))
            margins["unit_clamp"] = float(np.min(np.abs(raw_ratio - 1.0)))
            diag: dict = {}
            self.predict_tensor(cols, diag=diag)
            radicand = np.atleast_1d(diag["radicand"])
            scale = max(float(np.max(np.abs(radicand))), 1e-30)
            margins["radicand"] = float(np.min(np.abs(radicand))) / scale
            if "net_raw" in diag:
                margins["floor"] = float(np.min(np.abs(diag["net_raw"] - self.floor)))
        if self.net is not None:
            z = self.network_input(cols)
            pre_margin = np.inf
            for i, (w, b) in enumerate(zip(self.net.weights, self.net.biases)):
                z = z @ w + b
                if i < self.net.n_layers - 1:
                    pre_margin = min(pre_margin, float(np.min(np.abs(z))))
                    z = np.where(z >= 0.0, z, 0.0)
            margins["relu"] = pre_margin
        return margins

    def subfunction_trace(self, sweep: str | None = None, grid: np.ndarray | None = None) -> dict:
        """Sweep one network input and return the learned curve.

        Returns arrays ``input`` (natural units), ``network`` (the substituted
        quantity, or the additive term for HM_EPS), and ``reference`` (the
        mechanistic relation the network stands in for; zero for HM_EPS).
        Non-swept inputs are pinned at the training medians.
        """
        if self.variant.tag in ("MM", "DM") or self.net is None:
            raise ContractError(f"{self.variant.tag} has no subfunction")
        if sweep is None:
            sweep = "u" if "u" in self.variant.x_dm else "p1"
        if sweep not in self.variant.x_dm:
            raise ContractError(f"{sweep} is not an input of {self.variant.tag}")
        if grid is None:
            i = self.stats.index(sweep)
            lo, hi = self.stats.minimum[i], self.stats.maximum[i]
            grid = np.linspace(lo, hi, 101)
        grid = np.asarray(grid, dtype=float)
        medians = self.stats.median_columns()
        cols = {c: np.full(grid.shape, medians[c]) for c in X_COLUMNS}
        cols[sweep] = grid
        cols = _with_eta_w(cols)
        raw = ad.value_of(self.network_output(cols))
        if self.variant.additive:
            network = self.y_scale * raw
            reference = np.zeros_like(grid)
        else:
            network = np.where(raw >= self.floor, raw, self.floor) * self.out_scale
            reference = reference_relation(
                self.variant.substitutes, cols, self._reference_phi(), self.constants
            )
        return {"sweep": sweep, "input": grid, "network": np.atleast_1d(network), "reference": np.atleast_1d(reference)}

    def _reference_phi(self) -> dict[str, float]:
        phi = {}
        for name in PARAMETER_NAMES:
            if name in self.phys:
                phi[name] = self.phys[name].natural
            elif name in self.fixed_phys:
                phi[name] = self.fixed_phys[name]
            else:
                phi[name] = self.training_meta.get("prior_means", {}).get(name, np.nan)
        return phi

    # -- persistence -----------------------------------------------------------

    def to_archive(self) -> dict:
        payload = {
            "format": ARCHIVE_TAG,
            "version": ARCHIVE_VERSION,
            "variant": self.variant.tag,
            "zeta": self.zeta,
            "constants": {
                "rho_o_sc": self.constants.rho_o_sc,
                "rho_g_sc": self.constants.rho_g_sc,
                "rho_w_sc": self.constants.rho_w_sc,
                "a_max": self.constants.a_max,
                "r": self.constants.r,
            },
            "physical": {
                name: {
                    "s": float(self.phys[name].s.value),
                    "natural": self.phys[name].natural,
                    "prior_mean": self.phys[name].prior_mean,
                    "prior_sigma": self.phys[name].prior_sigma,
                }
                for name in self.variant.physical
            },
            "fixed_physical": dict(self.fixed_phys),
            "standardization": {
                "columns": list(X_COLUMNS),
                "mean": self.stats.mean.tolist(),
                "std": self.stats.std.tolist(),
                "median": self.stats.median.tolist(),
                "minimum": self.stats.minimum.tolist(),
                "maximum": self.stats.maximum.tolist(),
            },
            "scales": {
                "out_scale": self.out_scale,
                "y_scale": self.y_scale,
                "floor": self.floor,
                "floor_fraction_limit": self.floor_fraction_limit,
            },
            "training": self.training_meta,
            "network": None,
        }
        if self.net is not None:
            payload["network"] = {
                "seed": self.net.seed,
                "widths": list(self.net.widths),
                "weights": [w.tolist() for w in self.net.weights],
                "biases": [b.tolist() for b in self.net.biases],
                "prior_mean_weights": [w.tolist() for w in self.net_prior_means.weights],
                "prior_mean_biases": [b.tolist() for b in self.net_prior_means.biases],
                "prior_sigmas": list(self.net_prior_sigmas),
            }
        return payload

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_archive(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_archive(cls, payload: dict) -> "HybridModel":
        if payload.get("format") != ARCHIVE_TAG:
            raise ConfigurationError("not a model archive")
        if payload.get("version") != ARCHIVE_VERSION:
            raise ConfigurationError(f"unsupported model archive version {payload.get('version')}")
        variant = VARIANTS[payload["variant"]]
        zeta = payload["zeta"]
        constants = PhysicalConstants(**payload["constants"])
        phys = {}
        for name, rec in payload["physical"].items():
            tp = TransformedParameter(name, rec["prior_mean"], rec["prior_sigma"], zeta)
            tp.s.value[...] = rec["s"]
            phys[name] = tp
        stats_rec = payload["standardization"]
        stats = Standardization(
            mean=np.array(stats_rec["mean"]),
            std=np.array(stats_rec["std"]),
            median=np.array(stats_rec["median"]),
            minimum=np.array(stats_rec["minimum"]),
            maximum=np.array(stats_rec["maximum"]),
        )
        net = None
        prior_means = None
        prior_sigmas: list[float] = []
        if payload["network"] is not None:
            rec = payload["network"]
            net = mlp.Mlp(
                widths=list(rec["widths"]),
                weights=[np.array(w) for w in rec["weights"]],
                biases=[np.array(b) for b in rec["biases"]],
                seed=rec["seed"],
            )
            prior_means = mlp.Mlp(
                widths=list(rec["widths"]),
                weights=[np.array(w) for w in rec["prior_mean_weights"]],
                biases=[np.array(b) for b in rec["prior_mean_biases"]],
                seed=rec["seed"],
            )
            prior_sigmas = [float(s) for s in rec["prior_sigmas"]]
        scales = payload["scales"]
        model = cls(
            variant=variant,
            phys=phys,
            fixed_phys={k: float(v) for k, v in payload["fixed_physical"].items()},
            net=net,
            net_prior_means=prior_means,
            net_prior_sigmas=prior_sigmas,
            stats=stats,
            constants=constants,
            out_scale=scales["out_scale"],
            y_scale=scales["y_scale"],
            floor=scales["floor"],
            floor_fraction_limit=scales["floor_fraction_limit"],
            zeta=zeta,
        )
        model.training_meta = payload.get("training", {})
        return model

    @classmethod
    def load(cls, path) -> "HybridModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_archive(json.load(fh))


def _with_eta_w(cols: Mapping[str, np.ndarray]) -> dict:
    if "eta_w" in cols:
        return dict(cols)
    out = dict(cols)
    out["eta_w"] = 1.0 - np.asarray(cols["eta_g"], dtype=float) - np.asarray(cols["eta_o"], dtype=float)
    return out


def build(
    variant_tag: str,
    priors: Mapping[str, tuple[float, float]],
    seed: int,
    *,
    stats: Standardization | None = None,
    constants: PhysicalConstants | None = None,
    widths: tuple[int, ...] = DEFAULT_WIDTHS,
    y_scale: float = 1.0,
    zeta: float = DEFAULT_ZETA,
    floor: float = DEFAULT_FLOOR,
) -> HybridModel:
    """Assemble a model variant with parameters at their prior means.

    `priors` maps each physical parameter name to ``(mean, sigma)`` in
    natural units; every parameter the variant estimates (and any it keeps
    fixed) must be present. The network, when the variant has one, is drawn
    by He initialization from `seed`; pretraining (see
    :func:`chokevfm.estimation.pretrain_network`) later replaces both its
    values and its prior means.
    """
    if variant_tag not in VARIANTS:
        raise ConfigurationError(
            f"unknown variant {variant_tag!r}; valid tags: {', '.join(VARIANTS)}"
        )
    variant = VARIANTS[variant_tag]
    constants = constants or PhysicalConstants()
    stats = stats or Standardization.identity()

    needed = {"rho_o", "rho_w", "kappa", "p_rc"}
    if variant.substitutes != "rho_g1":
        needed.add("m_g")
    if variant.substitutes != "cd_a2":
        needed.add("c_d")
    if variant.tag == "DM":
        needed = set()

    missing = sorted((set(variant.physical) | needed) - set(priors))
    if missing:
        raise ConfigurationError(f"missing prior for parameter(s): {', '.join(missing)}")

    phys = {
        name: TransformedParameter(name, priors[name][0], priors[name][1], zeta)
        for name in variant.physical
    }
    fixed = {name: float(priors[name][0]) for name in needed - set(variant.physical)}

    net = None
    prior_means = None
    prior_sigmas: list[float] = []
    if variant.has_network:
        layer_widths = [len(variant.x_dm), *widths, 1]
        net = mlp.he_initialize(layer_widths, seed)
        prior_means = mlp.zero_network(layer_widths)
        prior_sigmas = mlp.layer_sigmas(layer_widths)

    out_scale = 1.0
    if variant.substitutes is not None:
        mean_cols = {c: np.array([stats.mean[i]]) for i, c in enumerate(X_COLUMNS)}
        phi_prior = {name: priors[name][0] for name in priors}
        ref = reference_relation(variant.substitutes, _with_eta_w(mean_cols), phi_prior, constants)
        ref_value = float(np.atleast_1d(ref)[0])
        out_scale = ref_value if np.isfinite(ref_value) and ref_value > 0.0 else 1.0

    model = HybridModel(
        variant=variant,
        phys=phys,
        fixed_phys=fixed,
        net=net,
        net_prior_means=prior_means,
        net_prior_sigmas=prior_sigmas,
        stats=stats,
        constants=constants,
        out_scale=out_scale,
        y_scale=y_scale,
        floor=floor,
        zeta=zeta,
    )
    model.training_meta = {"build_seed": seed, "prior_means": {k: v[0] for k, v in priors.items()}}
    return model
