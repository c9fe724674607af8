"""Synthetic well histories with controllable physics mismatch.

The generator produces nonstationary, noisy production histories from a
"true" choke whose physics is deliberately richer than the estimation
model:

  * the valve trim can be nonlinear (square-root quick-opening or
    equal-percentage curves instead of linear),
  * gas compressibility can deviate from the Papay correlation,
  * the oil density can depend on temperature.

Each deviation is independently switchable so a hybrid variant can be
tested against exactly the mismatch its network is meant to absorb.

Operation mimics a depleting reservoir: the upstream pressure declines at a
constant rate, optionally reduced in proportion to the produced rate (a
crude inflow coupling that reproduces the negative pressure/rate correlation
of wellbore-dominated data). A rate-hold controller opens the choke in
proportional steps to keep the oil rate in a setpoint band, so the operating
point drifts through the valve curve over the simulated life.

Measurement noise is multiplicative Gaussian per channel, scaled so a
channel with MAPE ``alpha`` shows a mean absolute relative deviation of
``alpha`` (sigma = sqrt(pi/2) * alpha), truncated at five sigma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Mapping

import numpy as np

from .choke import oil_rate_expression
from .errors import ConfigurationError, IngestionError
from .fluids import AIR_MOLAR_MASS, PhysicalConstants, z_factor_expression

SCENARIO_TAG = "chokevfm-scenario"
SCENARIO_VERSION = 1

DAY_SECONDS = 86400.0
YEAR_SECONDS = 365.0 * DAY_SECONDS

#: Joule-Thomson-like cooling across the choke, K per Pa of pressure drop.
CHOKE_COOLING_K_PER_PA = 3e-6

AREA_CURVES = ("linear", "quick_opening", "equal_percentage")
Z_MODES = ("papay", "nonideal")
DENSITY_MODES = ("constant", "temperature")
CONTROL_MODES = ("rate_hold", "fixed")


@dataclass
class WellScenario:
    """Everything that defines one synthetic well, including its seed."""

    seed: int = 0
    duration_days: float = 365.0
    sampling_minutes: float = 20.0
    control_interval_hours: float = 24.0

    # boundary conditions and depletion
    p1_initial: float = 1.5e7  # Pa
    decline_pa_per_day: float = 0.0
    wellbore_coupling: float = 0.0  # Pa reduction per (m3/s) of true oil rate
    p2: float = 3.0e6  # Pa, separator side
    t1: float = 355.0  # K
    t1_seasonal_amplitude: float = 0.0  # K, annual cycle

    # choke operation
    control_mode: str = "rate_hold"
    u_initial: float = 0.35
    rate_setpoint: float = 0.015  # m3/s oil at SC
    rate_band: float = 0.001
    controller_gain: float = 0.05
    u_dither: float = 0.0  # uniform +- dither applied at control updates

    # composition (mass fractions; oil takes the remainder)
    eta_g: float = 0.08
    eta_w_start: float = 0.2
    eta_w_end: float = 0.2

    # true physics selection
    area_curve: str = "linear"
    z_mode: str = "papay"
    liquid_density_mode: str = "constant"

    # true parameter values
    rho_o_true: float = 810.0
    rho_w_true: float = 1015.0
    kappa_true: float = 1.27
    m_g_true: float = 0.0185
    p_rc_true: float = 0.62
    c_d_true: float = 0.82
    a_max_true: float = 2e-3
    oil_expansion_per_k: float = 8e-4  # relative density loss per K above 288.15

    # measurement noise (MAPE per channel)
    noise_flow: float = 0.0
    noise_pressure: float = 0.0
    noise_temperature: float = 0.0

    def validate(self) -> "WellScenario":
        for name in ("duration_days", "sampling_minutes", "control_interval_hours", "p1_initial", "p2", "t1"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"scenario field {name} must be positive")
        for name in ("noise_flow", "noise_pressure", "noise_temperature", "u_dither",
                     "decline_pa_per_day", "wellbore_coupling", "rate_band"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"scenario field {name} must be nonnegative")
        if not 0.0 <= self.u_initial <= 1.0:
            raise ConfigurationError("u_initial must lie in [0, 1]")
        if self.area_curve not in AREA_CURVES:
            raise ConfigurationError(f"area_curve must be one of {AREA_CURVES}")
        if self.z_mode not in Z_MODES:
            raise ConfigurationError(f"z_mode must be one of {Z_MODES}")
        if self.liquid_density_mode not in DENSITY_MODES:
            raise ConfigurationError(f"liquid_density_mode must be one of {DENSITY_MODES}")
        if self.control_mode not in CONTROL_MODES:
            raise ConfigurationError(f"control_mode must be one of {CONTROL_MODES}")
        if self.eta_g < 0 or self.eta_w_start < 0 or self.eta_w_end < 0:
            raise ConfigurationError("mass fractions must be nonnegative")
        if self.eta_g + max(self.eta_w_start, self.eta_w_end) >= 1.0:
            raise ConfigurationError("gas plus water fraction must leave room for oil")
        return self


def save_scenario(scenario: WellScenario, path) -> None:
    lines = [f"# {SCENARIO_TAG} {SCENARIO_VERSION}"]
    for f in fields(WellScenario):
        lines.append(f"{f.name} = {getattr(scenario, f.name)!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_scenario(path) -> WellScenario:
    """Parse the ``key = value`` scenario format (# starts a comment)."""
    known = {f.name: f.type for f in fields(WellScenario)}
    values: dict = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise IngestionError(f"expected 'key = value', got {text!r}", row=line_no)
            key, raw = (part.strip() for part in text.split("=", 1))
            if key not in known:
                raise IngestionError(f"unknown scenario field {key!r}", row=line_no)
            default = getattr(WellScenario(), key)
            try:
                if isinstance(default, str):
                    values[key] = raw.strip("'\"")
                elif isinstance(default, int) and not isinstance(default, bool):
                    values[key] = int(raw)
                else:
                    values[key] = float(raw)
            except ValueError as exc:
                raise IngestionError(f"unparseable value for {key}: {raw!r}", row=line_no) from exc
    return WellScenario(**values).validate()


def rate_hold_controller(
    u: float, q_o: float, setpoint: float, band: float, gain: float
) -> float:
    """Proportional choke adjustment holding the oil rate in a band."""
    if q_o < setpoint - band:
        u = u + gain * (setpoint - q_o) / setpoint
    elif q_o > setpoint + band:
        u = u - gain * (q_o - setpoint) / setpoint
    return min(max(u, 0.0), 1.0)


def true_cd_a2(u, scenario: WellScenario):
    """Discharge coefficient times the true (possibly nonlinear) trim curve."""
    u = np.asarray(u, dtype=float)
    if scenario.area_curve == "linear":
        curve = u
    elif scenario.area_curve == "quick_opening":
        curve = np.sqrt(u)
    else:  # equal_percentage, rangeability 50
        curve = 50.0 ** (u - 1.0)
    return scenario.c_d_true * scenario.a_max_true * curve


def true_z(p, t, gamma, scenario: WellScenario):
    """True gas compressibility; "nonideal" bends away from the correlation."""
    z = z_factor_expression(p, t, gamma)
    if scenario.z_mode == "papay":
        return z
    from .fluids import sutton_pseudo_critical

    p_pc, t_pc = sutton_pseudo_critical(gamma)
    s = (p / p_pc) / (t / t_pc)
    return z * (1.0 - 0.22 * s + 0.045 * s * s)


def true_rho_o(t1, scenario: WellScenario):
    if scenario.liquid_density_mode == "constant":
        return np.full_like(np.asarray(t1, dtype=float), scenario.rho_o_true)
    return scenario.rho_o_true * (1.0 - scenario.oil_expansion_per_k * (np.asarray(t1) - 288.15))


def _true_oil_rate(cols: Mapping[str, np.ndarray], scenario: WellScenario, constants: PhysicalConstants):
    """Vectorized true oil rate for given boundary conditions."""
    gamma = scenario.m_g_true / AIR_MOLAR_MASS
    hooks = {
        "cd_a2": lambda c: true_cd_a2(c["u"], scenario),
        "rho_g1": lambda c: c["p1"]
        * scenario.m_g_true
        / (true_z(c["p1"], c["t1"], gamma, scenario) * constants.r * c["t1"]),
    }
    rho_o = true_rho_o(cols["t1"], scenario)
    phi = {
        "rho_o": rho_o,
        "rho_w": scenario.rho_w_true,
        "kappa": scenario.kappa_true,
        "m_g": scenario.m_g_true,
        "p_rc": scenario.p_rc_true,
        "c_d": scenario.c_d_true,
    }
    return oil_rate_expression(cols, phi, constants, hooks)


def _noise_factor(rng: np.random.Generator, alpha: float, n: int) -> np.ndarray:
    if alpha <= 0.0:
        return np.ones(n)
    sigma = math.sqrt(math.pi / 2.0) * alpha
    e = np.clip(rng.normal(0.0, sigma, size=n), -5.0 * sigma, 5.0 * sigma)
    return 1.0 + e


def simulate(
    scenario: WellScenario,
    duration_days: float | None = None,
    constants: PhysicalConstants | None = None,
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Generate one well history; deterministic for a given scenario.

    Returns ``(measured, truth)``: `measured` has the pipeline CSV columns
    with noise applied, `truth` carries the noise-free rates and boundary
    conditions for calibration checks.
    """
    scenario.validate()
    constants = constants or PhysicalConstants(
        a_max=scenario.a_max_true  # the shared geometry, not a model choice
    )
    duration = (duration_days if duration_days is not None else scenario.duration_days) * DAY_SECONDS
    dt = scenario.sampling_minutes * 60.0
    n = int(duration // dt)
    if n < 2:
        raise ConfigurationError("scenario duration must cover at least two samples")
    t = np.arange(n, dtype=float) * dt

    p1_base = scenario.p1_initial - scenario.decline_pa_per_day * (t / DAY_SECONDS)
    t1 = scenario.t1 + scenario.t1_seasonal_amplitude * np.sin(2.0 * math.pi * t / YEAR_SECONDS)
    frac = t / t[-1] if t[-1] > 0 else np.zeros_like(t)
    eta_w = scenario.eta_w_start + (scenario.eta_w_end - scenario.eta_w_start) * frac
    eta_g = np.full(n, scenario.eta_g)
    eta_o = 1.0 - eta_g - eta_w

    rng = np.random.default_rng([scenario.seed, 5117])
    block = max(1, int(round(scenario.control_interval_hours * 3600.0 / dt)))
    u = np.empty(n)
    p1_true = np.empty(n)
    q_o_true = np.empty(n)

    u_now = scenario.u_initial
    start = 0
    while start < n:
        stop = min(start + block, n)
        sl = slice(start, stop)
        if scenario.u_dither > 0.0:
            u_now = min(max(u_now + rng.uniform(-scenario.u_dither, scenario.u_dither), 0.0), 1.0)
        u[sl] = u_now
        cols = {
            "p1": p1_base[sl],
            "p2": np.full(stop - start, scenario.p2),
            "t1": t1[sl],
            "t2": t1[sl],  # placeholder; cooling applied below
            "u": u[sl],
            "eta_g": eta_g[sl],
            "eta_o": eta_o[sl],
            "eta_w": eta_w[sl],
        }
        p1_block = p1_base[sl].copy()
        if scenario.wellbore_coupling > 0.0:
            # damped fixed point of p1 = p1_base - coupling * q(p1, ...)
            for _ in range(20):
                cols["p1"] = p1_block
                q = np.asarray(_true_oil_rate(cols, scenario, constants))
                target = np.maximum(p1_base[sl] - scenario.wellbore_coupling * q, scenario.p2)
                p1_block = 0.5 * p1_block + 0.5 * target
            cols["p1"] = p1_block
        q_block = np.asarray(_true_oil_rate(cols, scenario, constants))
        p1_true[sl] = p1_block
        q_o_true[sl] = q_block
        if scenario.control_mode == "rate_hold":
            u_now = rate_hold_controller(
                u_now,
                float(q_block[-1]),
                scenario.rate_setpoint,
                scenario.rate_band,
                scenario.controller_gain,
            )
        start = stop

    t2_true = t1 - CHOKE_COOLING_K_PER_PA * np.maximum(p1_true - scenario.p2, 0.0)
    m_dot = np.where(eta_o > 0, q_o_true * constants.rho_o_sc / np.where(eta_o > 0, eta_o, 1.0), 0.0)
    q_g_true = eta_g * m_dot / constants.rho_g_sc
    q_w_true = eta_w * m_dot / constants.rho_w_sc

    measured = {
        "timestamp": t + 1577836800.0,  # anchor: 2020-01-01T00:00:00Z
        "p1": p1_true * _noise_factor(rng, scenario.noise_pressure, n),
        "p2": np.full(n, scenario.p2) * _noise_factor(rng, scenario.noise_pressure, n),
        "t1": t1 * _noise_factor(rng, scenario.noise_temperature, n),
        "t2": t2_true * _noise_factor(rng, scenario.noise_temperature, n),
        "u": u,
        "q_o": q_o_true * _noise_factor(rng, scenario.noise_flow, n),
        "q_g": q_g_true * _noise_factor(rng, scenario.noise_flow, n),
        "q_w": q_w_true * _noise_factor(rng, scenario.noise_flow, n),
    }
    truth = {
        "timestamp": measured["timestamp"],
        "p1": p1_true,
        "t2": t2_true,
        "q_o": q_o_true,
        "q_g": q_g_true,
        "q_w": q_w_true,
        "u": u,
        "eta_g": eta_g,
        "eta_o": eta_o,
        "eta_w": eta_w,
    }
    return measured, truth
