"""Steady-state multiphase choke flow after Sachdeva et al. (1986).

The model treats the choke as a lumped restriction with no-slip homogeneous
flow, incompressible liquid phases, frozen mass fractions, and adiabatic gas
expansion. Mass flow through the effective area A2(u) is

    m_dot = C_D * A2(u) * sqrt( 2 * rho2^2 * p1 * [ k/(k-1) * eta_g *
            (1/rho_g1 - p_r/rho_g2) + (eta_o/rho_o + eta_w/rho_w) * (1 - p_r) ] )

with the pressure ratio p_r = p2/p1 clamped below at the critical boundary
p_rc (mass flow is insensitive to downstream pressure in critical flow) and
above at 1 (a reversed pressure differential yields zero flow rather than a
complex root). The clamp keeps the model continuous; at the critical kink
the subcritical one-sided derivative is used.

A2(u) = A_max * u is the simplest monotone trim curve; the discharge
coefficient C_D absorbs calibration error, as usual for orifice models.

:func:`oil_rate_expression` is shared by every consumer of the physics: the
plain mechanistic model, the hybrid variants (which pass substitution hooks
backed by neural networks), and the synthetic generator (which passes hooks
with richer "true" physics). It accepts floats, numpy arrays, or autodiff
Tensors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import autodiff as ad
from .errors import DomainError, EvaluationError
from .fluids import (
    AIR_MOLAR_MASS,
    OperatingPoint,
    PhysicalParameters,
    z_factor_expression,
)

__all__ = [
    "PressureRatio",
    "ChokeFlowResult",
    "pressure_ratio",
    "area_function",
    "oil_rate_expression",
    "mass_flow_rate",
    "predict_oil_rate",
]

#: Residual radicand below this (relative to its positive part) is treated as
#: corrupted rather than roundoff.
RADICAND_TOL = 1e-12


class PressureRatio(NamedTuple):
    ratio: float
    critical: bool
    no_driving_force: bool


@dataclass
class ChokeFlowResult:
    """Mass flow and the intermediate quantities behind it."""

    m_dot: float  # kg/s
    p_r_effective: float  # clamped pressure ratio
    critical: bool
    rho_2: float  # downstream mixture density, kg/m3
    q_o: float  # oil volumetric rate at SC, m3/s


def pressure_ratio(p1: float, p2: float, p_rc: float) -> PressureRatio:
    """Downstream/upstream pressure ratio with the critical-flow clamp.

    Ratios below `p_rc` are critical and clamp to `p_rc`; ratios above 1
    (reversed differential) clamp to 1 and are flagged as having no driving
    force.
    """
    if p1 <= 0.0:
        raise DomainError(f"p1 must be positive, got {p1}")
    if p2 < 0.0:
        raise DomainError(f"p2 must be nonnegative, got {p2}")
    raw = p2 / p1
    critical = raw < p_rc
    no_driving_force = raw > 1.0
    return PressureRatio(min(max(raw, p_rc), 1.0), critical, no_driving_force)


def area_function(u, a_max):
    """Effective flow area A2 = A_max * u, m2."""
    u_arr = np.asarray(u)
    if np.any(u_arr < 0.0) or np.any(u_arr > 1.0):
        raise DomainError(f"choke opening must lie in [0, 1], got {u}")
    return a_max * u


def _build_expression(cols, phi, constants, hooks):
    """Assemble the mass-flow expression, honoring substitution hooks.

    `cols` maps column names (p1, p2, t1, t2, u, eta_g, eta_o, eta_w) to
    values; `phi` maps parameter names to values (missing entries must be
    covered by hooks); `hooks` maps {"cd_a2", "rho_g1", "rho_g2", "rho_mix"}
    to callables of `cols` returning the substituted quantity.
    """
    p1, p2, t1 = cols["p1"], cols["p2"], cols["t1"]
    eta_g, eta_o, eta_w = cols["eta_g"], cols["eta_o"], cols["eta_w"]
    kappa = phi["kappa"]

    p_r = ad.minimum(ad.maximum(p2 / p1, phi["p_rc"]), 1.0)

    if "rho_g1" in hooks:
        rho_g1 = hooks["rho_g1"](cols)
    else:
        gamma = phi["m_g"] / AIR_MOLAR_MASS
        z = z_factor_expression(p1, t1, gamma)
        rho_g1 = p1 * phi["m_g"] / (z * constants.r * t1)

    if "rho_g2" in hooks:
        rho_g2 = hooks["rho_g2"](cols)
    else:
        rho_g2 = rho_g1 * ad.power(p_r, 1.0 / kappa)

    liquid_volume = eta_o / phi["rho_o"] + eta_w / phi["rho_w"]
    if "rho_mix" in hooks:
        rho_2 = hooks["rho_mix"](cols)
    else:
        rho_2 = 1.0 / (eta_g / rho_g2 + liquid_volume)

    if "cd_a2" in hooks:
        cd_a2 = hooks["cd_a2"](cols)
    else:
        cd_a2 = phi["c_d"] * (constants.a_max * cols["u"])

    gas_term = (kappa / (kappa - 1.0)) * eta_g * (1.0 / rho_g1 - p_r / rho_g2)
    radicand = 2.0 * rho_2 * rho_2 * p1 * (gas_term + liquid_volume * (1.0 - p_r))
    # Substituted relations can drive the radicand negative; evaluate on the
    # clamped value and let callers inspect the raw one.
    m_dot = cd_a2 * ad.sqrt(ad.maximum(radicand, 0.0))
    return {
        "p_r": p_r,
        "rho_g1": rho_g1,
        "rho_g2": rho_g2,
        "rho_2": rho_2,
        "cd_a2": cd_a2,
        "radicand": radicand,
        "m_dot": m_dot,
    }


def oil_rate_expression(
    cols,
    phi,
    constants,
    hooks: dict[str, Callable] | None = None,
    intermediates: dict | None = None,
):
    """Oil volumetric rate at standard conditions, m3/s.

    Pass a dict as `intermediates` to receive the internal quantities
    (pressure ratio, densities, radicand, mass flow) of the evaluation.
    """
    parts = _build_expression(cols, phi, constants, hooks or {})
    parts["q_o"] = cols["eta_o"] * parts["m_dot"] / constants.rho_o_sc
    if intermediates is not None:
        intermediates.update(parts)
    return parts["q_o"]


def _point_columns(x: OperatingPoint) -> dict[str, float]:
    return {
        "p1": x.p1,
        "p2": x.p2,
        "t1": x.t1,
        "t2": x.t2,
        "u": x.u,
        "eta_g": x.eta_g,
        "eta_o": x.eta_o,
        "eta_w": x.eta_w,
    }


def mass_flow_rate(x: OperatingPoint, params: PhysicalParameters) -> ChokeFlowResult:
    """Evaluate the choke model at one operating point."""
    x.validate()
    params.validate()
    area_function(x.u, params.constants.a_max)
    inter: dict = {}
    q_o = oil_rate_expression(_point_columns(x), params.as_dict(), params.constants, intermediates=inter)
    radicand = float(inter["radicand"])
    if radicand < -RADICAND_TOL * abs(float(inter["rho_2"]) ** 2 * x.p1 * 2.0):
        raise EvaluationError(f"negative radicand {radicand} in choke flow expression")
    raw_ratio = x.p2 / x.p1
    return ChokeFlowResult(
        m_dot=float(inter["m_dot"]),
        p_r_effective=float(inter["p_r"]),
        critical=raw_ratio < params.p_rc,
        rho_2=float(inter["rho_2"]),
        q_o=float(q_o),
    )


def predict_oil_rate(x: OperatingPoint, params: PhysicalParameters) -> float:
    """Oil volumetric flow rate at standard conditions, m3/s."""
    return mass_flow_rate(x, params).q_o
