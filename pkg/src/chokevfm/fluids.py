"""Phase-level thermodynamic relations for choke flow modeling.

All quantities are SI: pressures in Pa, temperatures in K, densities in
kg/m3, molar mass in kg/mol, volumetric rates in m3/s at standard conditions
(101325 Pa, 288.15 K).

Gas compressibility uses the Sutton (1985) pseudo-critical correlations for
a gas of given specific gravity together with the explicit Papay (1968)
Z-factor formula. Papay needs no iterative solve and is smooth in pressure,
temperature, and specific gravity, which keeps the whole model analytically
differentiable:

    p_pc [psia] = 756.8 - 131.0*g - 3.6*g^2
    T_pc [degR] = 169.2 + 349.5*g - 74.0*g^2
    Z = 1 - 3.53*p_pr/10^(0.9813*T_pr) + 0.274*p_pr^2/10^(0.8157*T_pr)
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import DomainError, ValidationError

UNIVERSAL_GAS_CONSTANT = 8.314  # J/(mol K)
AIR_MOLAR_MASS = 0.028964  # kg/mol
STANDARD_PRESSURE = 101325.0  # Pa
STANDARD_TEMPERATURE = 288.15  # K
PASCAL_PER_PSI = 6894.757293168
RANKINE_PER_KELVIN = 1.8

GRAVITY_MIN = 0.55
GRAVITY_MAX = 1.5

FRACTION_CLOSURE_TOL = 1e-6

LN10 = float(np.log(10.0))


@dataclass(frozen=True)
class PhysicalConstants:
    """Fixed constants of the choke model; not estimated from data."""

    rho_o_sc: float = 850.0  # stock-tank oil density, kg/m3
    rho_g_sc: float = 0.80  # gas density at standard conditions, kg/m3
    rho_w_sc: float = 1000.0  # water density at standard conditions, kg/m3
    a_max: float = 2e-3  # effective flow area at full choke opening, m2
    r: float = UNIVERSAL_GAS_CONSTANT


#: Estimable parameter names, in canonical order.
PARAMETER_NAMES = ("rho_o", "rho_w", "kappa", "m_g", "p_rc", "c_d")


@dataclass
class PhysicalParameters:
    """The estimable parameter set of the mechanistic choke model."""

    rho_o: float = 780.0  # oil density at choke conditions, kg/m3
    rho_w: float = 1020.0  # produced-water density, kg/m3
    kappa: float = 1.3  # isentropic gas expansion exponent
    m_g: float = 0.019  # gas molar mass, kg/mol
    p_rc: float = 0.6  # critical pressure-ratio boundary
    c_d: float = 0.84  # discharge coefficient
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)

    def validate(self) -> "PhysicalParameters":
        for name in PARAMETER_NAMES:
            if getattr(self, name) <= 0.0:
                raise DomainError(f"physical parameter {name} must be positive")
        if not 0.0 < self.p_rc < 1.0:
            raise DomainError(f"p_rc must lie in (0, 1), got {self.p_rc}")
        if self.kappa <= 1.0:
            raise DomainError(f"kappa must exceed 1, got {self.kappa}")
        return self

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in PARAMETER_NAMES}

    def with_values(self, values: dict[str, float]) -> "PhysicalParameters":
        return replace(self, **values)

    @property
    def gas_specific_gravity(self) -> float:
        return self.m_g / AIR_MOLAR_MASS


@dataclass
class OperatingPoint:
    """One steady-state sample of choke boundary conditions and rates."""

    timestamp: float  # seconds since epoch
    p1: float  # upstream pressure, Pa
    p2: float  # downstream pressure, Pa
    t1: float  # upstream temperature, K
    t2: float  # downstream temperature, K
    u: float  # choke opening, fraction of full travel
    eta_g: float = 0.0  # gas mass fraction
    eta_o: float = 0.0  # oil mass fraction
    eta_w: float = 0.0  # water mass fraction
    q_o: float = 0.0  # oil volumetric rate at SC, m3/s
    q_g: float = 0.0  # gas volumetric rate at SC, m3/s
    q_w: float = 0.0  # water volumetric rate at SC, m3/s

    def validate(self) -> "OperatingPoint":
        if self.p1 <= 0.0 or self.p2 <= 0.0:
            raise ValidationError(f"pressures must be positive (p1={self.p1}, p2={self.p2})")
        if self.t1 <= 0.0 or self.t2 <= 0.0:
            raise ValidationError(f"temperatures must be positive (t1={self.t1}, t2={self.t2})")
        if not 0.0 <= self.u <= 1.0:
            raise ValidationError(f"choke opening must lie in [0, 1], got {self.u}")
        fractions = (self.eta_g, self.eta_o, self.eta_w)
        if any(f < 0.0 for f in fractions):
            raise ValidationError(f"mass fractions must be nonnegative, got {fractions}")
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise ValidationError(f"mass fractions must sum to 1, got {sum(fractions)!r}")
        if any(q < 0.0 for q in (self.q_o, self.q_g, self.q_w)):
            raise ValidationError("volumetric rates must be nonnegative")
        return self


def sutton_pseudo_critical(gas_specific_gravity):
    """Pseudo-critical pressure [Pa] and temperature [K] of a natural gas."""
    g = gas_specific_gravity
    p_pc_psia = 756.8 - 131.0 * g - 3.6 * g * g
    t_pc_rankine = 169.2 + 349.5 * g - 74.0 * g * g
    return p_pc_psia * PASCAL_PER_PSI, t_pc_rankine / RANKINE_PER_KELVIN


def z_factor_expression(p, t, gas_specific_gravity):
    """Papay Z-factor; accepts floats, arrays, or autodiff Tensors."""
    p_pc, t_pc = sutton_pseudo_critical(gas_specific_gravity)
    p_pr = p / p_pc
    t_pr = t / t_pc
    term1 = 3.53 * p_pr * ad.exp(-0.9813 * LN10 * t_pr)
    term2 = 0.274 * p_pr * p_pr * ad.exp(-0.8157 * LN10 * t_pr)
    return 1.0 - term1 + term2


def z_factor(p: float, t: float, gas_specific_gravity: float) -> float:
    """Gas compressibility factor at pressure `p` [Pa], temperature `t` [K].

    Valid for specific gravities in [0.55, 1.5] (relative to air); tends to
    1 in the ideal-gas limit p -> 0.
    """
    if np.any(np.asarray(p) <= 0.0):
        raise DomainError("z_factor requires p > 0")
    if np.any(np.asarray(t) <= 0.0):
        raise DomainError("z_factor requires t > 0")
    g = np.asarray(gas_specific_gravity)
    if np.any(g < GRAVITY_MIN) or np.any(g > GRAVITY_MAX):
        raise DomainError(
            f"gas_specific_gravity {gas_specific_gravity} outside [{GRAVITY_MIN}, {GRAVITY_MAX}]"
        )
    z = z_factor_expression(p, t, gas_specific_gravity)
    if np.any(np.asarray(z) <= 0.0) or np.any(np.asarray(z) > 2.0):
        raise DomainError("z_factor outside (0, 2]; inputs beyond correlation validity")
    return z


def gas_density_upstream(p1, t1, params: PhysicalParameters, z=None):
    """Upstream gas density from the real gas law, kg/m3.

    `z` overrides the computed compressibility factor (z=1 gives the ideal
    gas law).
    """
    if np.any(np.asarray(p1) <= 0.0) or np.any(np.asarray(t1) <= 0.0):
        raise DomainError("gas_density_upstream requires p1 > 0 and t1 > 0")
    if z is None:
        z = z_factor(p1, t1, params.gas_specific_gravity)
    return p1 * params.m_g / (z * params.constants.r * t1)


def gas_density_downstream(rho_g1, p_r, kappa):
    """Downstream gas density after frictionless adiabatic expansion, kg/m3."""
    if np.any(np.asarray(rho_g1) <= 0.0):
        raise DomainError("gas_density_downstream requires rho_g1 > 0")
    p_r_arr = np.asarray(p_r)
    if np.any(p_r_arr <= 0.0):
        raise DomainError("gas_density_downstream requires p_r > 0")
    if np.any(p_r_arr > 1.0):
        raise DomainError("pressure ratio above 1: flow reversal is not modeled")
    return rho_g1 * np.power(p_r, 1.0 / kappa)


def mixture_density(rho_g2, fractions, params: PhysicalParameters):
    """Homogeneous no-slip mixture density from phase mass fractions, kg/m3."""
    eta_g, eta_o, eta_w = fractions
    if abs(eta_g + eta_o + eta_w - 1.0) > FRACTION_CLOSURE_TOL:
        raise ValidationError(f"mass fractions sum to {eta_g + eta_o + eta_w!r}, not 1")
    if min(eta_g, eta_o, eta_w) < 0.0:
        raise ValidationError("mass fractions must be nonnegative")
    return 1.0 / (eta_g / rho_g2 + eta_o / params.rho_o + eta_w / params.rho_w)


def lagged_mass_fractions(prev: OperatingPoint, constants: PhysicalConstants):
    """Mass fractions implied by the previous sample's measured rates.

    Converts standard-condition volumetric rates to mass rates and
    normalizes. Returns None when the previous sample carried no flow, which
    marks the dependent sample invalid.
    """
    m_o = constants.rho_o_sc * prev.q_o
    m_g = constants.rho_g_sc * prev.q_g
    m_w = constants.rho_w_sc * prev.q_w
    m_total = m_o + m_g + m_w
    if m_total <= 0.0:
        return None
    return (m_g / m_total, m_o / m_total, m_w / m_total)
