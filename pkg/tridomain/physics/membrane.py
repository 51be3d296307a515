"""
Transmembrane flux laws of the axon and glial membranes.

Every flux here is in ions per square metre per second and positive when it leaves the cell.
Functions accept scalars or numpy arrays of cells alike.
"""
from collections import namedtuple
from dataclasses import dataclass

import numpy as np
from scipy.special import exprel

from .params import AX, CL, ELEMENTARY_CHARGE, K, NA, SPECIES, VALENCE, thermal_voltage

# Na/K pump stoichiometry: 3 Na out, 2 K in per cycle.
PUMP_STOICHIOMETRY = (3, -2, 0)

# Voltage deviation in mV beyond which the rate functions are clamped; keeps exp() finite for wild Newton iterates.
_V_CLAMP = 1000.0

Rates = namedtuple("Rates", ("alpha_m", "beta_m", "alpha_h", "beta_h", "alpha_n", "beta_n"))

class NernstDomainError(ValueError):
	def __init__(self, species, side):
		super().__init__("Non-positive %s concentration on the %s side" % (species, side))
		self.species = species
		self.side = side

@dataclass(frozen=True)
class GatingState:
	"""Hodgkin-Huxley gates of the axon membrane, one value (or array of cell values) each."""
	m: object
	h: object
	n: object

	def clip(self):
		return GatingState(np.clip(self.m, 0, 1), np.clip(self.h, 0, 1), np.clip(self.n, 0, 1))

@dataclass(frozen=True)
class MembraneFlux:
	J_p: object
	J_c: object
	J_m: object

	@property
	def total(self):
		return self.J_p + self.J_c + self.J_m

@dataclass(frozen=True)
class MembraneSite:
	"""
	What the flux laws need to know about one membrane.
	c_in and c_ex are indexed by species first; V is the membrane potential phi_in - phi_ex.
	`gating` is only read for the axon.
	"""
	membrane: int
	c_in: object
	c_ex: object
	V: object
	gating: GatingState = None

FluxDerivatives = namedtuple("FluxDerivatives", ("V", "c_in", "c_ex"))

def _species_name(z, species):
	if species is not None:
		return species
	return "z=%+d" % z

def nernst_potential(c_ex, c_in, z, constants, species=None):
	"""
	Return the Nernst potential k_B*T/(z*e) * ln(c_ex/c_in) in volts.
	Raise NernstDomainError if either concentration is not positive.
	"""
	c_ex = np.asarray(c_ex, dtype=float)
	c_in = np.asarray(c_in, dtype=float)
	if np.any(c_ex <= 0):
		raise NernstDomainError(_species_name(z, species), "extracellular")
	if np.any(c_in <= 0):
		raise NernstDomainError(_species_name(z, species), "intracellular")
	return thermal_voltage(constants) / z * np.log(c_ex / c_in)

def channel_flux(g, V_m, E, z):
	return g / (z * ELEMENTARY_CHARGE) * (V_m - E)

def capacitive_flux(C_m, lambda_i, z, dVdt):
	return lambda_i * C_m / (z * ELEMENTARY_CHARGE) * dVdt

def hh_rates(V_m, V_rest=-70e-3):
	"""
	Return the six squid-axon gating rates in 1/s.
	The rate functions are written in the deviation v = V_m - V_rest in mV; the removable singularities at v = 25 and v = 10 go through exprel.
	"""
	v = np.clip((np.asarray(V_m, dtype=float) - V_rest) * 1e3, -_V_CLAMP, _V_CLAMP)
	per_ms = Rates(
		alpha_m=1 / exprel((25 - v) / 10),
		beta_m=4 * np.exp(-v / 18),
		alpha_h=0.07 * np.exp(-v / 20),
		beta_h=1 / (np.exp((30 - v) / 10) + 1),
		alpha_n=0.1 / exprel((10 - v) / 10),
		beta_n=0.125 * np.exp(-v / 80),
	)
	return Rates(*(rate * 1e3 for rate in per_ms))

def steady_state(V_m, V_rest=-70e-3):
	rates = hh_rates(V_m, V_rest)
	return GatingState(
		rates.alpha_m / (rates.alpha_m + rates.beta_m),
		rates.alpha_h / (rates.alpha_h + rates.beta_h),
		rates.alpha_n / (rates.alpha_n + rates.beta_n),
	)

def gating_step(state, V_m, dt, V_rest=-70e-3):
	"""
	Advance the gates by dt at fixed V_m with the exponential integrator x <- x_inf + (x - x_inf)*exp(-dt/tau).
	The update is exact for frozen V_m, so the result stays in [0, 1] for any dt.
	"""
	if not dt > 0:
		raise ValueError("dt must be positive")
	rates = hh_rates(V_m, V_rest)
	gates = []
	for x, alpha, beta in ((state.m, rates.alpha_m, rates.beta_m), (state.h, rates.alpha_h, rates.beta_h), (state.n, rates.alpha_n, rates.beta_n)):
		total = alpha + beta
		x_inf = alpha / total
		gates.append(x_inf + (x - x_inf) * np.exp(-dt * total))
	return GatingState(*gates).clip()

def _saturation(c_Na_in, c_K_ex, K_Na, K_K):
	na = c_Na_in / (c_Na_in + K_Na)
	k = c_K_ex / (c_K_ex + K_K)
	return na, k

def pump_current(c_Na_in, c_K_ex, I_max, K_Na=10.0, K_K=1.5):
	"""Return the net outward pump current density I_max * (c_Na/(c_Na+K_Na))^3 * (c_K/(c_K+K_K))^2 in A/m^2."""
	na, k = _saturation(c_Na_in, c_K_ex, K_Na, K_K)
	return I_max * na ** 3 * k ** 2

def pump_flux(c_Na_in, c_K_ex, I_max, K_Na=10.0, K_K=1.5):
	"""Return the (Na, K, Cl) pump fluxes: three Na out and two K in per unit of charge pumped."""
	I_p = pump_current(c_Na_in, c_K_ex, I_max, K_Na, K_K)
	return tuple(s * I_p / ELEMENTARY_CHARGE for s in PUMP_STOICHIOMETRY)

def conductances(membrane, params, gating=None):
	"""
	Return the (Na, K, Cl) channel conductances of a membrane in S/m^2.
	The axon adds the gated Na (m^3 h) and K (n^4) channels to its leaks; glia only have leaks.
	"""
	if membrane == AX:
		return (
			params.g_leak_Na + params.gbar_Na * gating.m ** 3 * gating.h,
			params.g_leak_K + params.gbar_K * gating.n ** 4,
			params.g_ax_Cl,
		)
	return (params.g_leak_Na, params.g_leak_K, params.g_gl_Cl)

def total_membrane_flux(species, site, dVdt, params, capacitive=True):
	"""Return the pump, channel and capacitive flux of one species through the membrane at `site`."""
	z = VALENCE[species]
	constants = params.constants
	g = conductances(site.membrane, params, site.gating)[species]
	E = nernst_potential(site.c_ex[species], site.c_in[species], z, constants, SPECIES[species])
	J_c = channel_flux(g, site.V, E, z)
	J_p = pump_flux(site.c_in[NA], site.c_ex[K], params.pump_strength(site.membrane), params.K_Na_pump, params.K_K_pump)[species]
	lam = params.lam[species] if capacitive else 0.0
	J_m = capacitive_flux(params.C_m, lam, z, dVdt)
	shape = np.shape(site.V)
	return MembraneFlux(J_p + np.zeros(shape), J_c + np.zeros(shape), J_m + np.zeros(shape))

def membrane_flux_table(site, dVdt, params, capacitive=True):
	"""Return total_membrane_flux(...).total of all three species at once, indexed [species, ...]."""
	g = conductances(site.membrane, params, site.gating)
	J_p = pump_flux(site.c_in[NA], site.c_ex[K], params.pump_strength(site.membrane), params.K_Na_pump, params.K_K_pump)
	table = np.empty((3,) + np.shape(site.V))
	for i, z in enumerate(VALENCE):
		E = nernst_potential(site.c_ex[i], site.c_in[i], z, params.constants, SPECIES[i])
		lam = params.lam[i] if capacitive else 0.0
		table[i] = J_p[i] + channel_flux(g[i], site.V, E, z) + capacitive_flux(params.C_m, lam, z, dVdt)
	return table

def flux_derivatives(species, site, dt, params, capacitive=True):
	"""
	Return the partial derivatives of total_membrane_flux with dVdt = (V - V_prev)/dt.
	`c_in` and `c_ex` hold one derivative per species the flux depends on, zero where it does not.
	Gates are treated as fixed.
	"""
	z = VALENCE[species]
	VT = thermal_voltage(params.constants)
	g = conductances(site.membrane, params, site.gating)[species]
	lam = params.lam[species] if capacitive else 0.0
	shape = np.shape(site.V)
	d_V = g / (z * ELEMENTARY_CHARGE) + lam * params.C_m / (z * ELEMENTARY_CHARGE * dt) + np.zeros(shape)
	d_in = np.zeros((3,) + shape)
	d_ex = np.zeros((3,) + shape)
	# dE/dc_in = -VT/(z c_in), dE/dc_ex = VT/(z c_ex)
	d_in[species] += g * VT / (z * z * ELEMENTARY_CHARGE * site.c_in[species])
	d_ex[species] -= g * VT / (z * z * ELEMENTARY_CHARGE * site.c_ex[species])
	stoichiometry = PUMP_STOICHIOMETRY[species]
	I_max = params.pump_strength(site.membrane)
	if stoichiometry and I_max:
		c_Na, c_K = site.c_in[NA], site.c_ex[K]
		na, k = _saturation(c_Na, c_K, params.K_Na_pump, params.K_K_pump)
		d_na = params.K_Na_pump / (c_Na + params.K_Na_pump) ** 2
		d_k = params.K_K_pump / (c_K + params.K_K_pump) ** 2
		scale = stoichiometry * I_max / ELEMENTARY_CHARGE
		d_in[NA] += scale * 3 * na ** 2 * d_na * k ** 2
		d_ex[K] += scale * na ** 3 * 2 * k * d_k
	return FluxDerivatives(d_V, d_in, d_ex)

def is_inert(membrane, species, params):
	"""True if no channel and no pump ever moves `species` across the membrane."""
	if membrane == AX:
		g = (params.g_leak_Na + params.gbar_Na, params.g_leak_K + params.gbar_K, params.g_ax_Cl)[species]
	else:
		g = conductances(membrane, params)[species]
	pumped = species != CL and params.pump_strength(membrane) > 0
	return g == 0 and not pumped
