"""
Self-tests of the discretization, run by the "check" management command.
Each check rebuilds its inputs from the default parameters and reports a tridomain.E00x error when an identity fails.
"""
import numpy as np
from django.conf import settings
from django.core import checks

from .numerics.mesh import build_mesh
from .numerics.solver import jacobian_check, random_admissible_state
from .numerics.transport import Tissue
from .physics.membrane import capacitive_flux, nernst_potential
from .physics.params import ELEMENTARY_CHARGE, PhysicalConstants, ParameterSet, VALENCE, thermal_voltage

# Largest relative mismatch tolerated between analytic and finite difference Jacobian entries
JACOBIAN_TOLERANCE = 1e-5

@checks.register("tridomain")
def check_capacitive_partition(app_configs, **kwargs):
	"""The capacitive fluxes of the three species carry exactly C_m dV/dt of charge."""
	params = ParameterSet()
	rng = np.random.default_rng(0)
	dVdt = rng.uniform(-10.0, 10.0, 16)
	charge = sum(VALENCE[i] * ELEMENTARY_CHARGE * capacitive_flux(params.C_m, params.lam[i], VALENCE[i], dVdt) for i in range(3))
	expected = params.C_m * dVdt
	if np.any(np.abs(charge - expected) > 16 * np.spacing(np.abs(expected))):
		return [checks.Error(
			"Capacitive fluxes do not sum to C_m dV/dt",
			hint="Check that lambda sums to 1.",
			id="tridomain.E001",
		)]
	return []

@checks.register("tridomain")
def check_nernst(app_configs, **kwargs):
	errors = []
	constants = PhysicalConstants()
	VT = thermal_voltage(constants)
	if nernst_potential(42.0, 42.0, 1, constants) != 0.0:
		errors.append(checks.Error("Nernst potential of equal concentrations is not zero", id="tridomain.E002"))
	E_K = nernst_potential(3.0, 100.0, 1, constants)
	if abs(E_K - VT * np.log(0.03)) > 1e-12 or abs(E_K + 88.58e-3) > 1e-4:
		errors.append(checks.Error("Nernst potential of K at 3/100 mM is %.6g V, expected -88.58 mV" % E_K, id="tridomain.E002"))
	if abs(nernst_potential(3.0, 100.0, -1, constants) + E_K) > 1e-15:
		errors.append(checks.Error("Nernst potential is not odd in the valence", id="tridomain.E002"))
	return errors

@checks.register("tridomain")
def check_divergence_theorem(app_configs, **kwargs):
	"""Summed over cells, volume times divergence equals the net flux through the exterior faces."""
	mesh = build_mesh(1.0, 2.0, 3, 5)
	flux = np.random.default_rng(1).normal(size=mesh.n_faces)
	interior_total = mesh.volumes @ mesh.divergence(flux)
	outward = np.where(mesh.face_right < 0, 1.0, -1.0)
	boundary_total = np.sum((outward * flux * mesh.face_area)[mesh.face_exterior])
	if abs(interior_total - boundary_total) > 1e-12 * np.sum(np.abs(flux) * mesh.face_area):
		return [checks.Error("Discrete divergence theorem fails: %r != %r" % (interior_total, boundary_total), id="tridomain.E003")]
	return []

@checks.register("tridomain")
def check_jacobian(app_configs, **kwargs):
	"""The analytic Newton Jacobian agrees with central finite differences at a random admissible state."""
	Nr, Nz = settings.TRIDOMAIN_CHECK_MESH
	params = ParameterSet()
	tissue = Tissue(params, build_mesh(params.R, params.L, Nr, Nz))
	state = random_admissible_state(tissue, np.random.default_rng(2))
	error = jacobian_check(tissue, state, 1e-5)
	if error > JACOBIAN_TOLERANCE:
		return [checks.Error("Analytic Jacobian differs from finite differences by %.3e" % error, id="tridomain.E004")]
	return []
