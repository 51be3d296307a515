"""
Semi-discrete tridomain system: Nernst-Planck fluxes inside each compartment, the nine ion conservation residuals and
the three current conservation residuals, plus their analytic Jacobian.

Conservation residuals are per unit tissue volume in mol/(m^3 s). Current residuals are in A/m^3.
Membrane fluxes are positive out of the cells; the extracellular space receives what both membranes release.
"""
import hashlib
import logging
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from scipy import sparse

from ..physics.membrane import GatingState, MembraneSite, flux_derivatives, membrane_flux_table
from ..physics.params import AVOGADRO, AX, COMPARTMENTS, EX, FARADAY, MEMBRANES, SPECIES, VALENCE, thermal_voltage

log = logging.getLogger(__name__)

Z = np.array(VALENCE, dtype=float)
N_BLOCKS = 12

def cons_block(k, i):
	"""Block index of the conservation equation (and concentration unknown) of species i in compartment k."""
	return 3 * k + i

def current_block(k):
	"""Block index of the current equation (and potential unknown) of compartment k."""
	return 9 + k

def block_name(index):
	if index < 9:
		return "%s.%s" % (COMPARTMENTS[index // 3], SPECIES[index % 3])
	return "current.%s" % COMPARTMENTS[index - 9]

@dataclass(frozen=True)
class TridomainState:
	"""
	The full state on a mesh: c[k, i, p] in mol/m^3, phi[k, p] in V, axon gates per cell, fixed background charge a[k, p] in C/m^3.
	States are values; every update builds a new one.
	"""
	c: np.ndarray
	phi: np.ndarray
	gating: GatingState
	a: np.ndarray
	t: float = 0.0

	def replace(self, **changes):
		return replace(self, **changes)

	def membrane_potential(self, membrane):
		return self.phi[membrane] - self.phi[EX]

	def digest(self):
		"""A hash over every array of the state, for asserting that two runs start from the same point."""
		sha = hashlib.sha256()
		for array in (self.c, self.phi, self.gating.m, self.gating.h, self.gating.n, self.a):
			sha.update(np.ascontiguousarray(array, dtype=float).tobytes())
		sha.update(repr(float(self.t)).encode())
		return sha.hexdigest()

class Residual:
	"""Per-cell residuals of the nine conservation equations (conservation[k, i]) and the three current equations (current[k])."""
	def __init__(self, conservation, current):
		self.conservation = conservation
		self.current = current

	def blocks(self):
		for k in range(3):
			for i in range(3):
				yield block_name(cons_block(k, i)), self.conservation[k, i]
		for k in range(3):
			yield block_name(current_block(k)), self.current[k]

	def is_finite(self):
		return bool(np.all(np.isfinite(self.conservation)) and np.all(np.isfinite(self.current)))

	def copy(self):
		return Residual(self.conservation.copy(), self.current.copy())

@dataclass(frozen=True)
class StimulusProtocol:
	"""
	Current injected into the axons of the segment z < length, as pulses of `duration` starting at onset + n*period.
	The current is carried by the `carrier` species as an inward flux of the same charge.
	"""
	amplitude: float
	onset: float = 1e-3
	duration: float = 1e-3
	period: float = 50e-3
	count: int = 1
	length: float = 0.0
	carrier: int = 1

	# tolerance on pulse edges, so steps landing on an edge by rounding count exactly once
	EDGE = 1e-12

	def amplitude_at(self, t):
		"""Return the injected current density in A/m^2 at time t."""
		for n in range(self.count):
			start = self.onset + n * self.period
			if start - self.EDGE <= t < start + self.duration - self.EDGE:
				return self.amplitude
		return 0.0

	def scaled(self, factor):
		return replace(self, amplitude=self.amplitude * factor)

class Tissue:
	"""Parameters and mesh bound together with the derived coefficients the assembly needs."""
	def __init__(self, params, mesh, capacitive=True):
		self.params = params
		self.mesh = mesh
		self.capacitive = capacitive
		self.VT = thermal_voltage(params.constants)
		self.eta = np.array(params.eta)
		self.M = np.array([params.M_ax, params.M_gl])
		self.bath = np.array(params.bath)
		self.diffusivity = np.array([species.D for species in params.species()]).T
		self.gauge_cell = None if mesh.bath else 0
		self.has_left = mesh.face_left >= 0
		self.has_right = mesh.face_right >= 0
		# neighbour indices with missing cells pointed at cell 0; always masked by has_left/has_right
		self.left = np.where(self.has_left, mesh.face_left, 0)
		self.right = np.where(self.has_right, mesh.face_right, 0)
		# the extracellular space is the only compartment open to the bath
		interior = ~mesh.face_exterior
		self.active = np.array([
			interior & mesh.face_axial,
			interior,
			interior | mesh.bath_faces,
		])

	@property
	def n_cells(self):
		return self.mesh.n_cells

	@cached_property
	def layout(self):
		return JacobianLayout(self.mesh)

	def with_capacitive(self, capacitive):
		return Tissue(self.params, self.mesh, capacitive)

	def stimulated_cells(self, protocol):
		return self.mesh.cell_z < protocol.length

	def site(self, state, membrane):
		gating = state.gating if membrane == AX else None
		return MembraneSite(membrane, state.c[membrane], state.c[EX], state.membrane_potential(membrane), gating)

class FaceFluxes:
	"""Face fluxes indexed [compartment, species, face], with their partial derivatives with respect to the two adjacent cells."""
	def __init__(self, flux, d_c_left, d_c_right, d_phi_left, d_phi_right):
		self.flux = flux
		self.d_c_left = d_c_left
		self.d_c_right = d_c_right
		self.d_phi_left = d_phi_left
		self.d_phi_right = d_phi_right

def face_fluxes(tissue, state):
	"""Evaluate the Nernst-Planck flux of every species in every compartment on every face at once."""
	has_left, has_right = tissue.has_left, tissue.has_right
	bath = tissue.bath[None, :, None]
	c_left = np.where(has_left, state.c[:, :, tissue.left], bath)
	c_right = np.where(has_right, state.c[:, :, tissue.right], bath)
	# the bath is the potential ground
	phi_left = np.where(has_left, state.phi[:, tissue.left], 0.0)[:, None, :]
	phi_right = np.where(has_right, state.phi[:, tissue.right], 0.0)[:, None, :]

	D = tissue.diffusivity[:, :, None]
	z = Z[None, :, None]
	d = tissue.mesh.face_distance
	active = tissue.active[:, None, :]
	drift = -D * z * (phi_right - phi_left) / (d * tissue.VT)
	upwind_left = drift > 0
	c_up = np.where(upwind_left, c_left, c_right)
	flux = np.where(active, -D * (c_right - c_left) / d + drift * c_up, 0.0)

	d_c_left = np.where(active & has_left, D / d + np.where(upwind_left, drift, 0.0), 0.0)
	d_c_right = np.where(active & has_right, -D / d + np.where(upwind_left, 0.0, drift), 0.0)
	d_phi = D * z * c_up / (d * tissue.VT)
	d_phi_left = np.where(active & has_left, d_phi, 0.0)
	d_phi_right = np.where(active & has_right, -d_phi, 0.0)
	return FaceFluxes(flux, d_c_left, d_c_right, d_phi_left, d_phi_right)

def np_flux(tissue, k, i, state):
	"""
	Return the Nernst-Planck flux -D(grad c + z c grad(phi)/VT) of species i in compartment k on every face, in mol/(m^2 s).
	The drift term takes the upwind concentration; inactive faces (sealed, or radial ones inside the axons) carry zero.
	"""
	return face_fluxes(tissue, state).flux[k, i]

def transport_divergence(tissue, state, faces=None):
	"""Return div(eta_k j_k^i) per compartment, species and cell."""
	if faces is None:
		faces = face_fluxes(tissue, state)
	mesh = tissue.mesh
	# radial axon fluxes are zero already, so one operator serves all compartments
	div = (mesh.div_matrix @ faces.flux.reshape(9, mesh.n_faces).T).T
	return tissue.eta[:, None, None] * div.reshape(3, 3, mesh.n_cells)

def membrane_fluxes(tissue, state, state_prev, dt):
	"""Return the total transmembrane flux J[m, i, p] of both membranes in mol/(m^2 s), dV/dt taken as a backward difference."""
	fluxes = np.empty((2, 3, tissue.n_cells))
	for m in MEMBRANES:
		site = tissue.site(state, m)
		dVdt = (site.V - state_prev.membrane_potential(m)) / dt
		fluxes[m] = membrane_flux_table(site, dVdt, tissue.params, tissue.capacitive)
	return fluxes / AVOGADRO

def conservation_residual(tissue, state, state_prev, dt, fluxes=None, divergence=None):
	"""Return eta_k (c - c_prev)/dt + div(eta_k j_k) +- M J per compartment, species and cell."""
	if fluxes is None:
		fluxes = membrane_fluxes(tissue, state, state_prev, dt)
	if divergence is None:
		divergence = transport_divergence(tissue, state)
	residual = tissue.eta[:, None, None] * (state.c - state_prev.c) / dt + divergence
	for m in MEMBRANES:
		residual[m] += tissue.M[m] * fluxes[m]
		residual[EX] -= tissue.M[m] * fluxes[m]
	return residual

def current_residual(tissue, state, state_prev, dt, fluxes=None, divergence=None):
	"""
	Return the three current equations: for each cell membrane the z-weighted membrane and transport terms of its own
	compartment, and for the extracellular space the z-weighted transport terms of all three compartments.
	"""
	if fluxes is None:
		fluxes = membrane_fluxes(tissue, state, state_prev, dt)
	if divergence is None:
		divergence = transport_divergence(tissue, state)
	weighted = FARADAY * np.einsum("i,kip->kp", Z, divergence)
	current = np.empty((3, tissue.n_cells))
	for m in MEMBRANES:
		current[m] = FARADAY * tissue.M[m] * (Z @ fluxes[m]) + weighted[m]
	current[EX] = weighted.sum(axis=0)
	return current

def residual(tissue, state, state_prev, dt, protocol=None):
	fluxes = membrane_fluxes(tissue, state, state_prev, dt)
	divergence = transport_divergence(tissue, state)
	result = Residual(
		conservation_residual(tissue, state, state_prev, dt, fluxes, divergence),
		current_residual(tissue, state, state_prev, dt, fluxes, divergence),
	)
	if protocol is not None:
		result = apply_stimulus(tissue, result, protocol, state.t)
	return result

def apply_stimulus(tissue, residual, protocol, t):
	"""
	Return the residuals with the stimulus added as an inward flux -I/(z F) of the carrier on the stimulated axon cells.
	Outside the pulse windows the residuals are returned unchanged.
	"""
	amplitude = protocol.amplitude_at(t)
	if not amplitude:
		return residual
	i = protocol.carrier
	cells = tissue.stimulated_cells(protocol)
	source = tissue.M[AX] * -amplitude / (Z[i] * FARADAY)
	result = residual.copy()
	result.conservation[AX, i, cells] += source
	result.conservation[EX, i, cells] -= source
	result.current[AX, cells] += Z[i] * FARADAY * source
	return result

def injected_charge(tissue, protocol, times, dt):
	"""Charge in C pushed into the axons by the stimulus over the steps ending at `times`."""
	area = tissue.M[AX] * tissue.mesh.volumes[tissue.stimulated_cells(protocol)].sum()
	return sum(protocol.amplitude_at(t) for t in times) * dt * area

def background_charge(c):
	"""Return the fixed charge density a[k, p] that makes each compartment electroneutral with concentrations c."""
	return -FARADAY * np.einsum("i,kip->kp", Z, c)

def electroneutrality_defect(state):
	"""Return the largest |sum_i z F c + a| relative to F sum_i c over all compartments and cells."""
	charge = FARADAY * np.einsum("i,kip->kp", Z, state.c) + state.a
	return float(np.max(np.abs(charge) / (FARADAY * state.c.sum(axis=1))))

def species_content(tissue, state):
	"""Return the total amount of each species in mol, summed over compartments and cells."""
	return np.einsum("k,kip,p->i", tissue.eta, state.c, tissue.mesh.volumes)

STENCIL = 0
DIAGONAL = 1

class JacobianLayout:
	"""
	The sparsity pattern of the residual Jacobian on one mesh, in compressed column form.
	Entries come as (row block, column block, kind, values) in an order that does not depend on the state. The first
	assembly records the slot every value lands in; later assemblies only sum the values into place.
	"""
	def __init__(self, mesh):
		self.n = mesh.n_cells
		self.size = N_BLOCKS * self.n
		rows, cols, weights, faces, from_left = [], [], [], [], []
		index = np.arange(mesh.n_faces)
		# a face flux leaves its left cell and enters its right cell
		for row_cells, sign in ((mesh.face_left, 1.0), (mesh.face_right, -1.0)):
			for col_cells, is_left in ((mesh.face_left, True), (mesh.face_right, False)):
				both = (row_cells >= 0) & (col_cells >= 0)
				rows.append(row_cells[both])
				cols.append(col_cells[both])
				weights.append(sign * mesh.face_area[both] / mesh.volumes[row_cells[both]])
				faces.append(index[both])
				from_left.append(np.full(int(both.sum()), is_left))
		cells = np.arange(self.n)
		self.local = {
			STENCIL: (np.concatenate(rows), np.concatenate(cols)),
			DIAGONAL: (cells, cells),
		}
		self.stencil_weight = np.concatenate(weights)
		self.stencil_face = np.concatenate(faces)
		self.stencil_left = np.concatenate(from_left)
		self._slots = None
		self.indices = None
		self.indptr = None

	def stencil(self, d_left, d_right):
		"""Return the entries of d(div flux)/d(cell value), given the face flux derivatives with respect to the left and right cell."""
		return self.stencil_weight * np.where(self.stencil_left, d_left[self.stencil_face], d_right[self.stencil_face])

	def _build(self, keys):
		rows, cols = [], []
		for row, col, kind in keys:
			local_rows, local_cols = self.local[kind]
			rows.append(row * self.n + local_rows)
			cols.append(col * self.n + local_cols)
		positions = np.concatenate(cols).astype(np.int64) * self.size + np.concatenate(rows)
		unique, slots = np.unique(positions, return_inverse=True)
		self._slots = slots.ravel()
		self.indices = (unique % self.size).astype(np.int32)
		counts = np.bincount(unique // self.size, minlength=self.size)
		self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)

	def assemble(self, entries):
		"""Sum the entries into a CSC matrix of the fixed pattern. Explicit zeros stay in the pattern."""
		entries = list(entries)
		if self._slots is None:
			self._build([(row, col, kind) for row, col, kind, _ in entries])
		values = np.concatenate([values for _, _, _, values in entries])
		data = np.bincount(self._slots, weights=values, minlength=self.indices.size)
		return sparse.csc_matrix((data, self.indices.copy(), self.indptr.copy()), shape=(self.size, self.size))

	def position(self, row, col):
		"""
		Return the index into the data array of entry (row, col).
		Raise KeyError if the entry is not part of the pattern.
		"""
		start, end = self.indptr[col], self.indptr[col + 1]
		found = np.flatnonzero(self.indices[start:end] == row)
		if not found.size:
			raise KeyError((row, col))
		return int(start + found[0])

def _jacobian_entries(tissue, state, dt):
	layout = tissue.layout
	n = tissue.n_cells
	faces = face_fluxes(tissue, state)
	for k in range(3):
		currents = (current_block(EX),) if k == EX else (current_block(k), current_block(EX))
		for i in range(3):
			row = cons_block(k, i)
			d_c = tissue.eta[k] * layout.stencil(faces.d_c_left[k, i], faces.d_c_right[k, i])
			d_phi = tissue.eta[k] * layout.stencil(faces.d_phi_left[k, i], faces.d_phi_right[k, i])
			yield row, row, DIAGONAL, np.full(n, tissue.eta[k] / dt)
			yield row, row, STENCIL, d_c
			yield row, current_block(k), STENCIL, d_phi
			weight = Z[i] * FARADAY
			for current in currents:
				yield current, row, STENCIL, weight * d_c
				yield current, current_block(k), STENCIL, weight * d_phi

	for m in MEMBRANES:
		site = tissue.site(state, m)
		for i in range(3):
			derivatives = flux_derivatives(i, site, dt, tissue.params, tissue.capacitive)
			columns = [(current_block(m), derivatives.V), (current_block(EX), -derivatives.V)]
			for j in range(3):
				columns.append((cons_block(m, j), derivatives.c_in[j]))
				columns.append((cons_block(EX, j), derivatives.c_ex[j]))
			for col, values in columns:
				diagonal = tissue.M[m] * values / AVOGADRO
				yield cons_block(m, i), col, DIAGONAL, diagonal
				yield cons_block(EX, i), col, DIAGONAL, -diagonal
				yield current_block(m), col, DIAGONAL, Z[i] * FARADAY * diagonal

def residual_jacobian(tissue, state, state_prev, dt):
	"""
	Return the Jacobian of the physical residual as a sparse CSC matrix over the unknowns c[k, i] (blocks 0-8) and
	phi[k] (blocks 9-11), block b of cell p at index b*n_cells + p. Gates are held fixed.
	dV/dt is a backward difference, so the Jacobian depends on the previous state only through dt.
	"""
	return tissue.layout.assemble(_jacobian_entries(tissue, state, dt))

def null_blocks(matrix, n_cells):
	"""Return the names of the row blocks of a Jacobian that contain an all-zero row."""
	nonzero = np.asarray(abs(matrix).sum(axis=1)).ravel() > 0
	return [block_name(row) for row in range(N_BLOCKS) if not nonzero[row * n_cells:(row + 1) * n_cells].all()]
