from dataclasses import replace

import numpy as np

from tridomain.numerics.mesh import build_mesh
from tridomain.numerics.solver import initial_state, random_admissible_state
from tridomain.numerics.transport import StimulusProtocol, Tissue, TridomainState, Z, apply_stimulus, background_charge, block_name, cons_block, conservation_residual, current_block, current_residual, electroneutrality_defect, injected_charge, np_flux, null_blocks, residual, residual_jacobian, species_content, transport_divergence
from tridomain.physics.membrane import GatingState
from tridomain.physics.params import AX, CL, EX, FARADAY, GL, K, NA, ParameterSet, thermal_voltage
from tridomain.tests.setup_testcase import TestCase, cls_setup, requires

@cls_setup
def tissue(cls):
	cls.params = ParameterSet()
	cls.tissue = Tissue(cls.params, build_mesh(cls.params.R, cls.params.L, 2, 8))

@cls_setup
@requires(tissue)
def random_state(cls):
	cls.state = random_admissible_state(cls.tissue, np.random.default_rng(6))

@cls_setup
def protocol(cls):
	cls.protocol = StimulusProtocol(amplitude=0.5, onset=1e-3, duration=1e-3, period=5e-3, count=2, length=1e-3, carrier=K)

class Blocks(TestCase):
	def test_names(self):
		self.assertEqual(block_name(cons_block(AX, NA)), "ax.Na")
		self.assertEqual(block_name(cons_block(EX, K)), "ex.K")
		self.assertEqual(block_name(current_block(GL)), "current.gl")

class State(TestCase):
	SETUP = tissue, random_state

	def test_background_charge_neutralizes(self):
		self.assertLess(electroneutrality_defect(self.state), 1e-15)

	def test_background_charge_sign(self):
		c = np.zeros((3, 3, 1))
		c[:, NA] = 1.0
		np.testing.assert_allclose(background_charge(c), -FARADAY)

	def test_digest_tracks_contents(self):
		same = TridomainState(self.state.c.copy(), self.state.phi.copy(), self.state.gating, self.state.a.copy())
		self.assertEqual(same.digest(), self.state.digest())
		moved = self.state.replace(phi=self.state.phi + 1e-12)
		self.assertNotEqual(moved.digest(), self.state.digest())

	def test_replace_leaves_original(self):
		self.state.replace(t=5.0)
		self.assertEqual(self.state.t, 0.0)

	def test_species_content(self):
		uniform = initial_state(self.tissue)
		expected = sum(eta * np.array(self.params.initial(k)) for k, eta in enumerate(self.params.eta)) * self.tissue.mesh.volumes.sum()
		np.testing.assert_allclose(species_content(self.tissue, uniform), expected, rtol=1e-12)

class Fluxes(TestCase):
	SETUP = tissue, random_state

	def test_uniform_state_has_no_flux(self):
		state = initial_state(self.tissue)
		for k in range(3):
			for i in range(3):
				np.testing.assert_array_equal(np_flux(self.tissue, k, i, state), 0.0)

	def test_axons_have_no_radial_flux(self):
		for i in range(3):
			flux = np_flux(self.tissue, AX, i, self.state)
			np.testing.assert_array_equal(flux[~self.tissue.mesh.face_axial], 0.0)

	def test_only_extracellular_space_reaches_bath(self):
		exterior = self.tissue.mesh.face_exterior
		for i in range(3):
			np.testing.assert_array_equal(np_flux(self.tissue, AX, i, self.state)[exterior], 0.0)
			np.testing.assert_array_equal(np_flux(self.tissue, GL, i, self.state)[exterior], 0.0)
			self.assertTrue(np.any(np_flux(self.tissue, EX, i, self.state)[exterior] != 0.0))

	def test_sealed_mesh_has_no_boundary_flux(self):
		sealed = Tissue(self.params, build_mesh(self.params.R, self.params.L, 2, 8, bath=False))
		for i in range(3):
			np.testing.assert_array_equal(np_flux(sealed, EX, i, self.state)[sealed.mesh.face_exterior], 0.0)

	def test_diffusion_goes_downhill(self):
		state = initial_state(self.tissue)
		c = state.c.copy()
		c[GL, K, 0] += 10.0
		flux = np_flux(self.tissue, GL, K, state.replace(c=c))
		mesh = self.tissue.mesh
		leaving = (mesh.face_left == 0) & ~mesh.face_exterior
		entering = (mesh.face_right == 0) & ~mesh.face_exterior
		self.assertTrue(np.all(flux[leaving] > 0))
		self.assertTrue(np.all(flux[entering] < 0))

class Stimulus(TestCase):
	SETUP = tissue, random_state, protocol

	def test_pulse_windows(self):
		self.assertEqual(self.protocol.amplitude_at(0.999e-3), 0.0)
		self.assertEqual(self.protocol.amplitude_at(1e-3), 0.5)
		self.assertEqual(self.protocol.amplitude_at(1.5e-3), 0.5)
		self.assertEqual(self.protocol.amplitude_at(2e-3), 0.0)
		self.assertEqual(self.protocol.amplitude_at(6.5e-3), 0.5)
		self.assertEqual(self.protocol.amplitude_at(11.5e-3), 0.0)

	def test_no_pulses(self):
		self.assertEqual(replace(self.protocol, count=0).amplitude_at(1.5e-3), 0.0)

	def test_scaled(self):
		self.assertEqual(self.protocol.scaled(2.0).amplitude_at(1.5e-3), 1.0)

	def test_stimulated_segment(self):
		cells = self.tissue.stimulated_cells(self.protocol)
		self.assertEqual(cells.sum(), 3 * self.tissue.mesh.Nr)

	def test_residual_shift(self):
		state = self.state.replace(t=1.5e-3)
		base = residual(self.tissue, state, self.state, 1e-5)
		stimulated = apply_stimulus(self.tissue, base, self.protocol, state.t)
		cells = self.tissue.stimulated_cells(self.protocol)
		shift = stimulated.current[AX] - base.current[AX]
		np.testing.assert_allclose(shift[cells], -self.tissue.M[AX] * 0.5, rtol=1e-12)
		np.testing.assert_array_equal(shift[~cells], 0.0)
		carried = stimulated.conservation - base.conservation
		np.testing.assert_allclose(carried[AX, K] + carried[EX, K], 0.0, atol=1e-12)
		np.testing.assert_array_equal(carried[:, NA], 0.0)

	def test_outside_window_unchanged(self):
		base = residual(self.tissue, self.state, self.state, 1e-5)
		self.assertIs(apply_stimulus(self.tissue, base, self.protocol, 3e-3), base)

	def test_injected_charge(self):
		dt = 1e-4
		times = [n * dt for n in range(1, 31)]
		area = self.tissue.M[AX] * self.tissue.mesh.volumes[self.tissue.stimulated_cells(self.protocol)].sum()
		self.assertAlmostEqual(injected_charge(self.tissue, self.protocol, times, dt) / (0.5 * 1e-3 * area), 1.0, delta=1e-9)

class Jacobian(TestCase):
	SETUP = tissue, random_state

	def test_layout(self):
		matrix = residual_jacobian(self.tissue, self.state, self.state, 1e-5)
		n = self.tissue.n_cells
		self.assertEqual(matrix.shape, (12 * n, 12 * n))
		self.assertEqual(null_blocks(matrix, n), [])

	def test_pattern_is_fixed(self):
		first = residual_jacobian(self.tissue, self.state, self.state, 1e-5)
		second = residual_jacobian(self.tissue, initial_state(self.tissue), self.state, 1e-3)
		np.testing.assert_array_equal(first.indices, second.indices)
		np.testing.assert_array_equal(first.indptr, second.indptr)

	def test_null_blocks(self):
		params = replace(self.params, D_Na=0.0, D_K=0.0, D_Cl=0.0, g_leak_Na=0.0, g_leak_K=0.0, g_gl_Cl=0.0, I_ax2=0.0)
		tissue = Tissue(params, self.tissue.mesh, capacitive=False)
		names = null_blocks(residual_jacobian(tissue, self.state, self.state, 1e-5), tissue.n_cells)
		self.assertIn("current.gl", names)
		self.assertIn("current.ex", names)
		self.assertNotIn("current.ax", names)

@cls_setup
def two_cells(cls):
	cls.params = ParameterSet()
	cls.pair = Tissue(cls.params, build_mesh(cls.params.R, cls.params.L, 1, 2, bath=False))
	uniform = initial_state(cls.pair)
	phi = np.zeros((3, 2))
	phi[AX] = -65e-3
	phi[GL] = -82e-3
	phi[EX] = 2e-3
	cls.uniform = uniform.replace(phi=phi, gating=GatingState(np.full(2, 0.1), np.full(2, 0.55), np.full(2, 0.35)))

class Residuals(TestCase):
	SETUP = tissue, random_state, two_cells

	def test_current_is_charge_weighted_conservation(self):
		conservation = conservation_residual(self.tissue, self.state, self.state, 1e-5)
		current = current_residual(self.tissue, self.state, self.state, 1e-5)
		weighted = FARADAY * np.einsum("i,kip->kp", Z, conservation)
		atol = 1e-10 * np.max(np.abs(weighted))
		np.testing.assert_allclose(current[AX], weighted[AX], rtol=1e-9, atol=atol)
		np.testing.assert_allclose(current[GL], weighted[GL], rtol=1e-9, atol=atol)
		np.testing.assert_allclose(current[EX], weighted.sum(axis=0), rtol=1e-9, atol=atol)

	def test_membrane_terms_cancel_over_compartments(self):
		previous = self.state.replace(c=self.state.c * 1.01)
		n = self.tissue.n_cells
		rng = np.random.default_rng(12)
		with_fluxes = conservation_residual(self.tissue, self.state, previous, 1e-5, fluxes=rng.uniform(-1e-3, 1e-3, (2, 3, n)))
		without = conservation_residual(self.tissue, self.state, previous, 1e-5, fluxes=np.zeros((2, 3, n)))
		np.testing.assert_allclose(with_fluxes.sum(axis=0), without.sum(axis=0), rtol=1e-9, atol=1e-6)
		expected = self.tissue.eta[:, None, None] * (self.state.c - previous.c) / 1e-5 + transport_divergence(self.tissue, self.state)
		np.testing.assert_allclose(without, expected, rtol=1e-12)

	def test_uniform_cell_balances_membrane_flux(self):
		dt = 1e-4
		fluxes = np.array([[2e-6, -1e-6, 5e-7], [-3e-7, 4e-7, 1e-7]])[:, :, None] * np.ones(2)
		eta, M = self.pair.eta, self.pair.M
		c = self.uniform.c.copy()
		for m in (AX, GL):
			c[m] -= M[m] * fluxes[m] * dt / eta[m]
			c[EX] += M[m] * fluxes[m] * dt / eta[EX]
		advanced = self.uniform.replace(c=c)
		result = conservation_residual(self.pair, advanced, self.uniform, dt, fluxes=fluxes)
		np.testing.assert_allclose(result, 0.0, atol=1e-9)

	def test_axon_current_against_circuit(self):
		dt = 1e-4
		state = self.uniform
		previous = state.replace(phi=state.phi - np.array([[1e-3], [0.0], [0.0]]))
		params = self.params
		VT = thermal_voltage(params.constants)
		c_in, c_ex = state.c[AX, :, 0], state.c[EX, :, 0]
		V = state.phi[AX, 0] - state.phi[EX, 0]
		m, h, n = state.gating.m[0], state.gating.h[0], state.gating.n[0]
		g = (params.g_leak_Na + params.gbar_Na * m ** 3 * h, params.g_leak_K + params.gbar_K * n ** 4, params.g_ax_Cl)
		E = (VT * np.log(c_ex[NA] / c_in[NA]), VT * np.log(c_ex[K] / c_in[K]), -VT * np.log(c_ex[CL] / c_in[CL]))
		pump = params.I_ax1 * (c_in[NA] / (c_in[NA] + params.K_Na_pump)) ** 3 * (c_ex[K] / (c_ex[K] + params.K_K_pump)) ** 2
		capacitive = params.C_m * 1e-3 / dt
		expected = params.M_ax * (sum(gi * (V - Ei) for gi, Ei in zip(g, E)) + pump + capacitive)
		current = current_residual(self.pair, state, previous, dt)
		np.testing.assert_allclose(current[AX], expected, rtol=1e-9)

class BoltzmannEquilibrium(TestCase):
	"""A Boltzmann-distributed extracellular space carries no flux in the limit of fine cells."""
	SETUP = tissue,

	def _midplane_flux(self, Nz, drift=True):
		mesh = build_mesh(self.params.R, self.params.L, 1, Nz, bath=False)
		tissue = Tissue(self.params, mesh)
		state = initial_state(tissue)
		phi = state.phi.copy()
		phi[EX] = 2.5e-3 * np.sin(2 * np.pi * mesh.cell_z / mesh.L)
		c = state.c.copy()
		c[EX] = np.array(self.params.bath)[:, None] * np.exp(-Z[:, None] * phi[EX] / tissue.VT)
		state = state.replace(c=c, phi=phi if drift else state.phi)
		interior = ~mesh.face_exterior
		face_z = 0.5 * (mesh.cell_z[mesh.face_left] + mesh.cell_z[mesh.face_right])
		face = np.flatnonzero(interior & mesh.face_axial & np.isclose(face_z, mesh.L / 2))
		self.assertEqual(face.size, 1)
		return max(abs(np_flux(tissue, EX, i, state)[face[0]]) for i in range(3))

	def test_first_order(self):
		fluxes = [self._midplane_flux(Nz) for Nz in (16, 32, 64)]
		for coarse, fine in zip(fluxes, fluxes[1:]):
			self.assertGreater(np.log2(coarse / fine), 0.95)

	def test_drift_cancels_diffusion(self):
		self.assertLess(self._midplane_flux(16), 0.05 * self._midplane_flux(16, drift=False))
