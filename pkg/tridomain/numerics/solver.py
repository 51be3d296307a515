"""
Implicit time stepping of the tridomain system and the resting state every scenario starts from.

A step first advances the axon gates with the exponential integrator at the old membrane potential, then solves the
backward Euler system for all concentrations and potentials with Newton's method.
The Newton residual is the physical residual with each row block scaled to concentration units (mol/m^3):
conservation rows by dt/eta_k, current rows by dt/(F eta_k).
"""
import inspect
import logging
import time
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.sparse import linalg as splinalg

from ..physics.membrane import GatingState, MembraneSite, conductances, gating_step, is_inert, steady_state, total_membrane_flux
from ..physics.params import AX, COMPARTMENTS, ELEMENTARY_CHARGE, EX, FARADAY, MEMBRANES
from .transport import N_BLOCKS, TridomainState, Z, background_charge, cons_block, current_block, null_blocks, residual, residual_jacobian

log = logging.getLogger(__name__)

CONCENTRATION_FLOOR = 1e-9
# smallest line search step before the iterate is taken as is
_MIN_STEP = 1 / 64
# a kept factorization is reused while each Newton step cuts the residual by at least this factor
_CONTRACTION = 0.25
# settle criteria of the rest state
REST_DVDT = 1e-6
REST_DC = 1e-10

_GMRES_TOL = "rtol" if "rtol" in inspect.signature(splinalg.gmres).parameters else "tol"

class SolverError(RuntimeError):
	"""Base of all solver failures. `t` is the simulated time at which it happened, if known."""
	def __init__(self, message, t=None):
		if t is not None:
			message = "%s (t = %.6g s)" % (message, t)
		super().__init__(message)
		self.t = t

class StepRejected(SolverError):
	def __init__(self, message, t=None, report=None):
		super().__init__(message, t)
		self.report = report

class SingularJacobian(SolverError):
	def __init__(self, blocks, t=None):
		super().__init__("Singular Jacobian, null rows in %s" % ", ".join(blocks), t)
		self.blocks = blocks

class RestStateError(SolverError):
	def __init__(self, message, drift=None):
		super().__init__(message)
		self.drift = drift or {}

@dataclass(frozen=True)
class StepReport:
	iterations: int
	residual_norm: float
	initial_norm: float
	wall_time: float
	converged: bool = True
	# set when the step only went through after halving dt
	rejected: bool = False
	dt: float = 0.0

def _row_scale(tissue, dt):
	scale = np.empty(N_BLOCKS)
	for k in range(3):
		for i in range(3):
			scale[cons_block(k, i)] = dt / tissue.eta[k]
		scale[current_block(k)] = dt / (FARADAY * tissue.eta[k])
	return scale

def _pack(state):
	return np.concatenate([state.c.ravel(), state.phi.ravel()])

def _unpack(x, template):
	n = template.c.shape[-1]
	return template.replace(c=x[:9 * n].reshape(3, 3, n).copy(), phi=x[9 * n:].reshape(3, n).copy())

class _System:
	"""The scaled Newton system of one backward Euler step from state_prev to the time and gates of `template`."""
	def __init__(self, tissue, state_prev, template, dt, protocol=None):
		self.tissue = tissue
		self.state_prev = state_prev
		self.template = template
		self.dt = dt
		self.protocol = protocol
		n = tissue.n_cells
		self.n_conc = 9 * n
		self.scale = np.repeat(_row_scale(tissue, dt), n)
		# on a sealed mesh the potential is only defined up to a constant, so one extracellular cell is pinned to 0
		self.gauge = None if tissue.gauge_cell is None else self.n_conc + EX * n + tissue.gauge_cell

	def residual(self, x):
		state = _unpack(x, self.template)
		result = residual(self.tissue, state, self.state_prev, self.dt, self.protocol)
		vector = np.concatenate([result.conservation.ravel(), result.current.ravel()]) * self.scale
		if self.gauge is not None:
			vector[self.gauge] = x[self.gauge]
		return vector

	def jacobian(self, x):
		state = _unpack(x, self.template)
		matrix = residual_jacobian(self.tissue, state, self.state_prev, self.dt)
		matrix.data *= self.scale[matrix.indices]
		if self.gauge is not None:
			matrix.data[matrix.indices == self.gauge] = 0.0
			matrix.data[self.tissue.layout.position(self.gauge, self.gauge)] = 1.0
		return matrix

def _factor_direct(matrix, config):
	try:
		return splinalg.splu(matrix).solve
	except RuntimeError:
		return None

def _factor_gmres(matrix, config):
	try:
		ilu = splinalg.spilu(matrix)
	except RuntimeError:
		return None
	preconditioner = splinalg.LinearOperator(matrix.shape, ilu.solve)

	def solve(rhs):
		solution, info = splinalg.gmres(matrix, rhs, M=preconditioner, atol=0.0, **{_GMRES_TOL: config.linear_tol})
		if info < 0:
			return None
		if info > 0:
			# an inexact direction is still usable; the Newton residual decides convergence
			log.debug("GMRES stopped short of tolerance %g after %i iterations", config.linear_tol, info)
		return solution

	return solve

LINEAR_SOLVERS = {
	"direct": _factor_direct,
	"gmres": _factor_gmres,
}

class Factorization:
	"""
	A factorized Newton matrix that outlives the iteration and the step it was built in.
	Newton keeps using it while it contracts the residual, and refactorizes at the current iterate once it stops doing so.
	A factorization belongs to one tissue and one dt; anything else triggers a rebuild.
	"""
	def __init__(self, config):
		self.config = config
		self.solve = None
		self.tissue = None
		self.dt = None
		# built from an iterate of the step in progress
		self.fresh = False
		self.count = 0

	def valid_for(self, system):
		return self.solve is not None and self.tissue is system.tissue and self.dt == system.dt

	def refresh(self, system, x, t):
		"""
		Factorize the Newton matrix at x.
		Raise SingularJacobian if it has a null row block and StepRejected if the factorization fails otherwise.
		"""
		matrix = system.jacobian(x)
		self.solve = LINEAR_SOLVERS[self.config.linear_solver](matrix, self.config)
		self.tissue = system.tissue
		self.dt = system.dt
		self.fresh = True
		self.count += 1
		if self.solve is None:
			names = null_blocks(matrix, system.tissue.n_cells)
			if names:
				raise SingularJacobian(names, t=t)
			raise StepRejected("Linear solve failed", t=t)

def _norm(vector):
	return float(np.max(np.abs(vector)))

def _clip(x, n_conc):
	low = x[:n_conc] < CONCENTRATION_FLOOR
	if not low.any():
		return x, False
	x = x.copy()
	x[:n_conc][low] = CONCENTRATION_FLOOR
	return x, True

def _line_search(system, x, r, dx, t):
	merit = np.linalg.norm(r)
	alpha = 1.0
	while True:
		trial, clipped = _clip(x + alpha * dx, system.n_conc)
		r_trial = system.residual(trial)
		if np.all(np.isfinite(r_trial)):
			if np.linalg.norm(r_trial) <= (1 - 1e-4 * alpha) * merit or alpha <= _MIN_STEP:
				return trial, r_trial, clipped
		elif alpha <= _MIN_STEP:
			raise StepRejected("Line search found no finite residual", t=t)
		alpha *= 0.5

def _newton(system, x, config, t, factor):
	r = system.residual(x)
	initial = _norm(r)
	target = max(config.newton_tol * initial, config.newton_atol)
	norm = initial
	iterations = 0
	clipped = False
	factor.fresh = False
	while norm > target or clipped:
		if iterations >= config.newton_max_iter:
			report = StepReport(iterations, norm, initial, 0.0, converged=False, dt=system.dt)
			raise StepRejected("Newton did not converge in %i iterations, residual %.3e > %.3e" % (iterations, norm, target), t=t, report=report)
		if not factor.valid_for(system):
			factor.refresh(system, x, t)
		dx = factor.solve(-r)
		iterations += 1
		if dx is None or not np.all(np.isfinite(dx)):
			if factor.fresh:
				raise StepRejected("Linear solve failed", t=t)
			factor.refresh(system, x, t)
			continue
		trial, trial_clipped = _clip(x + dx, system.n_conc)
		r_trial = system.residual(trial)
		trial_norm = _norm(r_trial)
		if trial_norm <= _CONTRACTION * norm:
			x, r, norm, clipped = trial, r_trial, trial_norm, trial_clipped
		elif not factor.fresh:
			factor.refresh(system, x, t)
			continue
		else:
			x, r, clipped = _line_search(system, x, r, dx, t)
			norm = _norm(r)
		if clipped:
			log.warning("Concentration clipped to %g mol/m^3 at a Newton iterate, t=%.6g s", CONCENTRATION_FLOOR, t)
	return x, iterations, norm, initial

def step(tissue, state, dt, config, protocol=None, factor=None):
	"""
	Advance the state by dt and return (new state, StepReport).
	`factor` carries a Factorization over from earlier steps; without one every step factorizes afresh.
	The input state is never modified; if Newton fails, StepRejected is raised and nothing of the attempt escapes.
	Raise SingularJacobian if the linear system has a null row block.
	"""
	started = time.perf_counter()
	if factor is None:
		factor = Factorization(config)
	gating = gating_step(state.gating, state.membrane_potential(AX), dt, tissue.params.V_rest)
	template = state.replace(gating=gating, t=state.t + dt)
	system = _System(tissue, state, template, dt, protocol)
	x, iterations, norm, initial = _newton(system, _pack(template), config, template.t, factor)
	report = StepReport(iterations, norm, initial, time.perf_counter() - started, dt=dt)
	log.debug("t=%.6g s: %i Newton iterations, residual %.3e", template.t, iterations, norm)
	return _unpack(x, template), report

def advance(tissue, state, dt, config, protocol=None, depth=0, factor=None):
	"""Take one step of dt; a rejected step is retried as two half steps, recursively up to config.max_halvings times."""
	try:
		return step(tissue, state, dt, config, protocol, factor)
	except StepRejected as e:
		if depth >= config.max_halvings:
			raise
		log.warning("Step rejected, halving dt to %.3g s: %s", dt / 2, e)
	half, first = advance(tissue, state, dt / 2, config, protocol, depth + 1, factor)
	end, second = advance(tissue, half, dt / 2, config, protocol, depth + 1, factor)
	report = StepReport(
		first.iterations + second.iterations,
		second.residual_norm,
		first.initial_norm,
		first.wall_time + second.wall_time,
		rejected=True,
		dt=dt,
	)
	return end, report

def integrate(tissue, state, duration, config, protocol=None, callback=None):
	"""
	Advance the state by `duration` in steps of config.dt and return the final state.
	`callback(state, report)` is called after every accepted step. Step times are kept on the exact grid t0 + n*dt.
	One factorization is shared by all steps.
	"""
	t0 = state.t
	dt = config.dt
	factor = Factorization(config)
	for n in range(1, int(round(duration / dt)) + 1):
		state, report = advance(tissue, state, dt, config, protocol, factor=factor)
		state = state.replace(t=t0 + n * dt)
		if callback is not None:
			callback(state, report)
	log.debug("Integrated %g s with %i factorizations", duration, factor.count)
	return state

def _membrane_balance(tissue, membrane):
	"""
	Solve the uniform steady state of one membrane facing the bath.
	Unknowns are the intracellular concentrations and the membrane potential; every species that can cross has zero
	net flux, species nothing moves keep their initial value, and the net charge of the content is unchanged.
	"""
	params = tissue.params
	VT = tissue.VT
	bath = tissue.bath
	c0 = np.array(params.initial(membrane))
	charge = Z @ c0
	inert = [is_inert(membrane, i, params) for i in range(3)]
	g = np.array(conductances(membrane, params, steady_state(params.V_rest, params.V_rest)), dtype=float)
	g_ref = max(g.sum(), 1e-12)
	E = VT / Z * np.log(bath / c0)
	V0 = float(g @ E / g.sum()) if g.sum() > 0 else params.V_rest

	def equations(y):
		c_in = np.exp(y[:3])
		V = y[3] * VT
		gating = steady_state(V, params.V_rest) if membrane == AX else None
		site = MembraneSite(membrane, c_in, bath, V, gating)
		out = np.empty(4)
		for i in range(3):
			if inert[i]:
				out[i] = y[i] - np.log(c0[i])
			else:
				out[i] = total_membrane_flux(i, site, 0.0, params).total * ELEMENTARY_CHARGE / (g_ref * VT)
		out[3] = (Z @ c_in - charge) / c0.sum()
		return out

	solution = optimize.root(equations, np.append(np.log(c0), V0 / VT), method="hybr", options={"xtol": 1e-13})
	error = _norm(equations(solution.x))
	if not np.all(np.isfinite(solution.x)) or error > 1e-9:
		raise RestStateError("No resting balance for the %s membrane: %s (residual %.3e)" % (COMPARTMENTS[membrane], solution.message, error))
	return np.exp(solution.x[:3]), solution.x[3] * VT

def initial_state(tissue):
	"""Return the configured initial concentrations with zero potentials, resting gates and electroneutralizing background charge."""
	params = tissue.params
	n = tissue.n_cells
	c = np.empty((3, 3, n))
	for k in range(3):
		c[k] = np.array(params.initial(k))[:, None]
	phi = np.zeros((3, n))
	gating = steady_state(np.zeros(n), params.V_rest)
	return TridomainState(c, phi, gating, background_charge(c))

def find_rest_state(tissue, config):
	"""
	Return a steady state of the unstimulated system.
	Each membrane is first balanced against the bath as a uniform 0-D problem; the result is then stepped with the full
	solver until max |dV/dt| < 1e-6 V/s and the largest relative concentration change per step is below 1e-10.
	The background charge is fixed from the balanced composition, so the state is electroneutral to rounding.
	Raise RestStateError if this does not happen within config.rest_horizon.
	"""
	params = tissue.params
	state = initial_state(tissue)
	c = state.c.copy()
	phi = state.phi.copy()
	for m in MEMBRANES:
		c_m, V = _membrane_balance(tissue, m)
		c[m] = c_m[:, None]
		phi[m] = V
		log.info("Resting %s membrane: V = %.3f mV, c = %s mM", COMPARTMENTS[m], V * 1e3, ", ".join("%.4g" % x for x in c_m))
	state = TridomainState(c, phi, steady_state(phi[AX] - phi[EX], params.V_rest), background_charge(c))

	dt = config.dt
	factor = Factorization(config)
	drift = {}
	for steps in range(1, int(np.ceil(config.rest_horizon / dt)) + 1):
		new, _ = advance(tissue, state, dt, config, factor=factor)
		drift = {
			"dVdt": max(_norm(new.membrane_potential(m) - state.membrane_potential(m)) for m in MEMBRANES) / dt,
			"dc": _norm((new.c - state.c) / state.c),
		}
		state = new
		if drift["dVdt"] < REST_DVDT and drift["dc"] < REST_DC:
			log.info("Rest state settled after %i steps", steps)
			return state.replace(t=0.0)
	raise RestStateError(
		"Rest state did not settle within %g s: max |dV/dt| = %.3e V/s, max relative dc per step = %.3e" % (config.rest_horizon, drift.get("dVdt", np.nan), drift.get("dc", np.nan)),
		drift=drift,
	)

def random_admissible_state(tissue, rng):
	"""
	Return a random state with positive concentrations within 20% of the initial ones.
	Potentials climb by about 4 mV per cell index so that no face sits near a change of upwind direction.
	"""
	params = tissue.params
	mesh = tissue.mesh
	n = tissue.n_cells
	index = np.arange(n) // mesh.Nr + np.arange(n) % mesh.Nr
	c = np.empty((3, 3, n))
	phi = np.empty((3, n))
	for k, offset in enumerate((-70e-3, -80e-3, 5e-3)):
		c[k] = np.array(params.initial(k))[:, None] * rng.uniform(0.8, 1.2, (3, n))
		phi[k] = offset + 4e-3 * index + 1e-3 * rng.uniform(0.0, 1.0, n)
	gating = GatingState(*rng.uniform(0.05, 0.95, (3, n)))
	return TridomainState(c, phi, gating, background_charge(c))

def jacobian_check(tissue, state, dt, state_prev=None, h=1e-5, floor=1e-6):
	"""
	Return the largest relative difference between the analytic Newton Jacobian and central finite differences with
	relative step h, over the entries larger than `floor` times the largest entry.
	Raise ValueError on meshes of more than 64 cells.
	"""
	if tissue.n_cells > 64:
		raise ValueError("Jacobian check needs a mesh of at most 64 cells, got %i" % tissue.n_cells)
	if state_prev is None:
		state_prev = state
	system = _System(tissue, state_prev, state, dt)
	x0 = _pack(state)
	analytic = system.jacobian(x0).toarray()
	typical = np.concatenate([np.abs(x0[:system.n_conc]) + 1.0, np.abs(x0[system.n_conc:]) + tissue.VT])
	numeric = np.empty_like(analytic)
	for j in range(x0.size):
		delta = h * typical[j]
		up = x0.copy()
		up[j] += delta
		down = x0.copy()
		down[j] -= delta
		numeric[:, j] = (system.residual(up) - system.residual(down)) / (2 * delta)
	magnitude = np.maximum(np.abs(analytic), np.abs(numeric))
	significant = magnitude > floor * magnitude.max()
	return float(np.max(np.abs(analytic - numeric)[significant] / magnitude[significant]))

def singular_blocks(tissue, state, dt):
	"""Return the names of the Jacobian row blocks with an all-zero row at `state`."""
	return null_blocks(residual_jacobian(tissue, state, state, dt), tissue.n_cells)
