"""Stimulation experiments on the nerve in its bath, and the capacitive/conductive comparison."""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ..numerics.mesh import build_mesh
from ..numerics.solver import find_rest_state, integrate
from ..numerics.transport import StimulusProtocol, Tissue, background_charge
from ..physics.membrane import nernst_potential
from ..physics.params import AX, COMPARTMENTS, EX, GL, K, MEMBRANES, SPECIES, VALENCE

log = logging.getLogger(__name__)

CAPACITIVE = "capacitive"
CONDUCTIVE = "conductive"
# largest relative peak difference at which the two membrane models count as agreeing
AGREEMENT = 0.10

TIME_COLUMN = "t_s"

def trace_columns(n_probes):
	columns = [TIME_COLUMN]
	for p in range(n_probes):
		columns += ["V_ax_V@p%i" % p, "V_gl_V@p%i" % p, "cK_ex_mM@p%i" % p]
	return columns

@dataclass
class ScenarioResult:
	# branch label -> trace DataFrame
	traces: dict
	# branch label -> final state
	final_states: dict
	rest_state: object
	tissue: Tissue
	# branch label -> digest of the state the branch started from
	start_digests: dict = field(default_factory=dict)

	@property
	def rest_digest(self):
		return self.rest_state.digest()

def build_tissue(params, capacitive=True, bath=True):
	mesh = build_mesh(params.R, params.L, params.Nr, params.Nz, bath=bath)
	return Tissue(params, mesh, capacitive=capacitive)

def build_protocol(params, scenario):
	count = 0 if scenario.mode == "rest" else scenario.count
	return StimulusProtocol(
		amplitude=params.I_shock,
		onset=scenario.onset,
		duration=scenario.duration,
		period=scenario.period,
		count=count,
		length=scenario.stimulus_length,
		carrier=SPECIES.index(scenario.carrier),
	)

class TraceRecorder:
	"""Samples the probes on accepted steps, at most once per cadence. Rows are never interpolated."""
	def __init__(self, tissue, probes, cadence):
		self.cells = [tissue.mesh.locate(r, z) for r, z in probes]
		self.cadence = cadence
		self.rows = []
		self.next_time = None
		self.start_digest = None

	def __call__(self, state, report=None):
		# slack so rounding in t never skips a sample
		if self.next_time is not None and state.t < self.next_time - 1e-6 * self.cadence:
			return
		if not self.rows:
			self.start_digest = state.digest()
		row = [state.t]
		V_ax = state.membrane_potential(AX)
		V_gl = state.membrane_potential(GL)
		for cell in self.cells:
			row += [V_ax[cell], V_gl[cell], state.c[EX, K, cell]]
		self.rows.append(row)
		self.next_time = state.t + self.cadence

	def frame(self):
		return pd.DataFrame(self.rows, columns=trace_columns(len(self.cells)), dtype=float)

def run_branch(tissue, rest, protocol, scenario, solver):
	"""Run one membrane model from the rest state and return (traces, final state, digest of the starting state)."""
	recorder = TraceRecorder(tissue, scenario.probes, scenario.cadence)
	recorder(rest)
	final = integrate(tissue, rest, scenario.t_end, solver, protocol, callback=recorder)
	return recorder.frame(), final, recorder.start_digest

def run_scenario(config):
	"""
	Find the rest state and run the configured experiment from it.
	In comparison mode both membrane models start from the same rest state.
	Solver failures propagate as SolverError carrying the simulated time.
	"""
	params, scenario, solver = config.params, config.scenario, config.solver
	tissue = build_tissue(params, capacitive=scenario.capacitive)
	rest = find_rest_state(tissue, solver)
	protocol = build_protocol(params, scenario)
	if scenario.mode == "comparison":
		branches = {CAPACITIVE: tissue.with_capacitive(True), CONDUCTIVE: tissue.with_capacitive(False)}
	else:
		branches = {CAPACITIVE if scenario.capacitive else CONDUCTIVE: tissue}

	traces = {}
	finals = {}
	starts = {}
	for label, branch in branches.items():
		log.info("Running %s %s branch to t = %g s", scenario.mode, label, scenario.t_end)
		traces[label], finals[label], starts[label] = run_branch(branch, rest, protocol, scenario, solver)
	return ScenarioResult(traces, finals, rest, tissue, starts)

def peak_excursions(frame, probe=0):
	"""Return the largest deviation from the first row of V_ax, V_gl and cK_ex at a probe."""
	excursions = {}
	for name in ("V_ax_V", "V_gl_V", "cK_ex_mM"):
		column = frame["%s@p%i" % (name, probe)].to_numpy()
		deviation = column - column[0]
		excursions[name] = float(deviation[np.argmax(np.abs(deviation))]) if len(column) else 0.0
	return excursions

def compare_branches(result, probe=0):
	"""
	Return the relative difference of the capacitive and conductive peak excursions at a probe, per quantity, and
	whether all of them stay within AGREEMENT.
	"""
	capacitive = peak_excursions(result.traces[CAPACITIVE], probe)
	conductive = peak_excursions(result.traces[CONDUCTIVE], probe)
	differences = {}
	for name in capacitive:
		scale = max(abs(capacitive[name]), abs(conductive[name]))
		differences[name] = abs(capacitive[name] - conductive[name]) / scale if scale else 0.0
	return differences, all(d <= AGREEMENT for d in differences.values())

def rest_report(state, tissue):
	"""Return a plain-text table describing a rest state at its first cell."""
	params = tissue.params
	cell = 0
	lines = ["%-4s %12s %12s %12s %12s %14s" % ("", "Na (mM)", "K (mM)", "Cl (mM)", "phi (mV)", "a (C/m^3)")]
	for k, name in enumerate(COMPARTMENTS):
		c = state.c[k, :, cell]
		lines.append("%-4s %12.6g %12.6g %12.6g %12.6g %14.6g" % (name, c[0], c[1], c[2], state.phi[k, cell] * 1e3, state.a[k, cell]))
	lines.append("")
	lines.append("%-4s %12s %12s %12s %12s" % ("", "V (mV)", "E_Na (mV)", "E_K (mV)", "E_Cl (mV)"))
	for m in MEMBRANES:
		E = [nernst_potential(state.c[EX, i, cell], state.c[m, i, cell], VALENCE[i], params.constants, SPECIES[i]) for i in range(3)]
		lines.append("%-4s %12.6g %12.6g %12.6g %12.6g" % (COMPARTMENTS[m], state.membrane_potential(m)[cell] * 1e3, E[0] * 1e3, E[1] * 1e3, E[2] * 1e3))
	defect = np.max(np.abs(state.a - background_charge(state.c)))
	lines.append("")
	lines.append("largest charge imbalance: %.3g C/m^3" % defect)
	return "\n".join(lines)
