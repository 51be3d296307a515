"""Trace files: CSV tables and the stacked SVG figure."""
import logging
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .scenarios import TIME_COLUMN

log = logging.getLogger(__name__)

# fixed so that identical traces give byte-identical SVG files
matplotlib.rcParams["svg.hashsalt"] = "nervesim"

PANELS = (
	("V_gl_V", "V_gl (mV)", 1e3),
	("cK_ex_mM", "c_K,ex (mM)", 1.0),
	("V_ax_V", "V_ax (mV)", 1e3),
)

def emit_csv(traces, path):
	"""Write a trace table as CSV with 17 significant digits and LF line endings."""
	traces.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
	log.info("Wrote %s", path)

def emit_plot(traces, path, probe=0):
	"""
	Draw V_gl, extracellular K and V_ax against time in three stacked panels, one curve per run.
	`traces` is a single table or a mapping of run label to table.
	Raise ValueError if a run has fewer than two samples.
	"""
	runs = traces if isinstance(traces, dict) else {None: traces}
	for label, frame in runs.items():
		if len(frame) < 2:
			raise ValueError("Need at least two samples to plot, %s has %i" % (label or "trace", len(frame)))

	figure, axes = plt.subplots(len(PANELS), 1, sharex=True, figsize=(6, 7))
	try:
		for ax, (column, ylabel, scale) in zip(axes, PANELS):
			for label, frame in runs.items():
				ax.plot(frame[TIME_COLUMN] * 1e3, frame["%s@p%i" % (column, probe)] * scale, label=label)
			ax.set_ylabel(ylabel)
		axes[-1].set_xlabel("t (ms)")
		if len(runs) > 1 or None not in runs:
			axes[0].legend()
		figure.tight_layout()
		figure.savefig(path, format="svg", metadata={"Date": None})
	finally:
		plt.close(figure)
	log.info("Wrote %s", path)

def write_outputs(result, directory, formats):
	"""Write the traces of a scenario result into `directory` and return the paths written."""
	os.makedirs(directory, exist_ok=True)
	paths = []
	if "csv" in formats:
		for label, frame in result.traces.items():
			name = "traces_%s.csv" % label if len(result.traces) > 1 else "traces.csv"
			path = os.path.join(directory, name)
			emit_csv(frame, path)
			paths.append(path)
	if "svg" in formats:
		path = os.path.join(directory, "traces.svg")
		emit_plot(result.traces, path)
		paths.append(path)
	return paths
