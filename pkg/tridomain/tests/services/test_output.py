import os
import tempfile

import numpy as np
import pandas as pd

from tridomain.services.output import emit_csv, emit_plot, write_outputs
from tridomain.services.scenarios import CAPACITIVE, CONDUCTIVE, ScenarioResult, trace_columns
from tridomain.tests.setup_testcase import TestCase, setup

def _traces(rows, seed=0):
	rng = np.random.default_rng(seed)
	frame = pd.DataFrame(rng.normal(size=(rows, 4)), columns=trace_columns(1))
	frame[trace_columns(1)[0]] = np.arange(rows) / 3e4
	return frame

@setup
def directory(self):
	self.tmp = tempfile.TemporaryDirectory()
	self.addCleanup(self.tmp.cleanup)
	self.path = lambda name: os.path.join(self.tmp.name, name)

class Csv(TestCase):
	SETUP = directory,

	def test_exact_values(self):
		traces = _traces(5)
		emit_csv(traces, self.path("traces.csv"))
		read = pd.read_csv(self.path("traces.csv"), float_precision="round_trip")
		pd.testing.assert_frame_equal(read, traces, check_exact=True)

	def test_header_only(self):
		emit_csv(pd.DataFrame(columns=trace_columns(1)), self.path("empty.csv"))
		with open(self.path("empty.csv"), newline="") as file:
			self.assertEqual(file.read(), ",".join(trace_columns(1)) + "\n")

	def test_line_endings(self):
		emit_csv(_traces(3), self.path("traces.csv"))
		with open(self.path("traces.csv"), "rb") as file:
			self.assertNotIn(b"\r", file.read())

class Plot(TestCase):
	SETUP = directory,

	def test_deterministic(self):
		traces = _traces(20)
		emit_plot(traces, self.path("a.svg"))
		emit_plot(traces, self.path("b.svg"))
		with open(self.path("a.svg"), "rb") as a, open(self.path("b.svg"), "rb") as b:
			self.assertEqual(a.read(), b.read())

	def test_svg(self):
		emit_plot({CAPACITIVE: _traces(10), CONDUCTIVE: _traces(10, seed=1)}, self.path("c.svg"))
		with open(self.path("c.svg"), encoding="utf-8") as file:
			self.assertIn("<svg", file.read())

	def test_too_few_samples(self):
		with self.assertRaises(ValueError):
			emit_plot(_traces(1), self.path("d.svg"))
		self.assertFalse(os.path.exists(self.path("d.svg")))

class Outputs(TestCase):
	SETUP = directory,

	def test_single_branch(self):
		result = ScenarioResult({CAPACITIVE: _traces(4)}, {}, None, None)
		paths = write_outputs(result, self.path("out"), ("csv", "svg"))
		self.assertEqual([os.path.basename(p) for p in paths], ["traces.csv", "traces.svg"])

	def test_comparison_files(self):
		result = ScenarioResult({CAPACITIVE: _traces(4), CONDUCTIVE: _traces(4, seed=1)}, {}, None, None)
		paths = write_outputs(result, self.path("out"), ("csv",))
		self.assertEqual(sorted(os.path.basename(p) for p in paths), ["traces_capacitive.csv", "traces_conductive.csv"])
