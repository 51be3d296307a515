from django.conf import settings

from ...physics.params import PROFILES
from ...services.output import write_outputs
from ...services.scenarios import compare_branches, run_scenario
from ._base import SolverError, TridomainCommand

class Command(TridomainCommand):
	help = "Run the scenario described by a config file and write its traces."

	def add_arguments(self, parser):
		parser.add_argument("config")
		parser.add_argument("--output", help="Output directory. Overrides NERVESIM_OUTPUT_DIR and the config file.")
		parser.add_argument("--profile", choices=PROFILES, help="Calibration profile used for defaults.")
		parser.add_argument("--seed", type=int, help="Reserved for stochastic channel models. The model is deterministic, so this has no effect.")

	def handle(self, *args, **options):
		config = self.load(options["config"], options["profile"])
		directory = options["output"] or settings.TRIDOMAIN_OUTPUT_DIR or config.scenario.output_dir
		try:
			result = run_scenario(config)
		except SolverError as e:
			raise self.solver_failed(e)
		for path in write_outputs(result, directory, config.scenario.formats):
			self.stdout.write(path)
		if config.scenario.mode == "comparison":
			differences, agrees = compare_branches(result)
			for name, difference in differences.items():
				self.stdout.write("peak %s differs by %.2f%%" % (name, 100 * difference))
			if agrees:
				self.stdout.write("capacitive and conductive runs agree")
			else:
				self.stdout.write("capacitive and conductive runs disagree")
