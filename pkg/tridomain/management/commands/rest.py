from ...numerics.solver import find_rest_state
from ...physics.params import PROFILES
from ...services.scenarios import build_tissue, rest_report
from ._base import SolverError, TridomainCommand

class Command(TridomainCommand):
	help = "Find the rest state for a config file and print it."

	def add_arguments(self, parser):
		parser.add_argument("config")
		parser.add_argument("--profile", choices=PROFILES)

	def handle(self, *args, **options):
		config = self.load(options["config"], options["profile"])
		tissue = build_tissue(config.params)
		try:
			state = find_rest_state(tissue, config.solver)
		except SolverError as e:
			raise self.solver_failed(e)
		self.stdout.write(rest_report(state, tissue))
