"""Plumbing shared by the tridomain management commands: config loading and exit codes."""
import sys
from functools import partial

from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from ...numerics.solver import SolverError
from ...physics.params import ConfigError, default_config, load_config

EXIT_INVALID = 1
EXIT_SOLVER = 2

def _usage_error(parser, message):
	if parser.called_from_command_line:
		parser.print_usage(sys.stderr)
		parser.exit(EXIT_INVALID, "%s: error: %s\n" % (parser.prog, message))
	raise CommandError("Error: %s" % message, returncode=EXIT_INVALID)

class TridomainCommand(BaseCommand):
	# the system checks are the "check" command's self-tests; they are not a precondition of the other commands
	requires_system_checks = []

	def create_parser(self, prog_name, subcommand, **kwargs):
		parser = super().create_parser(prog_name, subcommand, **kwargs)
		parser.error = partial(_usage_error, parser)
		return parser

	def load(self, path, profile=None):
		"""Return the validated config at path (the defaults if path is None), or raise CommandError with exit code 1."""
		try:
			if path is None:
				return default_config(profile=profile)
			return load_config(path, profile=profile)
		except OSError as e:
			raise CommandError("Cannot read config: %s" % e, returncode=EXIT_INVALID)
		except ConfigError as e:
			raise CommandError("Invalid config, %s" % e, returncode=EXIT_INVALID)
		except ValidationError as e:
			problems = "; ".join("%s: %s" % (key, " ".join(messages)) for key, messages in e.message_dict.items())
			raise CommandError("Invalid config: %s" % problems, returncode=EXIT_INVALID)

	def solver_failed(self, error):
		return CommandError("Solver failed: %s" % error, returncode=EXIT_SOLVER)

__all__ = ["EXIT_INVALID", "EXIT_SOLVER", "SolverError", "TridomainCommand"]
