from functools import partial

from django.core.management.commands import check

from ._base import _usage_error

class Command(check.Command):
	"""Django's check command, with usage errors mapped to the tridomain exit code for invalid input."""
	def create_parser(self, prog_name, subcommand, **kwargs):
		parser = super().create_parser(prog_name, subcommand, **kwargs)
		parser.error = partial(_usage_error, parser)
		return parser
