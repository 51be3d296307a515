"""Command-line entry point: run, rest, params and check, with exit codes 0 (ok), 1 (invalid input) and 2 (solver failure)."""
import os
import sys

from django.core.management import execute_from_command_line

def cli_main(argv=None):
	"""Run a subcommand and return its exit code instead of exiting."""
	os.environ.setdefault("DJANGO_SETTINGS_MODULE", "nervesim.settings")
	argv = sys.argv[1:] if argv is None else list(argv)
	try:
		execute_from_command_line(["nervesim"] + argv)
	except SystemExit as e:
		if e.code is None:
			return 0
		return e.code if isinstance(e.code, int) else 1
	return 0

if __name__ == "__main__":
	sys.exit(cli_main())
