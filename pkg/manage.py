#!/usr/bin/env python
"""Command line of nervesim: run, rest, params, check and test."""
import sys

from tridomain.cli import cli_main

if __name__ == "__main__":
	sys.exit(cli_main(sys.argv[1:]))
