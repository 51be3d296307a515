"""
Django settings for the nervesim project.

The project has no database, no web surface and a single app. Django is used for
its settings, logging configuration, management commands, system checks and test runner.
"""

import os

# Build paths inside the project like this: os.path.join(BASE_DIR, ...)
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# Only used by Django internals; nothing here is signed.
SECRET_KEY = "nervesim-local-only"

DEBUG = False

ALLOWED_HOSTS = []

INSTALLED_APPS = [
	"tridomain.apps.TridomainConfig",
]

DATABASES = {}

USE_TZ = True

# Where scenario outputs go when neither the command line nor the config file says otherwise.
TRIDOMAIN_OUTPUT_DIR = os.environ.get("NERVESIM_OUTPUT_DIR")

# Mesh used by the Jacobian self-test of the "check" command.
TRIDOMAIN_CHECK_MESH = (4, 4)

LOGGING = {
	"version": 1,
	"disable_existing_loggers": False,
	"formatters": {
		"simple": {
			"format": "%(asctime)s %(levelname)s %(name)s: %(message)s",
		},
	},
	"handlers": {
		"console": {
			"class": "logging.StreamHandler",
			"formatter": "simple",
		},
	},
	"loggers": {
		"tridomain": {
			"handlers": ["console"],
			"level": os.environ.get("NERVESIM_LOG_LEVEL", "WARNING"),
		},
	},
}
