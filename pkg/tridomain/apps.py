from django.apps import AppConfig

class TridomainConfig(AppConfig):
	name = "tridomain"

	def ready(self):
		from . import checks
