from dataclasses import fields

from ...physics.params import PROFILES, calibration_products, config_key, provenance
from ._base import TridomainCommand

UNITS = {
	"M_ax": "1/m",
	"M_gl": "1/m",
	"I_ax1": "A/m^2",
	"I_ax2": "A/m^2",
	"g_leak_Na": "S/m^2",
	"g_leak_K": "S/m^2",
	"g_ax_Cl": "S/m^2",
	"g_gl_Cl": "S/m^2",
	"gbar_Na": "S/m^2",
	"gbar_K": "S/m^2",
	"I_shock": "A/m^2",
	"C_m": "F/m^2",
	"T": "K",
	"V_rest": "V",
	"D_Na": "m^2/s",
	"D_K": "m^2/s",
	"D_Cl": "m^2/s",
	"R": "m",
	"L": "m",
}

class Command(TridomainCommand):
	help = "Print the resolved model parameters with the source of each value."

	def add_arguments(self, parser):
		parser.add_argument("config", nargs="?")
		parser.add_argument("--profile", choices=PROFILES)

	def handle(self, *args, **options):
		params = self.load(options["config"], options["profile"]).params
		sources = provenance(params)
		self.stdout.write("profile = %s" % params.profile)
		for f in fields(params):
			if f.name not in sources:
				continue
			value = getattr(params, f.name)
			if isinstance(value, tuple):
				text = ", ".join("%.6g" % x for x in value)
			else:
				text = "%.6g" % value
			unit = UNITS.get(f.name, "mol/m^3" if f.metadata["kind"] == "conc" else "")
			self.stdout.write("%-14s = %-30s %-8s %s" % (config_key(f) if f.metadata["section"] == "parameters" else "%s.%s" % (f.metadata["section"], config_key(f)), text, unit, sources[f.name]))
		self.stdout.write("")
		for name, value in calibration_products(params).items():
			self.stdout.write("%-14s = %.6g" % (name, value))
