"""
Physical constants, the model parameter set with its two calibration profiles, and config file ingestion.

Internally every quantity is SI: concentrations in mol/m^3 (numerically equal to mM), potentials in V, times in s.
Config files are INI-style text:

	profile = "new"              # or "previous"; selects the calibration column used as defaults

	[parameters]
	C_m = 7.5e-3
	lambda = 0.5, 0.25, 0.25

	[bath]
	K = 3 mM

	[scenario]
	mode = comparison
	onset = 1 ms
	probes = (7.5e-5, 1.5e-3), (7.5e-5, 2.5e-3)

Numbers accept the unit suffixes mM, mV and ms on keys of the matching kind only.
"""
import configparser
import logging
import re
from dataclasses import dataclass, field, fields, replace

from django.core.exceptions import ValidationError
from scipy import constants as codata

log = logging.getLogger(__name__)

AX, GL, EX = 0, 1, 2
COMPARTMENTS = ("ax", "gl", "ex")
MEMBRANES = (AX, GL)
NA, K, CL = 0, 1, 2
SPECIES = ("Na", "K", "Cl")
VALENCE = (1, 1, -1)

ELEMENTARY_CHARGE = codata.e
BOLTZMANN = codata.k
AVOGADRO = codata.N_A
FARADAY = ELEMENTARY_CHARGE * AVOGADRO

PROFILES = ("new", "previous")
MODES = ("rest", "single_ap", "train", "comparison")
FORMATS = ("csv", "svg")
LINEAR_SOLVERS = ("direct", "gmres")

TABULATED = "paper:Table1"
STATED = "paper:text"
DEFAULT = "default"
OVERRIDE = "override"

# The calibration columns. "new" values are the field defaults below.
PREVIOUS_PROFILE = {
	"M_ax": 5.98e6,
	"I_ax1": 9.56e-4,
	"I_ax2": 1.3e-4,
	"g_leak_Na": 4.8e-3,
	"g_leak_K": 2.2e-2,
	"gbar_Na": 13.57,
	"gbar_K": 2.945,
	"g_ax_Cl": 0.15,
	"I_shock": 3e-3,
}

_UNITS = {
	"mM": ("conc", 1.0),
	"mV": ("volt", 1e-3),
	"ms": ("time", 1e-3),
}
_NUMBER = re.compile(r"^([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-z]*)$")
_PAIR = re.compile(r"\(([^()]*)\)")
_TRUE = ("true", "yes", "on", "1")
_FALSE = ("false", "no", "off", "0")
_TOP = "__top__"

class ConfigError(ValueError):
	"""A config file could not be parsed. `key` names the offending entry."""
	def __init__(self, key, message):
		super().__init__("%s: %s" % (key, message))
		self.key = key

def _param(default, section, kind="float", source=DEFAULT, key=None):
	return field(default=default, metadata={"section": section, "kind": kind, "source": source, "key": key})

def config_key(f):
	"""Return the name a dataclass field is spelled with in config files."""
	return f.metadata.get("key") or f.name

@dataclass(frozen=True)
class PhysicalConstants:
	e: float = ELEMENTARY_CHARGE
	k_B: float = BOLTZMANN
	T: float = 293.15

def thermal_voltage(constants):
	"""
	Return k_B*T/e in volts.
	Raise ValueError if the temperature is not positive.
	"""
	if not constants.T > 0:
		raise ValueError("Temperature must be positive, got %s K" % constants.T)
	return constants.k_B * constants.T / constants.e

@dataclass(frozen=True)
class IonSpecies:
	name: str
	z: int
	# effective diffusivity in (ax, gl, ex), m^2/s
	D: tuple

@dataclass(frozen=True)
class ParameterSet:
	"""
	The resolved model parameters.
	Defaults are the recalibrated column of the parameter table; the "previous" profile swaps in the original column.
	"""
	profile: str = _param("new", "parameters", kind="str")
	M_ax: float = _param(2.392e5, "parameters", source=TABULATED)
	M_gl: float = _param(2.392e5, "parameters")
	I_ax1: float = _param(2.39e-2, "parameters", source=TABULATED)
	I_ax2: float = _param(3.25e-3, "parameters", source=TABULATED)
	g_leak_Na: float = _param(1.2e-1, "parameters", source=TABULATED)
	g_leak_K: float = _param(5.5e-1, "parameters", source=TABULATED)
	g_ax_Cl: float = _param(3.75, "parameters", source=TABULATED)
	g_gl_Cl: float = _param(0.0, "parameters")
	gbar_Na: float = _param(3.393e2, "parameters", source=TABULATED)
	gbar_K: float = _param(7.364e1, "parameters", source=TABULATED)
	I_shock: float = _param(7.5e-2, "parameters", source=TABULATED)
	C_m: float = _param(7.5e-3, "parameters", source=STATED)
	lam: tuple = _param((1 / 3, 1 / 3, 1 / 3), "parameters", kind="floats", source=STATED, key="lambda")
	eta_ax: float = _param(0.4, "parameters")
	eta_gl: float = _param(0.4, "parameters")
	eta_ex: float = _param(0.2, "parameters")
	T: float = _param(293.15, "parameters")
	V_rest: float = _param(-70e-3, "parameters", kind="volt")
	K_Na_pump: float = _param(10.0, "parameters", kind="conc")
	K_K_pump: float = _param(1.5, "parameters", kind="conc")
	D_Na: float = _param(1.33e-9, "parameters")
	D_K: float = _param(1.96e-9, "parameters")
	D_Cl: float = _param(2.03e-9, "parameters")
	tortuosity_ax: float = _param(1.0, "parameters")
	tortuosity_gl: float = _param(3.2, "parameters")
	tortuosity_ex: float = _param(1.6, "parameters")
	R: float = _param(1.5e-4, "geometry")
	L: float = _param(3e-3, "geometry")
	Nr: int = _param(8, "geometry", kind="int")
	Nz: int = _param(32, "geometry", kind="int")
	bath_Na: float = _param(120.0, "bath", kind="conc", key="Na")
	bath_K: float = _param(3.0, "bath", kind="conc", source=STATED, key="K")
	bath_Cl: float = _param(123.0, "bath", kind="conc", key="Cl")
	ax_Na: float = _param(15.0, "initial", kind="conc")
	ax_K: float = _param(100.0, "initial", kind="conc")
	ax_Cl: float = _param(10.0, "initial", kind="conc")
	gl_Na: float = _param(15.0, "initial", kind="conc")
	gl_K: float = _param(100.0, "initial", kind="conc")
	gl_Cl: float = _param(10.0, "initial", kind="conc")
	sources: tuple = field(default=(), compare=False, repr=False)

	@property
	def constants(self):
		return PhysicalConstants(T=self.T)

	@property
	def eta(self):
		return (self.eta_ax, self.eta_gl, self.eta_ex)

	@property
	def bath(self):
		return (self.bath_Na, self.bath_K, self.bath_Cl)

	def initial(self, compartment):
		"""Return the initial (Na, K, Cl) concentrations of a compartment; the extracellular space starts at the bath."""
		if compartment == EX:
			return self.bath
		prefix = COMPARTMENTS[compartment]
		return tuple(getattr(self, "%s_%s" % (prefix, name)) for name in SPECIES)

	def pump_strength(self, membrane):
		return self.I_ax1 if membrane == AX else self.I_ax2

	def species(self):
		free = (self.D_Na, self.D_K, self.D_Cl)
		tortuosity = (self.tortuosity_ax, self.tortuosity_gl, self.tortuosity_ex)
		return tuple(IonSpecies(name, z, tuple(d / t ** 2 for t in tortuosity)) for name, z, d in zip(SPECIES, VALENCE, free))

	def errors(self):
		errors = {}
		def add(key, message):
			errors.setdefault(key, []).append(message)

		if self.profile not in PROFILES:
			add("profile", "Unknown profile %r, expected one of %s." % (self.profile, ", ".join(PROFILES)))
		for name in ("M_ax", "M_gl", "I_ax1", "I_ax2", "g_leak_Na", "g_leak_K", "g_ax_Cl", "g_gl_Cl", "gbar_Na", "gbar_K", "I_shock", "C_m"):
			if not getattr(self, name) >= 0:
				add(name, "Must be non-negative.")
		if len(self.lam) != 3:
			add("lambda", "Needs one entry per species, got %i." % len(self.lam))
		else:
			if any(not 0 <= x <= 1 for x in self.lam):
				add("lambda", "Entries must lie in [0, 1].")
			if abs(sum(self.lam) - 1) > 1e-12:
				add("lambda", "Entries must sum to 1, got %r." % sum(self.lam))
		for name in ("eta_ax", "eta_gl", "eta_ex"):
			if not 0 < getattr(self, name) < 1:
				add(name, "Must lie in (0, 1).")
		if abs(sum(self.eta) - 1) > 1e-12:
			add("eta_ex", "eta_ax + eta_gl + eta_ex must equal 1, got %r." % sum(self.eta))
		if not self.T > 0:
			add("T", "Must be positive.")
		for name in ("K_Na_pump", "K_K_pump", "D_Na", "D_K", "D_Cl", "tortuosity_ax", "tortuosity_gl", "tortuosity_ex", "R", "L"):
			if not getattr(self, name) > 0:
				add(name, "Must be positive.")
		if self.Nr < 1:
			add("Nr", "Must be at least 1.")
		if self.Nz < 2:
			add("Nz", "Must be at least 2.")
		for name in ("bath_Na", "bath_K", "bath_Cl", "ax_Na", "ax_K", "ax_Cl", "gl_Na", "gl_K", "gl_Cl"):
			if not getattr(self, name) > 0:
				add(name, "Concentrations must be positive.")
		charge = sum(z * c for z, c in zip(VALENCE, self.bath))
		if abs(charge) > 1e-9 * sum(self.bath):
			add("bath", "Bath must be electroneutral, net charge is %r mol/m^3." % charge)
		return errors

	def clean(self):
		"""Raise ValidationError keyed by config key if an invariant is violated."""
		errors = self.errors()
		if errors:
			raise ValidationError(errors)

@dataclass(frozen=True)
class ScenarioConfig:
	mode: str = _param("single_ap", "scenario", kind="str")
	onset: float = _param(1e-3, "scenario", kind="time")
	duration: float = _param(5e-3, "scenario", kind="time")
	period: float = _param(50e-3, "scenario", kind="time")
	# None means the mode's default
	count: int = _param(None, "scenario", kind="int")
	t_end: float = _param(None, "scenario", kind="time")
	# None means a single probe at mid-radius, mid-length
	probes: tuple = _param(None, "scenario", kind="probes")
	# None means the mode's default
	cadence: float = _param(None, "scenario", kind="time")
	output_dir: str = _param("output", "scenario", kind="str")
	formats: tuple = _param(FORMATS, "scenario", kind="strs")
	capacitive: bool = _param(True, "scenario", kind="bool")
	# None means L/4
	stimulus_length: float = _param(None, "scenario")
	carrier: str = _param("K", "scenario", kind="str")

	def errors(self):
		errors = {}
		def add(key, message):
			errors.setdefault(key, []).append(message)

		if self.mode not in MODES:
			add("mode", "Unknown mode %r, expected one of %s." % (self.mode, ", ".join(MODES)))
		for name in ("onset", "duration", "period", "t_end"):
			if not getattr(self, name) >= 0:
				add(name, "Must be non-negative.")
		if self.count < 0:
			add("count", "Must be non-negative.")
		if not self.cadence > 0:
			add("cadence", "Must be positive.")
		if any(f not in FORMATS for f in self.formats):
			add("formats", "Supported formats are %s." % ", ".join(FORMATS))
		if self.carrier not in SPECIES:
			add("carrier", "Unknown species %r." % self.carrier)
		if not self.stimulus_length > 0:
			add("stimulus_length", "Must be positive.")
		return errors

@dataclass(frozen=True)
class SolverConfig:
	dt: float = _param(1e-5, "solver", kind="time")
	newton_tol: float = _param(1e-10, "solver")
	newton_atol: float = _param(1e-10, "solver", kind="conc")
	newton_max_iter: int = _param(20, "solver", kind="int")
	linear_solver: str = _param("direct", "solver", kind="str")
	linear_tol: float = _param(1e-12, "solver")
	max_time: float = _param(100.0, "solver", kind="time")
	max_halvings: int = _param(6, "solver", kind="int")
	rest_horizon: float = _param(1.0, "solver", kind="time")

	def errors(self):
		errors = {}
		def add(key, message):
			errors.setdefault(key, []).append(message)

		if not self.dt > 0:
			add("dt", "Must be positive.")
		for name in ("newton_tol", "linear_tol"):
			if not 0 < getattr(self, name) < 1:
				add(name, "Must lie in (0, 1).")
		if not self.newton_atol > 0:
			add("newton_atol", "Must be positive.")
		if self.newton_max_iter < 1:
			add("newton_max_iter", "Must be at least 1.")
		if self.max_halvings < 0:
			add("max_halvings", "Must be non-negative.")
		if self.linear_solver not in LINEAR_SOLVERS:
			add("linear_solver", "Expected one of %s." % ", ".join(LINEAR_SOLVERS))
		if not self.max_time > 0:
			add("max_time", "Must be positive.")
		if not self.rest_horizon > 0:
			add("rest_horizon", "Must be positive.")
		return errors

@dataclass(frozen=True)
class Config:
	params: ParameterSet
	scenario: ScenarioConfig
	solver: SolverConfig

_MODE_DEFAULTS = {
	"rest": {"count": 0, "t_end": 10.0, "cadence": 1e-2},
	"single_ap": {"count": 1, "t_end": 0.1, "cadence": 1e-4},
	"train": {"count": 10, "t_end": 0.6, "cadence": 1e-4},
	"comparison": {"count": 1, "t_end": 0.1, "cadence": 1e-4},
}
# a flat trace needs no fine steps
_MODE_SOLVER_DEFAULTS = {
	"rest": {"dt": 1e-3},
}

def _parse_number(key, text, kind):
	match = _NUMBER.match(text.strip())
	if match is None:
		raise ConfigError(key, "Expected a number, got %r." % text)
	number, suffix = match.groups()
	if not suffix:
		return float(number)
	if suffix not in _UNITS:
		raise ConfigError(key, "Unknown unit %r." % suffix)
	unit_kind, scale = _UNITS[suffix]
	if unit_kind != kind:
		raise ConfigError(key, "Unit %s does not apply to this key." % suffix)
	return float(number) * scale

def _unquote(text):
	text = text.strip()
	if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
		return text[1:-1]
	return text

def _parse_value(key, text, kind):
	text = text.strip()
	if kind in ("float", "conc", "volt", "time"):
		if kind == "float" and text.lower() == "none":
			return None
		return _parse_number(key, text, kind)
	if kind == "int":
		if text.lower() == "none":
			return None
		try:
			return int(text)
		except ValueError:
			raise ConfigError(key, "Expected an integer, got %r." % text)
	if kind == "str":
		return _unquote(text)
	if kind == "bool":
		if text.lower() in _TRUE:
			return True
		if text.lower() in _FALSE:
			return False
		raise ConfigError(key, "Expected a boolean, got %r." % text)
	if kind == "floats":
		items = text.strip("()[] ").split(",")
		return tuple(_parse_number(key, item, "float") for item in items if item.strip())
	if kind == "strs":
		return tuple(_unquote(item) for item in text.strip("()[] ").split(",") if item.strip())
	if kind == "probes":
		pairs = _PAIR.findall(text)
		if _PAIR.sub("", text).strip(" ,[]"):
			raise ConfigError(key, "Expected a list of (r, z) pairs.")
		probes = []
		for pair in pairs:
			values = [item for item in pair.split(",") if item.strip()]
			if len(values) != 2:
				raise ConfigError(key, "Each probe needs exactly two coordinates, got %r." % pair)
			probes.append(tuple(_parse_number(key, value, "float") for value in values))
		return tuple(probes)
	raise AssertionError(kind)

def _read_sections(text):
	parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"), default_section="__defaults__")
	parser.optionxform = str
	try:
		parser.read_string("[%s]\n%s" % (_TOP, text))
	except configparser.ParsingError as e:
		raise ConfigError(e.errors[0][1].strip() if e.errors else "<file>", "Malformed line.")
	except configparser.Error as e:
		raise ConfigError(getattr(e, "option", None) or getattr(e, "section", None) or "<file>", str(e))
	return {section: dict(parser.items(section)) for section in parser.sections()}

def _section_fields(cls):
	by_section = {}
	for f in fields(cls):
		if "section" in f.metadata:
			by_section.setdefault(f.metadata["section"], {})[config_key(f)] = f
	return by_section

def _resolve(cls, sections, consumed):
	values = {}
	overridden = set()
	for section, keyed in _section_fields(cls).items():
		given = sections.get(section, {})
		for key, f in keyed.items():
			if key in given:
				values[f.name] = _parse_value(key, given[key], f.metadata["kind"])
				overridden.add(f.name)
				consumed.add((section, key))
	return values, overridden

def parse_config(text, profile=None):
	"""
	Parse config text into a validated Config.
	Raise ConfigError if the text cannot be parsed, and ValidationError if the resolved values violate an invariant.
	"""
	sections = _read_sections(text)
	known = set(_section_fields(ParameterSet)) | set(_section_fields(ScenarioConfig)) | set(_section_fields(SolverConfig)) | {_TOP}
	for section in sections:
		if section not in known:
			raise ConfigError(section, "Unknown section.")
	top = sections.pop(_TOP)
	for key in top:
		if key != "profile":
			raise ConfigError(key, "Only 'profile' may appear before the first section.")
	if "profile" in top:
		sections.setdefault("parameters", {}).setdefault("profile", top["profile"])

	consumed = set()
	param_values, overridden = _resolve(ParameterSet, sections, consumed)
	if profile is not None:
		param_values["profile"] = profile
	chosen = param_values.get("profile", "new")
	if chosen == "previous":
		param_values = {**PREVIOUS_PROFILE, **param_values}
	scenario_values, _ = _resolve(ScenarioConfig, sections, consumed)
	solver_values, _ = _resolve(SolverConfig, sections, consumed)
	for section, given in sections.items():
		for key in given:
			if (section, key) not in consumed:
				raise ConfigError(key, "Unknown key in [%s]." % section)

	sources = []
	for f in fields(ParameterSet):
		if "section" not in f.metadata or f.name == "profile":
			continue
		sources.append((f.name, OVERRIDE if f.name in overridden else f.metadata["source"]))
	params = ParameterSet(**param_values, sources=tuple(sources))

	mode = scenario_values.get("mode", ScenarioConfig.mode)
	for name, value in _MODE_DEFAULTS.get(mode, _MODE_DEFAULTS["single_ap"]).items():
		if scenario_values.get(name) is None:
			scenario_values[name] = value
	for name, value in _MODE_SOLVER_DEFAULTS.get(mode, {}).items():
		solver_values.setdefault(name, value)
	if scenario_values.get("probes") is None:
		scenario_values["probes"] = ((params.R / 2, params.L / 2),)
	if scenario_values.get("stimulus_length") is None:
		scenario_values["stimulus_length"] = params.L / 4
	scenario = ScenarioConfig(**scenario_values)
	solver = SolverConfig(**solver_values)
	config = Config(params, scenario, solver)
	clean_config(config)
	log.info("Loaded config: profile %s, mode %s, %ix%i cells", params.profile, scenario.mode, params.Nr, params.Nz)
	return config

def clean_config(config):
	"""Raise ValidationError with every invariant violation in the config, keyed by config key."""
	params, scenario, solver = config.params, config.scenario, config.solver
	errors = {}
	for part in (params.errors(), scenario.errors(), solver.errors()):
		for key, messages in part.items():
			errors.setdefault(key, []).extend(messages)
	def add(key, message):
		errors.setdefault(key, []).append(message)

	for r, z in scenario.probes:
		if not (0 <= r <= params.R and 0 <= z <= params.L):
			add("probes", "Probe (%g, %g) lies outside the nerve." % (r, z))
	if scenario.cadence < solver.dt:
		add("cadence", "Must not be shorter than the time step.")
	if scenario.stimulus_length > params.L:
		add("stimulus_length", "Must not exceed the nerve length.")
	if scenario.t_end > solver.max_time:
		add("t_end", "Exceeds max_time = %g s." % solver.max_time)
	if errors:
		raise ValidationError(errors)

def load_config(path, profile=None):
	"""Read and validate a config file. An empty file yields the defaults."""
	with open(path, encoding="utf-8") as file:
		return parse_config(file.read(), profile=profile)

def default_config(profile=None, **scenario):
	"""Return the all-defaults config, with optional scenario overrides."""
	config = parse_config("", profile=profile)
	if scenario:
		config = replace(config, scenario=replace(config.scenario, **scenario))
		clean_config(config)
	return config

def _format_value(value, kind):
	if kind == "str":
		return '"%s"' % value
	if kind == "bool":
		return "true" if value else "false"
	if kind == "int":
		return str(value)
	if kind == "floats":
		return ", ".join(repr(float(v)) for v in value)
	if kind == "strs":
		return ", ".join(value)
	if kind == "probes":
		return ", ".join("(%r, %r)" % (float(r), float(z)) for r, z in value)
	return repr(float(value))

def dump_config(config):
	"""Serialize a config with every field spelled out in SI units, such that parse_config gives it back unchanged."""
	lines = ['profile = "%s"' % config.params.profile]
	for part in (config.params, config.scenario, config.solver):
		for section, keyed in _section_fields(type(part)).items():
			lines.append("")
			lines.append("[%s]" % section)
			for key, f in keyed.items():
				if f.name == "profile":
					continue
				lines.append("%s = %s" % (key, _format_value(getattr(part, f.name), f.metadata["kind"])))
	return "\n".join(lines) + "\n"

def provenance(params):
	"""Return a mapping of parameter name to where its value came from."""
	sources = dict(params.sources)
	for f in fields(params):
		if "section" in f.metadata and f.name != "profile" and f.name not in sources:
			sources[f.name] = f.metadata["source"]
	return sources

def rescale_membrane_density(params, M_ax):
	"""
	Return params with the axon membrane area density set to M_ax.
	Every per-area quantity of the calibration table is scaled by the inverse ratio, so all per-volume products with M_ax are unchanged.
	"""
	if not M_ax > 0:
		raise ValueError("M_ax must be positive")
	ratio = params.M_ax / M_ax
	scaled = {name: getattr(params, name) * ratio for name in PREVIOUS_PROFILE if name != "M_ax"}
	return replace(params, M_ax=M_ax, **scaled)

def calibration_products(params):
	return {"M_ax*%s" % name: params.M_ax * getattr(params, name) for name in PREVIOUS_PROFILE if name != "M_ax"}
