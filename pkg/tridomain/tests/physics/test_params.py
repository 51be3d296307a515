from dataclasses import replace

from django.core.exceptions import ValidationError

from tridomain.physics.params import ConfigError, DEFAULT, OVERRIDE, TABULATED, STATED, PhysicalConstants, calibration_products, default_config, dump_config, parse_config, provenance, rescale_membrane_density, thermal_voltage
from tridomain.tests.setup_testcase import TestCase, cls_setup

@cls_setup
def defaults(cls):
	cls.config = default_config()
	cls.params = cls.config.params

@cls_setup
def previous(cls):
	cls.previous = parse_config('profile = "previous"\n').params

class Defaults(TestCase):
	SETUP = defaults,

	def test_new_profile(self):
		self.assertEqual(self.params.profile, "new")
		self.assertEqual(self.params.M_ax, 2.392e5)
		self.assertEqual(self.params.I_shock, 7.5e-2)
		self.assertEqual(self.params.C_m, 7.5e-3)

	def test_lambda_sums_to_one(self):
		self.assertAlmostEqual(sum(self.params.lam), 1.0, delta=1e-15)

	def test_probe_default(self):
		self.assertEqual(self.config.scenario.probes, ((self.params.R / 2, self.params.L / 2),))

	def test_stimulus_length_default(self):
		self.assertEqual(self.config.scenario.stimulus_length, self.params.L / 4)
		self.assertEqual(self.config.scenario.duration, 5e-3)

	def test_mode_defaults(self):
		self.assertEqual(self.config.scenario.count, 1)
		self.assertEqual(self.config.scenario.t_end, 0.1)
		train = parse_config("[scenario]\nmode = train\n").scenario
		self.assertEqual(train.count, 10)

	def test_rest_mode_steps_coarsely(self):
		rest = parse_config("[scenario]\nmode = rest\n")
		self.assertEqual(rest.solver.dt, 1e-3)
		self.assertEqual(rest.scenario.cadence, 1e-2)
		self.assertEqual(self.config.solver.dt, 1e-5)
		self.assertEqual(self.config.scenario.cadence, 1e-4)

	def test_rest_mode_keeps_given_step(self):
		rest = parse_config("[scenario]\nmode = rest\n[solver]\ndt = 5e-5\n")
		self.assertEqual(rest.solver.dt, 5e-5)

	def test_provenance(self):
		sources = provenance(self.params)
		self.assertEqual(sources["M_ax"], TABULATED)
		self.assertEqual(sources["C_m"], STATED)
		self.assertEqual(sources["eta_ex"], DEFAULT)

	def test_dump_parses_back(self):
		self.assertEqual(parse_config(dump_config(self.config)), self.config)

	def test_thermal_voltage(self):
		self.assertAlmostEqual(thermal_voltage(PhysicalConstants()), 25.2617e-3, delta=1e-7)

	def test_thermal_voltage_zero_temperature(self):
		with self.assertRaises(ValueError):
			thermal_voltage(PhysicalConstants(T=0.0))

class Profiles(TestCase):
	SETUP = defaults, previous

	def test_previous_column(self):
		self.assertEqual(self.previous.profile, "previous")
		self.assertEqual(self.previous.M_ax, 5.98e6)
		self.assertEqual(self.previous.I_shock, 3e-3)
		self.assertEqual(self.previous.g_ax_Cl, 0.15)

	def test_profile_argument_wins(self):
		self.assertEqual(parse_config('profile = "new"\n', profile="previous").params.M_ax, 5.98e6)

	def test_override_within_profile(self):
		params = parse_config('profile = "previous"\n[parameters]\nI_shock = 4e-3\n').params
		self.assertEqual(params.I_shock, 4e-3)
		self.assertEqual(params.M_ax, 5.98e6)
		self.assertEqual(provenance(params)["I_shock"], OVERRIDE)

	def test_calibration_products_agree(self):
		new = calibration_products(self.params)
		old = calibration_products(self.previous)
		self.assertEqual(new.keys(), old.keys())
		for name in new:
			self.assertAlmostEqual(new[name] / old[name], 1.0, delta=1e-3, msg=name)

	def test_rescaling_reproduces_previous_column(self):
		rescaled = rescale_membrane_density(self.params, 5.98e6)
		self.assertEqual(rescaled.M_ax, 5.98e6)
		for name in ("I_ax1", "I_ax2", "g_leak_Na", "g_leak_K", "gbar_Na", "gbar_K", "g_ax_Cl", "I_shock"):
			self.assertAlmostEqual(getattr(rescaled, name) / getattr(self.previous, name), 1.0, delta=1e-3, msg=name)

	def test_rescaling_keeps_products(self):
		rescaled = rescale_membrane_density(self.params, 1e6)
		for name, value in calibration_products(rescaled).items():
			self.assertAlmostEqual(value / calibration_products(self.params)[name], 1.0, delta=1e-12)

	def test_rescaling_rejects_zero(self):
		with self.assertRaises(ValueError):
			rescale_membrane_density(self.params, 0.0)

class Parsing(TestCase):
	def test_unit_suffixes(self):
		config = parse_config("[bath]\nNa = 130 mM\nK = 4 mM\nCl = 134 mM\n[scenario]\nonset = 2 ms\n[parameters]\nV_rest = -65 mV\n")
		self.assertEqual(config.params.bath, (130.0, 4.0, 134.0))
		self.assertAlmostEqual(config.scenario.onset, 2e-3, delta=1e-15)
		self.assertAlmostEqual(config.params.V_rest, -65e-3, delta=1e-15)

	def test_unit_on_wrong_kind(self):
		with self.assertRaises(ConfigError) as context:
			parse_config("[parameters]\nC_m = 3 mM\n")
		self.assertEqual(context.exception.key, "C_m")

	def test_unknown_unit(self):
		with self.assertRaises(ConfigError):
			parse_config("[scenario]\nonset = 2 us\n")

	def test_unknown_key(self):
		with self.assertRaises(ConfigError) as context:
			parse_config("[parameters]\nC_x = 1\n")
		self.assertEqual(context.exception.key, "C_x")

	def test_unknown_section(self):
		with self.assertRaises(ConfigError):
			parse_config("[physics]\nC_m = 1\n")

	def test_top_level_only_profile(self):
		with self.assertRaises(ConfigError):
			parse_config("C_m = 1\n")

	def test_bad_boolean(self):
		with self.assertRaises(ConfigError):
			parse_config("[scenario]\ncapacitive = maybe\n")

	def test_probes(self):
		config = parse_config("[scenario]\nprobes = (7.5e-5, 1.5e-3), (7.5e-5, 2.5e-3)\n")
		self.assertEqual(config.scenario.probes, ((7.5e-5, 1.5e-3), (7.5e-5, 2.5e-3)))

	def test_malformed_probes(self):
		with self.assertRaises(ConfigError):
			parse_config("[scenario]\nprobes = (1e-5, 1e-3, 2e-3)\n")

class Validation(TestCase):
	def assertInvalid(self, text, key):
		with self.assertRaises(ValidationError) as context:
			parse_config(text)
		self.assertIn(key, context.exception.message_dict)

	def test_lambda_sum(self):
		self.assertInvalid("[parameters]\nlambda = 0.5, 0.25, 0.3\n", "lambda")

	def test_lambda_length(self):
		self.assertInvalid("[parameters]\nlambda = 0.5, 0.5\n", "lambda")

	def test_volume_fractions(self):
		self.assertInvalid("[parameters]\neta_ex = 0.3\n", "eta_ex")

	def test_charged_bath(self):
		self.assertInvalid("[bath]\nK = 4 mM\n", "bath")

	def test_negative_conductance(self):
		self.assertInvalid("[parameters]\ng_leak_K = -1\n", "g_leak_K")

	def test_single_slab(self):
		self.assertInvalid("[geometry]\nNz = 1\n", "Nz")

	def test_unknown_profile(self):
		self.assertInvalid('profile = "ancient"\n', "profile")

	def test_probe_outside(self):
		self.assertInvalid("[scenario]\nprobes = (1.0, 1e-3)\n", "probes")

	def test_cadence_below_dt(self):
		self.assertInvalid("[scenario]\ncadence = 1e-6\n", "cadence")

	def test_t_end_beyond_max_time(self):
		self.assertInvalid("[scenario]\nt_end = 200\n", "t_end")

	def test_all_errors_reported(self):
		with self.assertRaises(ValidationError) as context:
			parse_config("[parameters]\nC_m = -1\nT = -5\n")
		self.assertIn("C_m", context.exception.message_dict)
		self.assertIn("T", context.exception.message_dict)

	def test_scenario_override_is_checked(self):
		with self.assertRaises(ValidationError):
			default_config(stimulus_length=1.0)

	def test_clean_accepts_defaults(self):
		replace(default_config().params).clean()
