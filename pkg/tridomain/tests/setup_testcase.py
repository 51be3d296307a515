"""Declarative fixtures for the simulation tests, resolved through their `requires` dependencies."""
from django.test import SimpleTestCase

_PER_CLASS = "class"
_PER_TEST = "test"
_kind = {}
_requirements = {}

def _ordered(setups, into=None):
	into = [] if into is None else into
	for setup_ in setups:
		_ordered(_requirements[setup_], into)
		if setup_ not in into:
			into.append(setup_)
	return into

class TestCase(SimpleTestCase):
	"""No database. Setups named in SETUP run in dependency order; class setups once per class, since simulations are slow."""
	SETUP = ()

	@classmethod
	def setUpClass(cls):
		super().setUpClass()
		ordered = _ordered(cls.SETUP)
		cls._per_test = [s for s in ordered if _kind[s] == _PER_TEST]
		for s in ordered:
			if _kind[s] == _PER_CLASS:
				s(cls)

	def setUp(self):
		for s in self._per_test:
			s(self)

def _register(func, kind):
	_kind[func] = kind
	_requirements.setdefault(func, ())
	return func

def cls_setup(func):
	return _register(func, _PER_CLASS)

def setup(func):
	return _register(func, _PER_TEST)

def requires(*deps):
	def decorator(func):
		_requirements[func] = deps
		return func
	return decorator
