from tridomain.checks import check_capacitive_partition, check_divergence_theorem, check_jacobian, check_nernst
from tridomain.tests.setup_testcase import TestCase

class SelfTests(TestCase):
	def test_all_pass(self):
		for check in (check_capacitive_partition, check_nernst, check_divergence_theorem, check_jacobian):
			self.assertEqual(check(None), [], check.__name__)
